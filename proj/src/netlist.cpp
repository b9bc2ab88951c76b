#include "mpcsim/netlist.hpp"

#include "mpcsim/errors.hpp"

#include <algorithm>
#include <functional>
#include <set>

namespace mpcsim {

const char* to_string(ElementKind kind) {
    switch (kind) {
        case ElementKind::Switch: return "switch";
        case ElementKind::Diode: return "diode";
        case ElementKind::Inductor: return "inductor";
        case ElementKind::Capacitor: return "capacitor";
        case ElementKind::Resistor: return "resistor";
        case ElementKind::VoltageSource: return "voltage-source";
        case ElementKind::CurrentSource: return "current-source";
    }
    return "?";
}

const char* to_string(AttachmentKind kind) {
    switch (kind) {
        case AttachmentKind::VoltageSource: return "voltage-source";
        case AttachmentKind::ResistiveLoad: return "resistive-load";
        case AttachmentKind::CurrentLoad: return "current-load";
        case AttachmentKind::Open: return "open";
    }
    return "?";
}

const char* to_string(InductorStyle style) {
    switch (style) {
        case InductorStyle::MiddleBranches: return "middle-branches";
        case InductorStyle::PlusTop: return "plus-top";
        case InductorStyle::PlusTopAndBottom: return "plus-top-and-bottom";
    }
    return "?";
}

std::vector<NodeId> Netlist::nodes() const {
    std::set<int> seen{0};
    for (const auto& e : elements) {
        seen.insert(e.a.index);
        seen.insert(e.b.index);
    }
    std::vector<NodeId> out;
    out.reserve(seen.size());
    for (int idx : seen) out.push_back(NodeId{idx});
    return out;
}

std::string Netlist::node_name(NodeId n) const {
    if (n.is_ground()) return "0";
    auto it = node_names.find(n.index);
    if (it != node_names.end()) return it->second;
    return "n" + std::to_string(n.index);
}

const Element* Netlist::find(const std::string& id) const {
    for (const auto& e : elements) {
        if (e.id == id) return &e;
    }
    return nullptr;
}

void Netlist::validate() const {
    if (elements.empty()) throw ValidationError("netlist has no elements");

    std::set<std::string> ids;
    for (const auto& e : elements) {
        if (!ids.insert(e.id).second)
            throw ValidationError("duplicate element id '" + e.id + "'");
        if (e.a.index < 0 || e.b.index < 0)
            throw ValidationError("element '" + e.id + "' references a negative node index");
        if (e.a == e.b)
            throw ValidationError("element '" + e.id + "' is short-circuited onto one node");
        switch (e.kind) {
            case ElementKind::Inductor:
            case ElementKind::Capacitor:
            case ElementKind::Resistor:
                if (!(e.value > 0.0))
                    throw ValidationError("element '" + e.id + "' must have a positive value");
                break;
            default:
                break;
        }
    }

    // Switch/diode indices must be distinct and contiguous 1..n.
    std::set<int> sw;
    for (const auto& e : elements) {
        if (e.kind == ElementKind::Switch || e.kind == ElementKind::Diode) {
            if (e.switch_index < 1)
                throw ValidationError("element '" + e.id + "' needs switch_index >= 1");
            if (!sw.insert(e.switch_index).second)
                throw ValidationError("duplicate switch_index " + std::to_string(e.switch_index));
        }
    }
    if (static_cast<int>(sw.size()) != n_switches)
        throw ValidationError("n_switches does not match the number of switch/diode elements");
    if (!sw.empty() && (*sw.begin() != 1 || *sw.rbegin() != n_switches))
        throw ValidationError("switch indices must be contiguous 1..n");

    // Connectivity: union-find over element terminals, rooted at ground.
    auto all = nodes();
    std::map<int, int> parent;
    for (auto n : all) parent[n.index] = n.index;
    std::function<int(int)> root = [&](int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (const auto& e : elements) parent[root(e.a.index)] = root(e.b.index);
    for (auto n : all) {
        if (root(n.index) != root(0))
            throw ValidationError("node " + node_name(n) + " is not connected to ground");
    }
}

void validate_span(const PortSpan& span, int n) {
    if (!(span.top >= 1 && span.top < span.bottom && span.bottom <= n + 1))
        throw ValidationError("span " + std::to_string(span.top) + ".." +
                              std::to_string(span.bottom) + " out of range for n=" +
                              std::to_string(n));
}

void TopologyDescriptor::validate() const {
    if (n < 2) throw ValidationError("need at least two ports besides ground");
    if (!(inductance > 0.0) && inductance_overrides.empty())
        throw ValidationError("descriptor needs a positive inductance");
    if (!(capacitance > 0.0) && capacitance_overrides.empty())
        throw ValidationError("descriptor needs a positive capacitance");
    for (const auto& att : attachments) {
        validate_span(att.span, n);
        switch (att.kind) {
            case AttachmentKind::VoltageSource:
                // Zero-valued sources are allowed (a dead input is a valid
                // operating point); negative stiff ports are not.
                if (att.value < 0.0)
                    throw ValidationError("voltage-source value must be >= 0");
                break;
            case AttachmentKind::ResistiveLoad:
                if (!(att.value > 0.0))
                    throw ValidationError("resistive-load value must be > 0");
                break;
            default:
                break;
        }
    }
}

} // namespace mpcsim
