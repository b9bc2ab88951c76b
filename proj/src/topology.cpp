#include "mpcsim/topology.hpp"

#include "mpcsim/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

namespace mpcsim {

int PortAssignment::input_count() const { return std::popcount(input_mask); }

std::vector<int> PortAssignment::inputs() const {
    std::vector<int> out;
    for (int i = 1; i <= n; ++i)
        if (is_input(i)) out.push_back(i);
    return out;
}

std::vector<int> PortAssignment::outputs() const {
    std::vector<int> out;
    for (int i = 1; i <= n; ++i)
        if (!is_input(i)) out.push_back(i);
    return out;
}

std::vector<PortAssignment> enumerate_port_assignments(int n) {
    if (n < 2) throw ValidationError("need at least two ports besides ground");
    if (n > 30) throw ValidationError("port count too large to enumerate");
    std::vector<PortAssignment> out;
    out.reserve((1u << n) - 2);
    for (int k = 1; k <= n - 1; ++k) {
        for (std::uint32_t mask = 1; mask < (1u << n) - 1u; ++mask) {
            if (std::popcount(mask) == k) out.push_back(PortAssignment{n, mask});
        }
    }
    return out;
}

TopologyDescriptor build_common_ground(int n,
                                       const PortAssignment& assignment,
                                       const std::vector<double>& source_volts,
                                       const std::vector<double>& load_ohms,
                                       double inductance,
                                       double capacitance) {
    if (assignment.n != n) throw ValidationError("assignment was enumerated for a different n");
    const int k = assignment.input_count();
    if (k == 0) throw ValidationError("assignment has no input port");
    if (k == n) throw ValidationError("assignment has no output port");
    if (static_cast<int>(source_volts.size()) != k)
        throw ValidationError("expected one source voltage per input node");
    if (static_cast<int>(load_ohms.size()) != n - k)
        throw ValidationError("expected one load resistance per output node");

    TopologyDescriptor desc;
    desc.n = n;
    desc.inductance = inductance;
    desc.capacitance = capacitance;
    std::size_t si = 0, li = 0;
    for (int node = 1; node <= n; ++node) {
        Attachment att;
        att.span = PortSpan{node, n + 1};
        if (assignment.is_input(node)) {
            att.kind = AttachmentKind::VoltageSource;
            att.value = source_volts[si++];
        } else {
            att.kind = AttachmentKind::ResistiveLoad;
            att.value = load_ohms[li++];
        }
        desc.attachments.push_back(att);
    }
    desc.validate();
    return desc;
}

TopologyDescriptor build_different_ground(int n,
                                          const std::vector<Attachment>& attachments,
                                          double inductance,
                                          double capacitance) {
    TopologyDescriptor desc;
    desc.n = n;
    desc.inductance = inductance;
    desc.capacitance = capacitance;
    desc.attachments = attachments;
    desc.validate();

    // Two stiff ports on one identical span pin the same capacitors; they
    // must agree no matter what the duties are.
    for (std::size_t i = 0; i < attachments.size(); ++i) {
        if (attachments[i].kind != AttachmentKind::VoltageSource) continue;
        for (std::size_t j = i + 1; j < attachments.size(); ++j) {
            if (attachments[j].kind != AttachmentKind::VoltageSource) continue;
            if (attachments[i].span == attachments[j].span &&
                attachments[i].value != attachments[j].value)
                throw ValidationError(
                    "two voltage sources pin span " + std::to_string(attachments[i].span.top) +
                    ".." + std::to_string(attachments[i].span.bottom) + " to different values");
        }
    }
    return desc;
}

namespace {

double branch_value(const std::map<int, double>& overrides, double uniform, int index) {
    auto it = overrides.find(index);
    if (it != overrides.end()) return it->second;
    if (!(uniform > 0.0))
        throw ValidationError("no component value for branch " + std::to_string(index));
    return uniform;
}

} // namespace

Netlist build_universalized(const TopologyDescriptor& desc) {
    desc.validate();
    const int n = desc.n;
    const bool top_inductor = desc.inductor_style != InductorStyle::MiddleBranches;
    const bool bottom_inductor = desc.inductor_style == InductorStyle::PlusTopAndBottom;

    Netlist net;
    net.n_switches = n;

    // Node numbering: ladder nodes 1..n, then stack junctions. T_1 reuses
    // ladder node 1 unless a top inductor separates them; the stack foot is
    // ground unless a bottom inductor separates it.
    int next = n + 1;
    for (int i = 1; i <= n; ++i) {
        net.ladder[i] = NodeId{i};
        net.node_names[i] = "N" + std::to_string(i);
    }
    net.ladder[n + 1] = kGround;

    if (top_inductor) {
        net.junctions[1] = NodeId{next};
        net.node_names[next] = "T1";
        ++next;
    } else {
        net.junctions[1] = NodeId{1};
    }
    for (int i = 2; i <= n; ++i) {
        net.junctions[i] = NodeId{next};
        net.node_names[next] = "T" + std::to_string(i);
        ++next;
    }
    if (bottom_inductor) {
        net.junctions[n + 1] = NodeId{next};
        net.node_names[next] = "TG";
        ++next;
    } else {
        net.junctions[n + 1] = kGround;
    }

    // Switch ladder, oriented down: positive current flows toward ground.
    for (int i = 1; i <= n; ++i) {
        net.elements.push_back(Element{"S" + std::to_string(i), ElementKind::Switch,
                                       net.ladder[i], net.ladder[i + 1], 0.0, i});
    }

    // Capacitor stack C_i between T_i and T_{i+1}.
    for (int i = 1; i <= n; ++i) {
        const double c = branch_value(desc.capacitance_overrides, desc.capacitance, i);
        net.elements.push_back(Element{"C" + std::to_string(i), ElementKind::Capacitor,
                                       net.junctions[i], net.junctions[i + 1], c, 0});
    }

    // Filter inductors, oriented ladder node -> junction.
    if (top_inductor) {
        const double l = branch_value(desc.inductance_overrides, desc.inductance, 1);
        net.elements.push_back(
            Element{"L1", ElementKind::Inductor, net.ladder[1], net.junctions[1], l, 0});
    }
    for (int i = 2; i <= n; ++i) {
        const double l = branch_value(desc.inductance_overrides, desc.inductance, i);
        net.elements.push_back(Element{"L" + std::to_string(i), ElementKind::Inductor,
                                       net.ladder[i], net.junctions[i], l, 0});
    }
    if (bottom_inductor) {
        const double l = branch_value(desc.inductance_overrides, desc.inductance, n + 1);
        net.elements.push_back(
            Element{"LG", ElementKind::Inductor, net.ladder[n + 1], net.junctions[n + 1], l, 0});
    }

    // Attachments across their junction spans, numbered per kind in order.
    int n_v = 0, n_r = 0, n_i = 0;
    for (const auto& att : desc.attachments) {
        validate_span(att.span, n);
        const NodeId a = net.junctions[att.span.top];
        const NodeId b = net.junctions[att.span.bottom];
        switch (att.kind) {
            case AttachmentKind::VoltageSource:
                net.elements.push_back(Element{"V" + std::to_string(++n_v),
                                               ElementKind::VoltageSource, a, b, att.value, 0});
                break;
            case AttachmentKind::ResistiveLoad:
                net.elements.push_back(Element{"R" + std::to_string(++n_r),
                                               ElementKind::Resistor, a, b, att.value, 0});
                break;
            case AttachmentKind::CurrentLoad:
                // Positive value draws current out of the span's top junction.
                net.elements.push_back(Element{"I" + std::to_string(++n_i),
                                               ElementKind::CurrentSource, a, b, att.value, 0});
                break;
            case AttachmentKind::Open:
                break;
        }
    }

    net.validate();
    return net;
}

DerivationResult derive_nonsynchronous(const Netlist& netlist, const SteadyStateReport& steady) {
    const int n = netlist.n_switches;
    if (n < 1) throw ValidationError("netlist has no switches");

    // A conducting-mode current scale against which "never positive" and
    // "actually conducts" are judged.
    double scale = 0.0;
    for (int k = 1; k <= n; ++k)
        for (int j = 1; j <= n; ++j)
            scale = std::max(scale, std::abs(steady.stress_table.entry(k, j)));
    const double tol = std::max(1e-9, 1e-6 * scale);

    DerivationResult result;
    result.netlist = netlist;

    int active_remaining = 0;
    std::vector<int> replaced;
    for (int j = 1; j <= n; ++j) {
        double max_entry = 0.0, min_entry = 0.0;
        std::vector<double> row;
        for (int k = 1; k <= n; ++k) {
            const double c = steady.stress_table.entry(k, j);
            row.push_back(c);
            max_entry = std::max(max_entry, c);
            min_entry = std::min(min_entry, c);
        }
        // Replaceable: conducts somewhere, and only ever up the ladder (the
        // body-diode direction). The substituted diode is reverse biased by
        // the full stack voltage during mode j, so blocking is guaranteed.
        const bool conducts = min_entry < -tol;
        const bool never_forward = max_entry <= tol;
        if (conducts && never_forward) {
            replaced.push_back(j);
            result.substitutions.push_back(Substitution{j, std::move(row)});
        } else {
            ++active_remaining;
        }
    }

    if (replaced.empty())
        throw DerivationError("no nonsynchronous derivation exists for this power flow");
    if (active_remaining == 0)
        throw DerivationError("derivation would leave no active switch");

    for (auto& e : result.netlist.elements) {
        if (e.kind != ElementKind::Switch) continue;
        if (!std::binary_search(replaced.begin(), replaced.end(), e.switch_index)) continue;
        // Conduction is up the ladder: anode at the lower node.
        std::swap(e.a, e.b);
        e.kind = ElementKind::Diode;
        e.id = "D" + std::to_string(e.switch_index);
    }
    return result;
}

} // namespace mpcsim
