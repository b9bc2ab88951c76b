#pragma once

// =============================================================================
// Element-level circuit representation for the multiport converter family.
// =============================================================================
// A Netlist is the common currency between synthesis, steady-state analysis,
// simulation and export: a flat list of two-terminal elements over numbered
// nodes. Node 0 is always the common reference G.
//
// Netlists produced by the universalized builder additionally carry the
// ladder/junction maps so that downstream code can locate switch ladder
// nodes and capacitor stack junctions without pattern matching.
// =============================================================================

#include <map>
#include <string>
#include <vector>

namespace mpcsim {

/// Circuit node. Index 0 is reserved for the common reference G.
struct NodeId {
    int index = 0;

    constexpr bool is_ground() const { return index == 0; }
    friend constexpr bool operator==(NodeId a, NodeId b) { return a.index == b.index; }
    friend constexpr bool operator!=(NodeId a, NodeId b) { return a.index != b.index; }
    friend constexpr bool operator<(NodeId a, NodeId b) { return a.index < b.index; }
};

inline constexpr NodeId kGround{0};

enum class ElementKind {
    Switch,
    Diode,
    Inductor,
    Capacitor,
    Resistor,
    VoltageSource,
    CurrentSource,
};

const char* to_string(ElementKind kind);

/// One circuit element. Orientation is first-terminal-to-second: positive
/// element current flows a -> b, positive element voltage is v(a) - v(b).
/// For diodes the orientation is anode -> cathode.
struct Element {
    std::string id;
    ElementKind kind = ElementKind::Resistor;
    NodeId a;
    NodeId b;
    double value = 0.0;   // ohm, H, F, V or A depending on kind
    int switch_index = 0; // 1..n for Switch/Diode, 0 otherwise

    friend bool operator==(const Element&, const Element&) = default;
};

/// Element-level circuit graph.
///
/// `junctions[i]` (i = 1..n+1) maps capacitor stack junction T_i to its node
/// and `ladder[i]` (i = 1..n+1) maps switch ladder position i to its node;
/// both are filled by the universalized builder and empty for hand-built
/// netlists. Ladder position n+1 is always ground.
struct Netlist {
    int n_switches = 0;
    std::vector<Element> elements;
    std::map<int, NodeId> junctions;
    std::map<int, NodeId> ladder;
    std::map<int, std::string> node_names;

    /// All distinct nodes referenced by elements, ground first.
    std::vector<NodeId> nodes() const;

    std::string node_name(NodeId n) const;

    const Element* find(const std::string& id) const;

    /// Checks the structural invariants: ground exists, the graph is
    /// connected, every node touches at least one element, R/L/C values are
    /// positive and switch indices are distinct and contiguous 1..n.
    /// Throws ValidationError describing the first violation.
    void validate() const;

    friend bool operator==(const Netlist& x, const Netlist& y) {
        return x.n_switches == y.n_switches && x.elements == y.elements;
    }
};

/// Half-open span of stack junctions: covers capacitor positions
/// top..bottom-1. Junction n+1 is G.
struct PortSpan {
    int top = 1;
    int bottom = 2;

    friend bool operator==(const PortSpan&, const PortSpan&) = default;
};

enum class AttachmentKind {
    VoltageSource,
    ResistiveLoad,
    CurrentLoad,
    Open,
};

const char* to_string(AttachmentKind kind);

/// External connection across a junction span: a stiff source, a resistive
/// or constant-current load, or an unused (open) port.
struct Attachment {
    PortSpan span;
    AttachmentKind kind = AttachmentKind::Open;
    double value = 0.0; // V, ohm or A

    friend bool operator==(const Attachment&, const Attachment&) = default;
};

/// Where the filter inductors sit. MiddleBranches places one inductor per
/// interior junction (T_2..T_n); PlusTop adds one in the T_1 branch,
/// PlusTopAndBottom additionally one in the ground branch, making those
/// terminal currents continuous as well.
enum class InductorStyle {
    MiddleBranches,
    PlusTop,
    PlusTopAndBottom,
};

const char* to_string(InductorStyle style);

/// High-level converter description from which netlists are built.
struct TopologyDescriptor {
    int n = 0; // switch count, >= 2
    std::vector<Attachment> attachments;
    bool synchronous = true;
    InductorStyle inductor_style = InductorStyle::MiddleBranches;
    double inductance = 0.0;  // H, uniform per filtered branch
    double capacitance = 0.0; // F, uniform per port position

    /// Optional per-branch values keyed by junction index (1..n+1); empty
    /// entries fall back to the uniform value.
    std::map<int, double> inductance_overrides;
    std::map<int, double> capacitance_overrides;

    void validate() const;
};

void validate_span(const PortSpan& span, int n);

} // namespace mpcsim
