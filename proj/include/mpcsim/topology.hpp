#pragma once

// =============================================================================
// Topology synthesis: port-assignment enumeration and netlist builders.
// =============================================================================
// Every converter in the family is an instance of one universalized
// structure: n switches in a ladder between node 1 and ground, a series
// stack of n port capacitors, and LC filter branches tying ladder nodes to
// stack junctions. Sources and loads attach across junction spans. The
// common-ground and different-ground variants are span arrangements of the
// same structure, so both builders reduce to descriptor construction.
// =============================================================================

#include "mpcsim/analysis.hpp"
#include "mpcsim/netlist.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mpcsim {

/// One input/output labeling of the n non-ground ports of the common-ground
/// converter. Node i is an input iff bit (i-1) of `input_mask` is set.
struct PortAssignment {
    int n = 0;
    std::uint32_t input_mask = 0;

    bool is_input(int node) const { return (input_mask >> (node - 1)) & 1u; }
    int input_count() const;
    std::vector<int> inputs() const;
    std::vector<int> outputs() const;
};

/// All 2^n - 2 ways to label n ports as input or output with at least one of
/// each, ordered by input count and then by ascending input mask. Throws
/// ValidationError for n < 2.
std::vector<PortAssignment> enumerate_port_assignments(int n);

/// Descriptor for a common-ground converter: sources at the input nodes,
/// resistive loads at the output nodes, every span ground-referenced.
TopologyDescriptor build_common_ground(int n,
                                       const PortAssignment& assignment,
                                       const std::vector<double>& source_volts,
                                       const std::vector<double>& load_ohms,
                                       double inductance,
                                       double capacitance);

/// Descriptor with arbitrary junction-pair attachments. Rejects two voltage
/// sources on one identical span with different values (they would pin the
/// same capacitors inconsistently regardless of duties).
TopologyDescriptor build_different_ground(int n,
                                          const std::vector<Attachment>& attachments,
                                          double inductance,
                                          double capacitance);

/// Emits the universalized netlist: switch ladder S_1..S_n over nodes
/// 1..n+1 (node n+1 = G), capacitor stack C_1..C_n over junctions
/// T_1..T_{n+1}, inductors L_i between ladder node i and junction T_i for
/// the filtered branches of the chosen style, attachments across their
/// junction spans. T_1 coincides with node 1 unless the style adds a top
/// inductor.
Netlist build_universalized(const TopologyDescriptor& desc);

/// One switch-to-diode substitution and the per-mode currents justifying it.
struct Substitution {
    int switch_index = 0;
    std::vector<double> mode_currents; // Table row for this switch, one per mode
};

struct DerivationResult {
    Netlist netlist;
    std::vector<Substitution> substitutions;
};

/// Replaces every switch that only ever conducts in its body-diode
/// direction (per-mode average current <= 0, never significantly positive)
/// with a diode of that orientation; such a diode blocks the full stack
/// voltage during its own off mode, so the substitution preserves the mode
/// sequence. Switch indices are preserved and the element count never
/// changes. Throws DerivationError when no substitution is possible.
DerivationResult derive_nonsynchronous(const Netlist& netlist,
                                       const SteadyStateReport& steady);

} // namespace mpcsim
