#pragma once

// =============================================================================
// Algebraic steady-state solver for the universalized converter.
// =============================================================================
// Volt-second balance on every inductor branch forces each port (capacitor)
// voltage to D_i * V0, where V0 is the total stack voltage; charge balance
// forces the average inductor current at every interior junction to equal
// the net attachment current injected there. The discontinuous stack-top
// link closes the current system: averaged over a period it carries
// -sum_i tail(i) * I_i, which is equivalent to exact power balance.
//
// These closed forms are the independent oracle the time-domain simulator
// is checked against.
// =============================================================================

#include "mpcsim/netlist.hpp"
#include "mpcsim/pwm.hpp"

#include <vector>

namespace mpcsim {

/// Solved port voltages. port[i-1] = D_i * v0.
struct PortVoltages {
    double v0 = 0.0;
    std::vector<double> port;

    /// Voltage across junction span top..bottom.
    double span(int top, int bottom) const;
};

/// Average currents in the ladder/stack links. junction[i] (i = 2..n) is the
/// inductor current at T_i, positive flowing from the stack junction into
/// the ladder node. top is the (discontinuous) T_1 link average and ground
/// the stack-foot link average; top + sum(junction) + ground = 0.
struct BranchCurrents {
    double top = 0.0;
    std::vector<double> junction; // index 0,1 unused; valid 2..n
    double ground = 0.0;
    std::vector<double> source;   // one per voltage-source attachment, in order

    double at(int i) const { return junction.at(static_cast<std::size_t>(i)); }
};

/// Per-mode per-switch average currents. Entry (mode k, switch j) is zero on
/// the diagonal, the cumulative junction-current sum I_{k+1}+..+I_j for
/// j > k, and -(I_{j+1}+..+I_k) for j < k; positive current flows down the
/// ladder (node j toward node j+1).
class StressTable {
public:
    StressTable() = default;
    StressTable(int n, const BranchCurrents& currents);

    int size() const { return n_; }
    double entry(int mode, int sw) const {
        return rows_.at(static_cast<std::size_t>((mode - 1) * n_ + (sw - 1)));
    }

private:
    int n_ = 0;
    std::vector<double> rows_;
};

/// Everything the algebraic model knows about one operating point.
struct SteadyStateReport {
    DutyVector duties = DutyVector::from({1.0});
    PortVoltages voltages;
    BranchCurrents currents;
    double switch_voltage_stress = 0.0; // = v0 for every switch
    StressTable stress_table;
    double power_balance_residual = 0.0; // W
};

/// Solves v0 from the first source span (source across T_a..T_b pins
/// sum(D_a..D_{b-1}) * v0) and checks every additional source for
/// consistency within 1e-6 relative; throws InconsistencyError carrying both
/// implied v0 values on conflict and ValidationError for an unpowered span
/// (span duty sum = 0).
PortVoltages solve_port_voltages(const DutyVector& duties,
                                 const std::vector<Attachment>& attachments);

/// Inverse gain law: duties from target port voltages at a given stack
/// voltage. Targets are single-port spans; ports without a target share the
/// remaining duty equally with the slack port. Throws ValidationError when
/// the targets exceed v0.
DutyVector solve_duties_for_voltages(double v0,
                                     const std::vector<PortReference>& targets,
                                     int n,
                                     int slack_port);

/// Average link currents from the attachments. Load currents follow from
/// the solved voltages; with several sources the ideal model does not fix
/// the split, so the solver resolves it the way the switched circuit does:
/// equal on-resistances in the ladder weight the volt-second residuals
/// (r_split only affects the split, never the reported voltages, and the
/// reported set satisfies exact power balance).
BranchCurrents solve_branch_currents(const DutyVector& duties,
                                     const PortVoltages& voltages,
                                     const std::vector<Attachment>& attachments,
                                     double r_split = 1e-3);

/// Voltage stress (= v0, the full stack appears across any open switch) and
/// the per-mode current table.
std::pair<double, StressTable> switch_stresses(const DutyVector& duties,
                                               const PortVoltages& voltages,
                                               const BranchCurrents& currents);

/// Peak-to-peak ripple estimates from the piecewise-constant mode voltages.
struct RippleReport {
    std::map<int, double> inductor_pp_current; // junction index -> A
    std::map<int, double> capacitor_pp_voltage; // capacitor index -> V
};

/// Accumulates |V_L| * duration over the charge-up modes of each inductor
/// (and the analogous charge integral for every capacitor). The charge-up
/// and charge-down volt-seconds must agree at a solved steady state; a
/// mismatch beyond 1e-9 relative is an internal error.
RippleReport ripple_estimates(const Netlist& netlist,
                              const DutyVector& duties,
                              const SteadyStateReport& steady,
                              double f_sw);

/// Full pipeline: voltages, currents, stresses and the power residual.
SteadyStateReport analyze(const TopologyDescriptor& desc, const DutyVector& duties);

/// Zero-mean piecewise-linear ripple waveform of the inductor at junction
/// `junction` (slopes from the ideal mode voltages). Returns the value at
/// the start of the period; used to seed simulations at the ripple phase.
double inductor_ripple_offset_at_period_start(const DutyVector& duties,
                                              const PortVoltages& voltages,
                                              int junction,
                                              double inductance,
                                              double period);

} // namespace mpcsim
