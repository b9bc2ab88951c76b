#pragma once

// =============================================================================
// Fixed-step piecewise-linear time-domain engine for switched netlists.
// =============================================================================
// Switches are modeled as two-state resistors (r_on / r_off), so the state
// dimension is fixed across modes and each (mode, diode-state) pair yields
// one constant MNA matrix that is factorized once and cached. Integration is
// trapezoidal; reactive elements carry their companion histories, and one
// period maps the extended history state affinely onto itself. That map is
// exploited at initialization: the algebraic seed is refined to the exact
// discrete periodic orbit by solving (I - Phi) z = psi, which makes even
// lightly damped converters settle within a couple of confirmation periods.
// =============================================================================

#include "mpcsim/analysis.hpp"
#include "mpcsim/netlist.hpp"
#include "mpcsim/pwm.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace mpcsim {

enum class InitMode { Zero, Algebraic };

struct SimConfig {
    double f_sw = 30e3;
    int steps_per_period = 1000;
    int n_periods_max = 5000;
    double ss_tolerance = 1e-5; // relative change of cycle-averaged state
    double r_on = 1e-3;         // ohm, closed switch / conducting diode
    double r_off = 1e6;         // ohm, open switch / blocking diode
    double diode_vf = 0.0;      // V forward drop
    InitMode init_mode = InitMode::Algebraic;

    void validate() const;
};

/// Inductor currents and capacitor voltages, one slot per reactive element
/// in declared netlist order.
struct StateVector {
    std::vector<double> values;
    std::vector<std::string> names;
};

/// Uniformly sampled waveforms; one column per channel, samples at step
/// ends. Channel names: i(X)/v(X) element currents and voltages following
/// the element a->b orientation, v(<node>) node voltages, vspan(a:b)
/// attachment span voltages, gate(Sk) gate levels.
struct WaveformTrace {
    double t0 = 0.0;
    double dt = 0.0;
    int samples_per_period = 0;
    std::vector<std::string> channels;
    std::vector<std::vector<double>> data; // [channel][sample]

    int n_samples() const { return data.empty() ? 0 : static_cast<int>(data[0].size()); }
    int channel_index(const std::string& name) const; // throws ValidationError
    const std::vector<double>& channel(const std::string& name) const;

    void write_csv(std::ostream& os) const;
};

struct Stats {
    double mean = 0.0;
    double rms = 0.0;
    double peak_to_peak = 0.0;
    double minimum = 0.0;
    double maximum = 0.0;
};

/// Statistics over the last `last_k_periods` of the trace.
Stats measure(const WaveformTrace& trace, const std::string& channel, int last_k_periods = 1);

struct SimResult {
    WaveformTrace trace; // final period
    int periods_used = 0;
    bool converged = false;
    StateVector final_state;
    DutyVector duties = DutyVector::from({1.0}); // as realized on the step grid
};

class SwitchedCircuitEngine {
public:
    /// Builds the per-mode systems (factorizations happen lazily per
    /// (mode, diode-state) pair on first use). Throws NumericalError naming
    /// the floating nodes if a mode system is singular.
    SwitchedCircuitEngine(const Netlist& netlist, const ModeSchedule& schedule,
                          const SimConfig& config,
                          std::vector<Attachment> attachments = {});
    ~SwitchedCircuitEngine();
    SwitchedCircuitEngine(SwitchedCircuitEngine&&) noexcept;

    int state_dimension() const;        // #inductors + #capacitors
    int factorized_system_count() const;
    const std::vector<std::string>& channel_names() const;

    StateVector state() const;
    void set_state(const StateVector& s);
    void set_schedule(const ModeSchedule& schedule); // re-snaps to the step grid
    DutyVector realized_duties() const;

    /// Algebraic seeding from the steady-state solver; falls back to zero
    /// for netlists the solver cannot handle.
    void seed_algebraic();

    /// Refines the current state to the period map's fixed point. Returns
    /// false (leaving the state untouched) when the map is degenerate.
    bool refine_to_periodic_orbit();

    /// Simulates one whole period from the current state; returns the
    /// cycle-averaged state. Records into `trace` when given.
    Eigen::VectorXd run_period(WaveformTrace* trace = nullptr);

    /// Period-mean voltage of stack capacitor i (1-based port index); only
    /// available for universalized netlists.
    std::vector<double> last_period_port_voltage_means() const;

    double elapsed_time() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Simulates whole switching periods until the cycle-averaged state settles
/// (max relative change < ss_tolerance) or n_periods_max is hit, then
/// records the final period. Non-convergence is flagged, not thrown.
SimResult run_to_steady_state(const Netlist& netlist, const ModeSchedule& schedule,
                              const SimConfig& config,
                              const std::vector<Attachment>& attachments);

/// Diagnostic/test entry point: simulate a fixed number of periods from a
/// given state, recording everything.
WaveformTrace simulate_periods(const Netlist& netlist, const ModeSchedule& schedule,
                               const SimConfig& config,
                               const std::vector<Attachment>& attachments,
                               const StateVector* initial, int periods);

struct ClosedLoopSpec {
    DutyVector initial_duties = DutyVector::from({1.0});
    std::vector<PortReference> references;
    ControlGains gains;
    int slack_port = 1;
    double duty_tolerance = 1e-6;
};

struct ClosedLoopResult {
    DutyVector duties = DutyVector::from({1.0});
    WaveformTrace trace;
    int periods_used = 0;
    bool converged = false;
    std::vector<std::vector<double>> duty_history; // one duty vector per period
};

/// Once per period: measure the period-mean port voltages, update the
/// duties through the controller, re-snap the schedule and continue.
/// Terminates when both the plant and the duties are stationary.
ClosedLoopResult run_closed_loop(const Netlist& netlist, const SimConfig& config,
                                 const ClosedLoopSpec& spec,
                                 const std::vector<Attachment>& attachments);

} // namespace mpcsim
