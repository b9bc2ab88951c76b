#pragma once

// =============================================================================
// Gate scheduling and duty-ratio control.
// =============================================================================
// The converter family runs a strictly sequential schedule: one switching
// period is partitioned into n modes, and in mode i exactly switch S_i is
// off while all others conduct. D_i is the OFF fraction of switch i, so the
// duties sum to one. This module owns the schedule arithmetic and the
// per-port duty-ratio controller.
// =============================================================================

#include <utility>
#include <vector>

namespace mpcsim {

/// Per-switch OFF-duty ratios D_1..D_n; sums to 1 within 1e-9.
class DutyVector {
public:
    static DutyVector from(std::vector<double> d);

    int size() const { return static_cast<int>(d_.size()); }

    /// OFF duty of switch i (1-based).
    double of(int i) const { return d_.at(static_cast<std::size_t>(i - 1)); }

    const std::vector<double>& values() const { return d_; }

    /// Sum of D_a..D_{b-1}: the voltage-divider weight of junction span a..b.
    double span_sum(int top, int bottom) const;

    /// Sum of D_i..D_n: the fraction of the period junction T_i is tied to
    /// the stack top through the ladder.
    double tail_sum(int i) const;

    friend bool operator==(const DutyVector&, const DutyVector&) = default;

private:
    std::vector<double> d_;
};

/// Gate pattern at one instant; bits[i-1] true means switch i conducts.
struct GateState {
    std::vector<bool> bits;
    int off_switch = 0; // 1-based index of the single off switch, 0 if none
};

/// Time partition of one switching period into n sequential modes.
/// boundaries[0] = 0, boundaries[n] = period, mode i spans
/// [boundaries[i-1], boundaries[i]) with duration D_i * period. A nonzero
/// dead_time keeps each switch off for that long past the end of its own
/// mode, producing an all-off band after every boundary.
struct ModeSchedule {
    double period = 0.0;
    std::vector<double> boundaries;
    double dead_time = 0.0;

    int n_modes() const { return static_cast<int>(boundaries.size()) - 1; }
    double mode_duration(int i) const { return boundaries[i] - boundaries[i - 1]; }

    /// Mode index (1-based) active at time t (wrapped into the period).
    int mode_at(double t) const;
};

/// Builds the sequential schedule. Modes with D_i = 0 are zero length and
/// skipped by consumers.
ModeSchedule make_schedule(const DutyVector& duties, double f_sw, double dead_time = 0.0);

/// Gate pattern at time t >= 0 (t is wrapped modulo the period).
GateState gate_states_at(const ModeSchedule& schedule, double t);

/// Duty-ratio controller gains. One controller per regulated port acts on
/// the measured port voltage; kd adds a derivative-on-measurement term that
/// damps the LC filter resonance (set it to zero for a plain PI).
struct ControlGains {
    double kp = 2e-4;    // duty per volt
    double ki = 8.0;     // duty per volt-second
    double kd = 1e-5;    // duty per (volt/second)
    double d_min = 0.02; // lower clamp on every duty
};

/// One regulated port: drive measured V_port toward reference by adjusting
/// its duty.
struct PortReference {
    int port = 0; // 1-based
    double reference = 0.0;
};

/// Controller memory, owned by the caller and passed by value.
struct ControllerState {
    std::vector<double> integral;  // one per regulated port
    std::vector<double> prev_meas; // previous measurement, for the kd term
    bool primed = false;           // prev_meas valid
};

/// One control update: PI(+D) per regulated port, slack port absorbs the
/// remainder so the duties keep summing to one; unregulated non-slack ports
/// hold their current value. All duties are clamped to [d_min, 1]; if the
/// clamped set cannot be normalized the references are unreachable and a
/// ValidationError is thrown.
std::pair<DutyVector, ControllerState> update_duties(
    const std::vector<double>& measured_port_voltages,
    const std::vector<PortReference>& regulated,
    const ControlGains& gains,
    const DutyVector& current,
    int slack_port,
    ControllerState state,
    double dt);

} // namespace mpcsim
