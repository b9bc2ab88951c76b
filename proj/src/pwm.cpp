#include "mpcsim/pwm.hpp"

#include "mpcsim/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace mpcsim {

namespace {
constexpr double kDutySumTol = 1e-9;
}

DutyVector DutyVector::from(std::vector<double> d) {
    if (d.empty()) throw ValidationError("duty vector is empty");
    double sum = 0.0;
    for (double v : d) {
        if (v < 0.0) throw ValidationError("duty ratio " + std::to_string(v) + " is negative");
        if (v > 1.0 + kDutySumTol)
            throw ValidationError("duty ratio " + std::to_string(v) + " exceeds 1");
        sum += v;
    }
    if (std::abs(sum - 1.0) > kDutySumTol)
        throw ValidationError("duty ratios sum to " + std::to_string(sum) + ", expected 1");
    DutyVector out;
    out.d_ = std::move(d);
    return out;
}

double DutyVector::span_sum(int top, int bottom) const {
    double s = 0.0;
    for (int i = top; i < bottom; ++i) s += of(i);
    return s;
}

double DutyVector::tail_sum(int i) const { return span_sum(i, size() + 1); }

int ModeSchedule::mode_at(double t) const {
    double tau = std::fmod(t, period);
    if (tau < 0.0) tau += period;
    const int n = n_modes();
    for (int i = 1; i <= n; ++i) {
        if (tau < boundaries[i]) return i;
    }
    return n; // tau == period can only happen through rounding
}

ModeSchedule make_schedule(const DutyVector& duties, double f_sw, double dead_time) {
    if (!(f_sw > 0.0)) throw ValidationError("switching frequency must be positive");
    ModeSchedule s;
    s.period = 1.0 / f_sw;
    if (dead_time < 0.0 || dead_time >= s.period / duties.size())
        throw ValidationError("dead time must lie in [0, period/n)");
    s.dead_time = dead_time;
    s.boundaries.resize(static_cast<std::size_t>(duties.size()) + 1);
    s.boundaries[0] = 0.0;
    double acc = 0.0;
    for (int i = 1; i <= duties.size(); ++i) {
        acc += duties.of(i);
        s.boundaries[static_cast<std::size_t>(i)] = acc * s.period;
    }
    s.boundaries.back() = s.period; // absorb rounding of the final boundary
    return s;
}

GateState gate_states_at(const ModeSchedule& schedule, double t) {
    const int n = schedule.n_modes();
    const int mode = schedule.mode_at(t);
    GateState g;
    g.bits.assign(static_cast<std::size_t>(n), true);
    // Zero-length modes never report as active: mode_at always lands in a
    // mode with positive width unless every width is zero.
    if (schedule.mode_duration(mode) > 0.0) {
        g.bits[static_cast<std::size_t>(mode - 1)] = false;
        g.off_switch = mode;
    }
    if (schedule.dead_time > 0.0) {
        // Each switch stays off dead_time past its own mode, so the previous
        // mode's switch is still off right after the boundary.
        double tau = std::fmod(t, schedule.period);
        if (tau < 0.0) tau += schedule.period;
        for (int prev = 1; prev <= n; ++prev) {
            if (schedule.mode_duration(prev) == 0.0) continue;
            const double end = schedule.boundaries[static_cast<std::size_t>(prev)];
            const double into = tau - end;
            const bool in_band = (into >= 0.0 && into < schedule.dead_time) ||
                                 (prev == n && tau < schedule.dead_time);
            if (in_band) {
                g.bits[static_cast<std::size_t>(prev - 1)] = false;
                g.off_switch = 0; // more than one device is off
            }
        }
    }
    return g;
}

std::pair<DutyVector, ControllerState> update_duties(
    const std::vector<double>& measured_port_voltages,
    const std::vector<PortReference>& regulated,
    const ControlGains& gains,
    const DutyVector& current,
    int slack_port,
    ControllerState state,
    double dt) {
    const int n = current.size();
    if (!(dt > 0.0)) throw ValidationError("controller dt must be positive");
    if (static_cast<int>(measured_port_voltages.size()) != n)
        throw ValidationError("expected one measured voltage per port");
    if (static_cast<int>(regulated.size()) > n - 1)
        throw ValidationError("regulated subset must leave at least one slack port");
    if (slack_port < 1 || slack_port > n)
        throw ValidationError("slack port out of range");
    for (const auto& r : regulated) {
        if (r.port < 1 || r.port > n) throw ValidationError("regulated port out of range");
        if (r.port == slack_port)
            throw ValidationError("slack port cannot be regulated");
    }

    if (state.integral.size() != regulated.size()) {
        state.integral.assign(regulated.size(), 0.0);
        state.prev_meas.assign(regulated.size(), 0.0);
        state.primed = false;
        // Seed the integrators at the current duties so a zero-error call is
        // a fixed point.
        for (std::size_t k = 0; k < regulated.size(); ++k)
            state.integral[k] = current.of(regulated[k].port) / gains.ki;
    }

    std::vector<double> next = current.values();
    double regulated_sum = 0.0;
    for (std::size_t k = 0; k < regulated.size(); ++k) {
        const auto& r = regulated[k];
        const double meas = measured_port_voltages[static_cast<std::size_t>(r.port - 1)];
        const double err = r.reference - meas;
        const double deriv =
            state.primed ? (state.prev_meas[k] - meas) / dt : 0.0;

        double integ = state.integral[k] + err * dt;
        double d = gains.kp * err + gains.ki * integ + gains.kd * deriv;
        if (d < gains.d_min || d > 1.0) {
            d = std::clamp(d, gains.d_min, 1.0);
            integ = state.integral[k]; // hold the integrator while clamped
        }
        state.integral[k] = integ;
        state.prev_meas[k] = meas;
        next[static_cast<std::size_t>(r.port - 1)] = d;
        regulated_sum += d;
    }
    state.primed = true;

    double held_sum = 0.0;
    for (int i = 1; i <= n; ++i) {
        if (i == slack_port) continue;
        bool is_regulated = std::any_of(regulated.begin(), regulated.end(),
                                        [i](const PortReference& r) { return r.port == i; });
        if (!is_regulated) held_sum += next[static_cast<std::size_t>(i - 1)];
    }

    const double slack = 1.0 - regulated_sum - held_sum;
    if (slack < gains.d_min - 1e-12)
        throw ValidationError("references unreachable: slack duty would fall below d_min");
    next[static_cast<std::size_t>(slack_port - 1)] = slack;

    return {DutyVector::from(std::move(next)), std::move(state)};
}

} // namespace mpcsim
