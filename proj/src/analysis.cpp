#include "mpcsim/analysis.hpp"

#include "mpcsim/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

namespace mpcsim {

namespace {
constexpr double kSourceConsistencyTol = 1e-6;
constexpr double kZeroSpanTol = 1e-12;

std::vector<const Attachment*> sources_of(const std::vector<Attachment>& attachments) {
    std::vector<const Attachment*> out;
    for (const auto& a : attachments)
        if (a.kind == AttachmentKind::VoltageSource) out.push_back(&a);
    return out;
}
} // namespace

double PortVoltages::span(int top, int bottom) const {
    double s = 0.0;
    for (int i = top; i < bottom; ++i) s += port.at(static_cast<std::size_t>(i - 1));
    return s;
}

StressTable::StressTable(int n, const BranchCurrents& currents) : n_(n) {
    rows_.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0.0);
    for (int mode = 1; mode <= n; ++mode) {
        for (int sw = 1; sw <= n; ++sw) {
            double v = 0.0;
            if (sw > mode) {
                for (int p = mode + 1; p <= sw; ++p) v += currents.at(p);
            } else if (sw < mode) {
                for (int p = sw + 1; p <= mode; ++p) v -= currents.at(p);
            }
            rows_[static_cast<std::size_t>((mode - 1) * n_ + (sw - 1))] = v;
        }
    }
}

PortVoltages solve_port_voltages(const DutyVector& duties,
                                 const std::vector<Attachment>& attachments) {
    const int n = duties.size();
    const auto sources = sources_of(attachments);
    if (sources.empty()) throw ValidationError("at least one voltage source is required");

    double v0 = 0.0;
    bool have_v0 = false;
    for (const auto* src : sources) {
        validate_span(src->span, n);
        const double weight = duties.span_sum(src->span.top, src->span.bottom);
        if (weight < kZeroSpanTol)
            throw ValidationError("span unpowered: duty sum over source span " +
                                  std::to_string(src->span.top) + ".." +
                                  std::to_string(src->span.bottom) + " is zero");
        const double implied = src->value / weight;
        if (!have_v0) {
            v0 = implied;
            have_v0 = true;
        } else {
            const double scale = std::max({std::abs(v0), std::abs(implied), 1e-30});
            if (std::abs(implied - v0) > kSourceConsistencyTol * scale)
                throw InconsistencyError(
                    "voltage sources imply conflicting stack voltages " + std::to_string(v0) +
                        " V and " + std::to_string(implied) + " V",
                    v0, implied);
        }
    }

    PortVoltages out;
    out.v0 = v0;
    out.port.resize(static_cast<std::size_t>(n));
    for (int i = 1; i <= n; ++i)
        out.port[static_cast<std::size_t>(i - 1)] = duties.of(i) * v0;
    return out;
}

DutyVector solve_duties_for_voltages(double v0, const std::vector<PortReference>& targets,
                                     int n, int slack_port) {
    if (!(v0 > 0.0)) throw ValidationError("stack voltage must be positive");
    if (n < 1) throw ValidationError("port count must be positive");
    if (slack_port < 1 || slack_port > n) throw ValidationError("slack port out of range");
    if (static_cast<int>(targets.size()) > n - 1)
        throw ValidationError("at most n-1 ports can be targeted");

    std::vector<double> d(static_cast<std::size_t>(n), -1.0);
    double assigned = 0.0;
    for (const auto& t : targets) {
        if (t.port < 1 || t.port > n) throw ValidationError("target port out of range");
        if (t.port == slack_port) throw ValidationError("slack port cannot carry a target");
        auto& slot = d[static_cast<std::size_t>(t.port - 1)];
        if (slot >= 0.0) throw ValidationError("duplicate target for one port");
        slot = t.reference / v0;
        if (slot < 0.0) throw ValidationError("negative target voltage");
        assigned += slot;
    }

    const int unassigned = n - static_cast<int>(targets.size());
    const double remainder = 1.0 - assigned;
    if (remainder < -1e-12)
        throw ValidationError("targets exceed source voltage");
    const double share = std::max(remainder, 0.0) / unassigned;
    for (auto& v : d)
        if (v < 0.0) v = share;
    return DutyVector::from(std::move(d));
}

BranchCurrents solve_branch_currents(const DutyVector& duties, const PortVoltages& voltages,
                                     const std::vector<Attachment>& attachments,
                                     double r_split) {
    const int n = duties.size();
    const auto sources = sources_of(attachments);
    if (sources.empty()) throw ValidationError("at least one voltage source is required");
    const int n_src = static_cast<int>(sources.size());

    // Constant injections at each junction from the non-stiff attachments,
    // evaluated at the ideal voltages. inj[p] for p = 1..n+1.
    std::vector<double> inj(static_cast<std::size_t>(n) + 2, 0.0);
    for (const auto& att : attachments) {
        validate_span(att.span, n);
        double draw = 0.0;
        switch (att.kind) {
            case AttachmentKind::ResistiveLoad:
                draw = voltages.span(att.span.top, att.span.bottom) / att.value;
                break;
            case AttachmentKind::CurrentLoad:
                draw = att.value;
                break;
            default:
                continue;
        }
        inj[static_cast<std::size_t>(att.span.top)] -= draw;
        inj[static_cast<std::size_t>(att.span.bottom)] += draw;
    }

    // Source injection sign at junction p: +1 at the span top, -1 at the
    // bottom (none at ground).
    auto sigma = [&](int s, int p) -> double {
        const auto& span = sources[static_cast<std::size_t>(s)]->span;
        if (span.top == p) return 1.0;
        if (span.bottom == p && p <= n) return -1.0;
        return 0.0;
    };

    // With one source the closure equation (equivalently power balance)
    // determines its current exactly; with several the ideal model is
    // degenerate and the ladder on-resistances decide the split.
    const double r = (n_src >= 2) ? r_split : 0.0;

    // Unknowns: junction potentials u_1..u_n, then source currents.
    const int dim = n + n_src;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
    int row = 0;

    for (int s = 0; s < n_src; ++s, ++row) {
        const auto& span = sources[static_cast<std::size_t>(s)]->span;
        A(row, span.top - 1) += 1.0;
        if (span.bottom <= n) A(row, span.bottom - 1) -= 1.0;
        rhs(row) = sources[static_cast<std::size_t>(s)]->value;
    }

    // Volt-second balance for the inductor at junction i, with the ladder
    // drops r * J(mode, segment) expanded over the junction currents
    // I_p = inj[p] + sum_s sigma(s,p) * y_s.
    auto add_current_term = [&](int r_row, double coef, int p) {
        rhs(r_row) -= coef * inj[static_cast<std::size_t>(p)];
        for (int s = 0; s < n_src; ++s) A(r_row, n + s) += coef * sigma(s, p);
    };
    auto add_segment = [&](int r_row, double coef, int mode, int seg) {
        if (seg > mode) {
            for (int p = mode + 1; p <= seg; ++p) add_current_term(r_row, coef, p);
        } else if (seg < mode) {
            for (int p = seg + 1; p <= mode; ++p) add_current_term(r_row, -coef, p);
        }
    };

    for (int i = 2; i <= n; ++i, ++row) {
        A(row, i - 1) -= 1.0;            // -u_i
        A(row, 0) += duties.tail_sum(i); // + (D_i + .. + D_n) * u_1
        if (r > 0.0) {
            for (int k = 1; k <= n; ++k) {
                const double dk = duties.of(k);
                if (dk == 0.0) continue;
                if (i <= k) {
                    for (int m = 1; m <= i - 1; ++m) add_segment(row, -r * dk, k, m);
                } else {
                    for (int m = i; m <= n; ++m) add_segment(row, r * dk, k, m);
                }
            }
        }
    }

    // Stack-top closure: inj(T_1) + sum_i tail(i) * I_i = 0.
    add_current_term(row, 1.0, 1);
    for (int i = 2; i <= n; ++i) add_current_term(row, duties.tail_sum(i), i);

    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible())
        throw NumericalError("source current split is singular (parallel identical sources?)");
    const Eigen::VectorXd x = lu.solve(rhs);

    BranchCurrents out;
    out.junction.assign(static_cast<std::size_t>(n) + 1, 0.0);
    out.source.resize(static_cast<std::size_t>(n_src));
    for (int s = 0; s < n_src; ++s) out.source[static_cast<std::size_t>(s)] = x(n + s);

    auto junction_current = [&](int p) {
        double v = inj[static_cast<std::size_t>(p)];
        for (int s = 0; s < n_src; ++s) v += sigma(s, p) * x(n + s);
        return v;
    };
    double sum = 0.0;
    for (int i = 2; i <= n; ++i) {
        out.junction[static_cast<std::size_t>(i)] = junction_current(i);
        sum += out.junction[static_cast<std::size_t>(i)];
    }
    out.top = junction_current(1);
    out.ground = -(out.top + sum);
    return out;
}

std::pair<double, StressTable> switch_stresses(const DutyVector& duties,
                                               const PortVoltages& voltages,
                                               const BranchCurrents& currents) {
    return {voltages.v0, StressTable(duties.size(), currents)};
}

namespace {

/// Mode voltage across the inductor at interior junction i (middle
/// branches): the ladder node sits at v0 while the junction is tied to the
/// stack top (modes k >= i), at 0 otherwise; the junction itself sits at
/// tail(i) * v0.
double inductor_mode_voltage(const DutyVector& duties, const PortVoltages& voltages, int i,
                             int mode) {
    const double up = (mode >= i) ? voltages.v0 : 0.0;
    return up - duties.tail_sum(i) * voltages.v0;
}

} // namespace

RippleReport ripple_estimates(const Netlist& netlist, const DutyVector& duties,
                              const SteadyStateReport& steady, double f_sw) {
    if (!(f_sw > 0.0)) throw ValidationError("switching frequency must be positive");
    if (netlist.junctions.empty())
        throw ValidationError("ripple estimates need a universalized netlist");
    const int n = netlist.n_switches;
    const double period = 1.0 / f_sw;

    auto junction_of = [&](const Element& e) -> int {
        for (const auto& [idx, node] : netlist.junctions)
            if (node == e.b && !node.is_ground()) return idx;
        return -1;
    };

    RippleReport report;
    for (const auto& e : netlist.elements) {
        if (e.kind != ElementKind::Inductor) continue;
        const int j = junction_of(e);
        if (j < 2 || j > n)
            throw ValidationError("ripple estimates support the middle-branches style only");
        double up = 0.0, down = 0.0;
        for (int k = 1; k <= n; ++k) {
            const double vl = inductor_mode_voltage(duties, steady.voltages, j, k);
            const double dt = duties.of(k) * period;
            if (vl > 0.0) up += vl * dt;
            else down -= vl * dt;
        }
        const double scale = std::max({up, down, 1e-30});
        if (std::abs(up - down) > 1e-9 * scale)
            throw NumericalError("volt-second imbalance in a solved steady state");
        report.inductor_pp_current[j] = up / e.value;
    }

    // Stack current per mode in the flat-ripple model: every capacitor sees
    // the same mode-dependent current because interior taps inject exactly
    // their average link current.
    std::vector<double> stack(static_cast<std::size_t>(n) + 1, 0.0);
    for (int k = 1; k <= n; ++k) {
        double s = steady.currents.top;
        for (int p = 2; p <= k; ++p) s += steady.currents.at(p);
        stack[static_cast<std::size_t>(k)] = s;
    }
    for (const auto& e : netlist.elements) {
        if (e.kind != ElementKind::Capacitor) continue;
        int idx = -1;
        for (int i = 1; i <= n; ++i) {
            if (netlist.junctions.at(i) == e.a && netlist.junctions.at(i + 1) == e.b) {
                idx = i;
                break;
            }
        }
        if (idx < 0) continue;
        double up = 0.0, down = 0.0;
        for (int k = 1; k <= n; ++k) {
            const double q = stack[static_cast<std::size_t>(k)] * duties.of(k) * period;
            if (q > 0.0) up += q;
            else down -= q;
        }
        const double scale = std::max({up, down, 1e-30});
        if (up + down > 0.0 && std::abs(up - down) > 1e-9 * scale)
            throw NumericalError("charge imbalance in a solved steady state");
        report.capacitor_pp_voltage[idx] = up / e.value;
    }
    return report;
}

double inductor_ripple_offset_at_period_start(const DutyVector& duties,
                                              const PortVoltages& voltages, int junction,
                                              double inductance, double period) {
    const int n = duties.size();
    // Integrate the slope pattern from an arbitrary zero start, then remove
    // the time average; what remains is the zero-mean ripple value at t = 0.
    double w = 0.0;
    double mean = 0.0;
    for (int k = 1; k <= n; ++k) {
        const double dt = duties.of(k) * period;
        const double slope = inductor_mode_voltage(duties, voltages, junction, k) / inductance;
        const double w_end = w + slope * dt;
        mean += 0.5 * (w + w_end) * dt;
        w = w_end;
    }
    mean /= period;
    return -mean;
}

SteadyStateReport analyze(const TopologyDescriptor& desc, const DutyVector& duties) {
    desc.validate();
    if (duties.size() != desc.n)
        throw ValidationError("duty vector size does not match the switch count");
    if (desc.inductor_style != InductorStyle::MiddleBranches)
        throw ValidationError("the algebraic solver supports the middle-branches style only");

    SteadyStateReport report;
    report.duties = duties;
    report.voltages = solve_port_voltages(duties, desc.attachments);
    report.currents = solve_branch_currents(duties, report.voltages, desc.attachments);
    std::tie(report.switch_voltage_stress, report.stress_table) =
        switch_stresses(duties, report.voltages, report.currents);

    double residual = 0.0;
    std::size_t s = 0;
    for (const auto& att : desc.attachments) {
        const double v = report.voltages.span(att.span.top, att.span.bottom);
        switch (att.kind) {
            case AttachmentKind::VoltageSource:
                residual += v * report.currents.source[s++];
                break;
            case AttachmentKind::ResistiveLoad:
                residual -= v * v / att.value;
                break;
            case AttachmentKind::CurrentLoad:
                residual -= v * att.value;
                break;
            case AttachmentKind::Open:
                break;
        }
    }
    report.power_balance_residual = residual;
    return report;
}

} // namespace mpcsim
