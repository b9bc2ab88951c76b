#include "mpcsim/simulator.hpp"

#include "mpcsim/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <set>
#include <sstream>

namespace mpcsim {

namespace {
constexpr double kDiodeCurrentTol = 1e-7; // A
constexpr double kDiodeVoltageTol = 1e-7; // V

/// Ideal mode voltage across the inductor at an interior junction, used
/// only to seed companion histories.
double seed_inductor_mode_voltage(const DutyVector& duties, const PortVoltages& voltages,
                                  int junction, int mode) {
    const double up = (mode >= junction) ? voltages.v0 : 0.0;
    return up - duties.tail_sum(junction) * voltages.v0;
}

double relative_change(const Eigen::VectorXd& cur, const Eigen::VectorXd& prev) {
    double global = 0.0;
    for (int i = 0; i < cur.size(); ++i)
        global = std::max({global, std::abs(cur(i)), std::abs(prev(i))});
    double worst = 0.0;
    for (int i = 0; i < cur.size(); ++i) {
        const double denom =
            std::max({std::abs(cur(i)), std::abs(prev(i)), 0.01 * global, 1e-9});
        worst = std::max(worst, std::abs(cur(i) - prev(i)) / denom);
    }
    return worst;
}
} // namespace

void SimConfig::validate() const {
    if (!(f_sw > 0.0)) throw ValidationError("switching frequency must be positive");
    if (steps_per_period < 50) throw ValidationError("steps_per_period must be >= 50");
    if (n_periods_max < 1) throw ValidationError("n_periods_max must be >= 1");
    if (!(ss_tolerance > 0.0)) throw ValidationError("ss_tolerance must be positive");
    if (!(r_on > 0.0) || !(r_off > r_on))
        throw ValidationError("switch resistances need 0 < r_on < r_off");
    if (diode_vf < 0.0) throw ValidationError("diode forward drop must be >= 0");
}

int WaveformTrace::channel_index(const std::string& name) const {
    for (std::size_t i = 0; i < channels.size(); ++i)
        if (channels[i] == name) return static_cast<int>(i);
    throw ValidationError("unknown channel '" + name + "'");
}

const std::vector<double>& WaveformTrace::channel(const std::string& name) const {
    return data[static_cast<std::size_t>(channel_index(name))];
}

void WaveformTrace::write_csv(std::ostream& os) const {
    os << "time";
    for (const auto& c : channels) os << ',' << c;
    os << '\n';
    char buf[32];
    const int ns = n_samples();
    for (int s = 0; s < ns; ++s) {
        std::snprintf(buf, sizeof buf, "%.17g", t0 + (s + 1) * dt);
        os << buf;
        for (const auto& col : data) {
            std::snprintf(buf, sizeof buf, "%.17g", col[static_cast<std::size_t>(s)]);
            os << ',' << buf;
        }
        os << '\n';
    }
}

Stats measure(const WaveformTrace& trace, const std::string& channel, int last_k_periods) {
    const auto& col = trace.channel(channel);
    const int ns = static_cast<int>(col.size());
    int window = last_k_periods * trace.samples_per_period;
    if (window <= 0 || window > ns)
        throw ValidationError("measurement window exceeds the trace");
    Stats st;
    st.minimum = col[static_cast<std::size_t>(ns - window)];
    st.maximum = st.minimum;
    double sum = 0.0, sq = 0.0;
    for (int s = ns - window; s < ns; ++s) {
        const double v = col[static_cast<std::size_t>(s)];
        sum += v;
        sq += v * v;
        st.minimum = std::min(st.minimum, v);
        st.maximum = std::max(st.maximum, v);
    }
    st.mean = sum / window;
    st.rms = std::sqrt(sq / window);
    st.peak_to_peak = st.maximum - st.minimum;
    return st;
}

// =============================================================================
// Engine internals
// =============================================================================

struct SwitchedCircuitEngine::Impl {
    Netlist net;
    SimConfig cfg;
    std::vector<Attachment> attachments;
    double h = 0.0;
    double period = 0.0;
    double t = 0.0;

    // Unknown layout: compact node voltages, then branch currents.
    int nn = 0;
    int dim = 0;
    std::map<int, int> node_of; // NodeId.index -> 0..nn-1 (ground absent)

    struct Slot {
        const Element* e = nullptr;
        int na = -1, nb = -1; // compact indices, -1 = ground
        int branch = -1;      // L and V
        int react = -1;       // L and C
        int diode = -1;       // Diode only
    };
    std::vector<Slot> slots;
    std::vector<int> reactive_slots; // slot index per reactive element
    std::vector<int> diode_slots;
    int n_react = 0;
    int n_diodes = 0;

    Eigen::VectorXd hist_v, hist_i; // companion histories per reactive element
    std::vector<double> elem_v, elem_i;

    // Snapped schedule.
    std::vector<int> mode_of_step;  // per step, 1-based mode
    std::vector<int> mode_steps;    // steps per mode
    std::vector<double> duty_exact; // requested duties

    std::uint32_t diode_mask = 0;
    std::map<std::pair<int, std::uint32_t>, Eigen::FullPivLU<Eigen::MatrixXd>> cache;

    std::vector<std::pair<int, int>> span_channels; // junction pairs
    std::vector<int> port_cap_slot;                 // per port, slot of stack cap (or -1)
    std::vector<std::string> channels;
    Eigen::VectorXd last_avg;

    // -------------------------------------------------------------------------

    int compact(NodeId n) const {
        if (n.is_ground()) return -1;
        return node_of.at(n.index);
    }

    double xv(const Eigen::VectorXd& x, int idx) const { return idx < 0 ? 0.0 : x(idx); }

    double element_voltage(const Eigen::VectorXd& x, const Slot& s) const {
        return xv(x, s.na) - xv(x, s.nb);
    }

    bool switch_on(int mode, const Element& e) const { return e.switch_index != mode; }

    Eigen::MatrixXd assemble_matrix(int mode, std::uint32_t mask) const {
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(dim, dim);
        auto stamp_g = [&](double g, int a, int b) {
            if (a >= 0) A(a, a) += g;
            if (b >= 0) A(b, b) += g;
            if (a >= 0 && b >= 0) {
                A(a, b) -= g;
                A(b, a) -= g;
            }
        };
        for (const auto& s : slots) {
            switch (s.e->kind) {
                case ElementKind::Resistor:
                    stamp_g(1.0 / s.e->value, s.na, s.nb);
                    break;
                case ElementKind::Switch:
                    stamp_g(switch_on(mode, *s.e) ? 1.0 / cfg.r_on : 1.0 / cfg.r_off, s.na,
                            s.nb);
                    break;
                case ElementKind::Diode:
                    stamp_g(((mask >> s.diode) & 1u) ? 1.0 / cfg.r_on : 1.0 / cfg.r_off, s.na,
                            s.nb);
                    break;
                case ElementKind::Capacitor:
                    stamp_g(2.0 * s.e->value / h, s.na, s.nb);
                    break;
                case ElementKind::Inductor:
                    if (s.na >= 0) {
                        A(s.na, s.branch) += 1.0;
                        A(s.branch, s.na) += 1.0;
                    }
                    if (s.nb >= 0) {
                        A(s.nb, s.branch) -= 1.0;
                        A(s.branch, s.nb) -= 1.0;
                    }
                    A(s.branch, s.branch) = -2.0 * s.e->value / h;
                    break;
                case ElementKind::VoltageSource:
                    if (s.na >= 0) {
                        A(s.na, s.branch) += 1.0;
                        A(s.branch, s.na) += 1.0;
                    }
                    if (s.nb >= 0) {
                        A(s.nb, s.branch) -= 1.0;
                        A(s.branch, s.nb) -= 1.0;
                    }
                    break;
                case ElementKind::CurrentSource:
                    break;
            }
        }
        return A;
    }

    const Eigen::FullPivLU<Eigen::MatrixXd>& system(int mode, std::uint32_t mask) {
        const auto key = std::make_pair(mode, mask);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
        Eigen::FullPivLU<Eigen::MatrixXd> lu(assemble_matrix(mode, mask));
        if (!lu.isInvertible()) {
            // Name the nodes spanning the null space.
            const Eigen::MatrixXd ker = lu.kernel();
            std::set<std::string> floating;
            for (int c = 0; c < ker.cols(); ++c) {
                const double peak = ker.col(c).cwiseAbs().maxCoeff();
                for (const auto& [idx, ci] : node_of)
                    if (std::abs(ker(ci, c)) > 0.5 * peak)
                        floating.insert(net.node_name(NodeId{idx}));
            }
            std::string msg = "singular system in mode " + std::to_string(mode) +
                              "; isolated nodes:";
            for (const auto& nm : floating) msg += " " + nm;
            throw NumericalError(msg);
        }
        return cache.emplace(key, std::move(lu)).first->second;
    }

    Eigen::VectorXd assemble_rhs(std::uint32_t mask, bool zero_sources) const {
        Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
        for (const auto& s : slots) {
            switch (s.e->kind) {
                case ElementKind::Capacitor: {
                    const double g = 2.0 * s.e->value / h;
                    const double ih = g * hist_v(s.react) + hist_i(s.react);
                    if (s.na >= 0) b(s.na) += ih;
                    if (s.nb >= 0) b(s.nb) -= ih;
                    break;
                }
                case ElementKind::Inductor:
                    b(s.branch) = -(2.0 * s.e->value / h) * hist_i(s.react) - hist_v(s.react);
                    break;
                case ElementKind::VoltageSource:
                    b(s.branch) = zero_sources ? 0.0 : s.e->value;
                    break;
                case ElementKind::CurrentSource:
                    if (!zero_sources) {
                        if (s.na >= 0) b(s.na) -= s.e->value;
                        if (s.nb >= 0) b(s.nb) += s.e->value;
                    }
                    break;
                case ElementKind::Diode:
                    if (!zero_sources && cfg.diode_vf > 0.0 && ((mask >> s.diode) & 1u)) {
                        const double iv = cfg.diode_vf / cfg.r_on;
                        if (s.na >= 0) b(s.na) += iv;
                        if (s.nb >= 0) b(s.nb) -= iv;
                    }
                    break;
                default:
                    break;
            }
        }
        return b;
    }

    /// One trapezoidal step. Resolves diode conduction states unless a
    /// frozen mask is supplied; updates histories and element scratch.
    void step(int mode, bool zero_sources, const std::uint32_t* frozen_mask) {
        Eigen::VectorXd x;
        std::uint32_t mask = frozen_mask ? *frozen_mask : diode_mask;
        if (frozen_mask || n_diodes == 0) {
            x = system(mode, mask).solve(assemble_rhs(mask, zero_sources));
        } else {
            std::vector<std::uint32_t> visited;
            for (;;) {
                if (std::find(visited.begin(), visited.end(), mask) != visited.end()) {
                    std::ostringstream os;
                    os << "diode state oscillation at t=" << t;
                    throw NumericalError(os.str());
                }
                visited.push_back(mask);
                x = system(mode, mask).solve(assemble_rhs(mask, zero_sources));
                std::uint32_t next = mask;
                for (int ds : diode_slots) {
                    const Slot& s = slots[static_cast<std::size_t>(ds)];
                    const double v = element_voltage(x, s);
                    const bool on = (mask >> s.diode) & 1u;
                    if (on) {
                        const double i = (v - (zero_sources ? 0.0 : cfg.diode_vf)) / cfg.r_on;
                        if (i < -kDiodeCurrentTol) next &= ~(1u << s.diode);
                    } else {
                        if (v > cfg.diode_vf + kDiodeVoltageTol) next |= 1u << s.diode;
                    }
                }
                if (next == mask) break;
                mask = next;
            }
            diode_mask = mask;
        }

        // Element scratch + history update.
        for (const auto& s : slots) {
            const double v = element_voltage(x, s);
            double i = 0.0;
            switch (s.e->kind) {
                case ElementKind::Resistor:
                    i = v / s.e->value;
                    break;
                case ElementKind::Switch:
                    i = v / (switch_on(mode, *s.e) ? cfg.r_on : cfg.r_off);
                    break;
                case ElementKind::Diode:
                    if ((mask >> s.diode) & 1u)
                        i = (v - (zero_sources ? 0.0 : cfg.diode_vf)) / cfg.r_on;
                    else
                        i = v / cfg.r_off;
                    break;
                case ElementKind::Capacitor: {
                    const double g = 2.0 * s.e->value / h;
                    i = g * (v - hist_v(s.react)) - hist_i(s.react);
                    break;
                }
                case ElementKind::Inductor:
                case ElementKind::VoltageSource:
                    i = x(s.branch);
                    break;
                case ElementKind::CurrentSource:
                    i = zero_sources ? 0.0 : s.e->value;
                    break;
            }
            elem_v[static_cast<std::size_t>(&s - slots.data())] = v;
            elem_i[static_cast<std::size_t>(&s - slots.data())] = i;
            if (s.react >= 0) {
                hist_v(s.react) = v;
                hist_i(s.react) = i;
            }
        }
        last_x = x;
        t += h;
    }

    Eigen::VectorXd last_x;

    // -------------------------------------------------------------------------

    void snap_schedule(const ModeSchedule& schedule) {
        if (schedule.n_modes() != std::max(net.n_switches, 1))
            throw ValidationError("schedule mode count does not match the switch count");
        if (schedule.dead_time > 0.0)
            throw ValidationError(
                "the engine steps one off-switch per mode; simulate dead time by deriving "
                "a nonsynchronous netlist instead");
        const int N = cfg.steps_per_period;
        period = schedule.period;
        h = period / N;
        duty_exact.clear();
        for (int m = 1; m <= schedule.n_modes(); ++m)
            duty_exact.push_back(schedule.mode_duration(m) / period);
        mode_of_step.assign(static_cast<std::size_t>(N), 1);
        mode_steps.assign(static_cast<std::size_t>(schedule.n_modes()) + 1, 0);
        int prev = 0;
        for (int m = 1; m <= schedule.n_modes(); ++m) {
            const int b = static_cast<int>(
                std::llround(schedule.boundaries[static_cast<std::size_t>(m)] / period * N));
            for (int s = prev; s < b; ++s) mode_of_step[static_cast<std::size_t>(s)] = m;
            mode_steps[static_cast<std::size_t>(m)] = b - prev;
            prev = b;
        }
        // Rounding guard: any leftover steps belong to the last mode.
        for (int s = prev; s < N; ++s) mode_of_step[static_cast<std::size_t>(s)] = schedule.n_modes();
        mode_steps.back() += N - prev;
    }

    void build_channels() {
        channels.clear();
        for (int rs : reactive_slots) {
            const auto& e = *slots[static_cast<std::size_t>(rs)].e;
            channels.push_back(
                (e.kind == ElementKind::Inductor ? "i(" : "v(") + e.id + ")");
        }
        for (const auto& s : slots)
            if (s.e->kind == ElementKind::Capacitor) channels.push_back("i(" + s.e->id + ")");
        for (const auto& [idx, ci] : node_of) {
            (void)ci;
            channels.push_back("v(" + net.node_name(NodeId{idx}) + ")");
        }
        for (const auto& s : slots) {
            if (s.e->kind == ElementKind::Switch || s.e->kind == ElementKind::Diode) {
                channels.push_back("i(" + s.e->id + ")");
                channels.push_back("v(" + s.e->id + ")");
            }
        }
        for (const auto& s : slots)
            if (s.e->kind == ElementKind::VoltageSource)
                channels.push_back("i(" + s.e->id + ")");
        span_channels.clear();
        if (!net.junctions.empty()) {
            std::set<std::pair<int, int>> seen;
            for (const auto& att : attachments) {
                const auto key = std::make_pair(att.span.top, att.span.bottom);
                if (seen.insert(key).second) span_channels.push_back(key);
            }
            for (const auto& [a, b] : span_channels)
                channels.push_back("vspan(" + std::to_string(a) + ":" + std::to_string(b) +
                                   ")");
        }
        for (const auto& s : slots)
            if (s.e->kind == ElementKind::Switch)
                channels.push_back("gate(" + s.e->id + ")");
    }

    void record_sample(WaveformTrace& trace, int mode) {
        std::size_t c = 0;
        auto put = [&](double v) { trace.data[c++].push_back(v); };
        for (int rs : reactive_slots) {
            const Slot& s = slots[static_cast<std::size_t>(rs)];
            put(s.e->kind == ElementKind::Inductor ? hist_i(s.react) : hist_v(s.react));
        }
        for (std::size_t k = 0; k < slots.size(); ++k)
            if (slots[k].e->kind == ElementKind::Capacitor) put(elem_i[k]);
        for (const auto& [idx, ci] : node_of) {
            (void)idx;
            put(last_x(ci));
        }
        for (std::size_t k = 0; k < slots.size(); ++k) {
            if (slots[k].e->kind == ElementKind::Switch ||
                slots[k].e->kind == ElementKind::Diode) {
                put(elem_i[k]);
                put(elem_v[k]);
            }
        }
        for (std::size_t k = 0; k < slots.size(); ++k)
            if (slots[k].e->kind == ElementKind::VoltageSource) put(elem_i[k]);
        for (const auto& [a, b] : span_channels) {
            const NodeId na = net.junctions.at(a);
            const NodeId nb = net.junctions.at(b);
            const double va = na.is_ground() ? 0.0 : last_x(node_of.at(na.index));
            const double vb = nb.is_ground() ? 0.0 : last_x(node_of.at(nb.index));
            put(va - vb);
        }
        for (const auto& s : slots)
            if (s.e->kind == ElementKind::Switch) put(switch_on(mode, *s.e) ? 1.0 : 0.0);
    }

    Eigen::VectorXd run_period(WaveformTrace* trace, bool zero_sources,
                               const std::vector<std::uint32_t>* frozen,
                               std::vector<std::uint32_t>* record_masks) {
        const int N = cfg.steps_per_period;
        if (trace) {
            if (trace->channels.empty()) {
                trace->channels = channels;
                trace->data.assign(channels.size(), {});
                trace->dt = h;
                trace->t0 = t;
                trace->samples_per_period = N;
            }
        }
        if (record_masks) record_masks->assign(static_cast<std::size_t>(N), 0u);
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(n_react);
        for (int s = 0; s < N; ++s) {
            const int mode = mode_of_step[static_cast<std::size_t>(s)];
            const std::uint32_t* fm =
                frozen ? &(*frozen)[static_cast<std::size_t>(s)] : nullptr;
            step(mode, zero_sources, fm);
            if (record_masks) (*record_masks)[static_cast<std::size_t>(s)] = diode_mask;
            if (trace) record_sample(*trace, mode);
            for (int r = 0; r < n_react; ++r) {
                const Slot& sl = slots[static_cast<std::size_t>(reactive_slots[r])];
                sum(r) += (sl.e->kind == ElementKind::Inductor) ? hist_i(r) : hist_v(r);
            }
        }
        last_avg = sum / N;
        return last_avg;
    }

    Eigen::VectorXd extended_state() const {
        Eigen::VectorXd z(2 * n_react);
        for (int r = 0; r < n_react; ++r) {
            z(2 * r) = hist_v(r);
            z(2 * r + 1) = hist_i(r);
        }
        return z;
    }

    void set_extended_state(const Eigen::VectorXd& z) {
        for (int r = 0; r < n_react; ++r) {
            hist_v(r) = z(2 * r);
            hist_i(r) = z(2 * r + 1);
        }
    }
};

// =============================================================================
// Engine public surface
// =============================================================================

SwitchedCircuitEngine::SwitchedCircuitEngine(const Netlist& netlist,
                                             const ModeSchedule& schedule,
                                             const SimConfig& config,
                                             std::vector<Attachment> attachments)
    : impl_(std::make_unique<Impl>()) {
    netlist.validate();
    config.validate();
    impl_->net = netlist;
    impl_->cfg = config;
    impl_->attachments = std::move(attachments);

    int next = 0;
    for (const auto& n : impl_->net.nodes())
        if (!n.is_ground()) impl_->node_of[n.index] = next++;
    impl_->nn = next;

    int branch = impl_->nn;
    impl_->slots.reserve(impl_->net.elements.size());
    for (const auto& e : impl_->net.elements) {
        Impl::Slot s;
        s.e = &e;
        s.na = impl_->compact(e.a);
        s.nb = impl_->compact(e.b);
        if (e.kind == ElementKind::Inductor || e.kind == ElementKind::VoltageSource)
            s.branch = branch++;
        if (e.kind == ElementKind::Inductor || e.kind == ElementKind::Capacitor) {
            s.react = impl_->n_react++;
            impl_->reactive_slots.push_back(static_cast<int>(impl_->slots.size()));
        }
        if (e.kind == ElementKind::Diode) {
            s.diode = impl_->n_diodes++;
            impl_->diode_slots.push_back(static_cast<int>(impl_->slots.size()));
        }
        impl_->slots.push_back(s);
    }
    impl_->dim = branch;
    if (impl_->n_diodes > 30) throw ValidationError("too many diodes");
    impl_->hist_v = Eigen::VectorXd::Zero(impl_->n_react);
    impl_->hist_i = Eigen::VectorXd::Zero(impl_->n_react);
    impl_->elem_v.assign(impl_->slots.size(), 0.0);
    impl_->elem_i.assign(impl_->slots.size(), 0.0);

    impl_->snap_schedule(schedule);
    impl_->build_channels();

    // Stack capacitor per port, for closed-loop measurements.
    const int n = impl_->net.n_switches;
    impl_->port_cap_slot.assign(static_cast<std::size_t>(n) + 1, -1);
    if (!impl_->net.junctions.empty()) {
        for (std::size_t k = 0; k < impl_->slots.size(); ++k) {
            const auto& e = *impl_->slots[k].e;
            if (e.kind != ElementKind::Capacitor) continue;
            for (int i = 1; i <= n; ++i) {
                if (impl_->net.junctions.at(i) == e.a &&
                    impl_->net.junctions.at(i + 1) == e.b)
                    impl_->port_cap_slot[static_cast<std::size_t>(i)] = static_cast<int>(k);
            }
        }
    }

    // Factorize each mode present in the schedule up front so structural
    // problems (floating subcircuits) surface at build time.
    std::set<int> modes(impl_->mode_of_step.begin(), impl_->mode_of_step.end());
    for (int m : modes) impl_->system(m, impl_->diode_mask);
}

SwitchedCircuitEngine::~SwitchedCircuitEngine() = default;
SwitchedCircuitEngine::SwitchedCircuitEngine(SwitchedCircuitEngine&&) noexcept = default;

int SwitchedCircuitEngine::state_dimension() const { return impl_->n_react; }
int SwitchedCircuitEngine::factorized_system_count() const {
    return static_cast<int>(impl_->cache.size());
}
const std::vector<std::string>& SwitchedCircuitEngine::channel_names() const {
    return impl_->channels;
}
double SwitchedCircuitEngine::elapsed_time() const { return impl_->t; }

StateVector SwitchedCircuitEngine::state() const {
    StateVector sv;
    for (int r = 0; r < impl_->n_react; ++r) {
        const auto& s = impl_->slots[static_cast<std::size_t>(impl_->reactive_slots[r])];
        const bool ind = s.e->kind == ElementKind::Inductor;
        sv.values.push_back(ind ? impl_->hist_i(r) : impl_->hist_v(r));
        sv.names.push_back((ind ? "i(" : "v(") + s.e->id + ")");
    }
    return sv;
}

void SwitchedCircuitEngine::set_state(const StateVector& s) {
    if (static_cast<int>(s.values.size()) != impl_->n_react)
        throw ValidationError("state vector dimension mismatch");
    impl_->hist_v.setZero();
    impl_->hist_i.setZero();
    for (int r = 0; r < impl_->n_react; ++r) {
        const auto& sl = impl_->slots[static_cast<std::size_t>(impl_->reactive_slots[r])];
        if (sl.e->kind == ElementKind::Inductor)
            impl_->hist_i(r) = s.values[static_cast<std::size_t>(r)];
        else
            impl_->hist_v(r) = s.values[static_cast<std::size_t>(r)];
    }
}

void SwitchedCircuitEngine::set_schedule(const ModeSchedule& schedule) {
    if (std::abs(schedule.period - impl_->period) > 1e-15 * impl_->period)
        throw ValidationError("schedule period cannot change mid-run");
    impl_->snap_schedule(schedule);
}

DutyVector SwitchedCircuitEngine::realized_duties() const {
    std::vector<double> d;
    for (std::size_t m = 1; m < impl_->mode_steps.size(); ++m)
        d.push_back(static_cast<double>(impl_->mode_steps[m]) / impl_->cfg.steps_per_period);
    return DutyVector::from(std::move(d));
}

void SwitchedCircuitEngine::seed_algebraic() {
    auto& im = *impl_;
    im.hist_v.setZero();
    im.hist_i.setZero();
    if (im.net.junctions.empty()) return;
    try {
        const DutyVector duties = DutyVector::from(im.duty_exact);
        const auto voltages = solve_port_voltages(duties, im.attachments);
        const auto currents = solve_branch_currents(duties, voltages, im.attachments);
        const int n = im.net.n_switches;

        int last_mode = 1;
        for (int k = 1; k <= n; ++k)
            if (duties.of(k) > 0.0) last_mode = k;

        // Flat-model stack current during the final mode, for capacitor
        // current histories.
        double stack_last = currents.top;
        for (int p = 2; p <= last_mode; ++p) stack_last += currents.at(p);

        auto junction_of = [&](const Element& e) -> int {
            for (const auto& [idx, node] : im.net.junctions)
                if (node == e.b) return idx;
            return -1;
        };

        for (int r = 0; r < im.n_react; ++r) {
            const auto& s = im.slots[static_cast<std::size_t>(im.reactive_slots[r])];
            const Element& e = *s.e;
            if (e.kind == ElementKind::Capacitor) {
                for (int i = 1; i <= n; ++i) {
                    if (im.net.junctions.at(i) == e.a && im.net.junctions.at(i + 1) == e.b) {
                        im.hist_v(r) = voltages.port[static_cast<std::size_t>(i - 1)];
                        im.hist_i(r) = stack_last;
                        break;
                    }
                }
            } else {
                const int j = junction_of(e);
                if (j >= 2 && j <= n) {
                    im.hist_i(r) = -currents.at(j) +
                                   inductor_ripple_offset_at_period_start(
                                       duties, voltages, j, e.value, im.period);
                    im.hist_v(r) =
                        seed_inductor_mode_voltage(duties, voltages, j, last_mode);
                } else if (j == 1) {
                    im.hist_i(r) = -currents.top;
                } else if (j == n + 1) {
                    im.hist_i(r) = -currents.ground;
                }
            }
        }
    } catch (const std::exception&) {
        im.hist_v.setZero();
        im.hist_i.setZero();
    }
}

bool SwitchedCircuitEngine::refine_to_periodic_orbit() {
    auto& im = *impl_;
    const int zdim = 2 * im.n_react;
    if (zdim == 0) return true;
    const double t_saved = im.t;
    const std::uint32_t mask_saved = im.diode_mask;

    Eigen::VectorXd z0 = im.extended_state();
    std::vector<std::uint32_t> masks;
    im.run_period(nullptr, false, nullptr, &masks);
    Eigen::VectorXd fz0 = im.extended_state();
    const double baseline = (fz0 - z0).norm() / (1.0 + z0.norm());

    for (int iter = 0; iter < 3; ++iter) {
        Eigen::MatrixXd phi(zdim, zdim);
        for (int j = 0; j < zdim; ++j) {
            im.set_extended_state(Eigen::VectorXd::Unit(zdim, j));
            im.run_period(nullptr, true, &masks, nullptr);
            phi.col(j) = im.extended_state();
        }
        const Eigen::VectorXd psi = fz0 - phi * z0;
        // A capacitor strapped across an ideal source carries an exactly
        // undamped (and dynamically irrelevant) alternating history mode, so
        // I - Phi can be singular; the min-norm least-squares solution picks
        // the orbit with that component zeroed.
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(
            Eigen::MatrixXd::Identity(zdim, zdim) - phi);
        const Eigen::VectorXd zstar = cod.solve(psi);
        if (!zstar.allFinite()) {
            im.set_extended_state(fz0);
            im.t = t_saved;
            im.diode_mask = mask_saved;
            return false;
        }
        im.set_extended_state(zstar);
        im.diode_mask = mask_saved;
        std::vector<std::uint32_t> masks2;
        im.run_period(nullptr, false, nullptr, &masks2);
        const Eigen::VectorXd fzstar = im.extended_state();
        const double quality = (fzstar - zstar).norm() / (1.0 + zstar.norm());
        if (quality > baseline) { // no better than the plain seed: back out
            im.set_extended_state(fz0);
            im.t = t_saved;
            im.diode_mask = mask_saved;
            return false;
        }
        if (masks2 == masks || im.n_diodes == 0) {
            im.t = t_saved;
            return true;
        }
        masks = masks2;
        z0 = zstar;
        fz0 = fzstar;
    }
    im.t = t_saved;
    return true;
}

Eigen::VectorXd SwitchedCircuitEngine::run_period(WaveformTrace* trace) {
    return impl_->run_period(trace, false, nullptr, nullptr);
}

std::vector<double> SwitchedCircuitEngine::last_period_port_voltage_means() const {
    auto& im = *impl_;
    const int n = im.net.n_switches;
    std::vector<double> out(static_cast<std::size_t>(n), 0.0);
    for (int i = 1; i <= n; ++i) {
        const int slot = im.port_cap_slot[static_cast<std::size_t>(i)];
        if (slot < 0)
            throw ValidationError("port voltages need a universalized netlist");
        const auto& s = im.slots[static_cast<std::size_t>(slot)];
        out[static_cast<std::size_t>(i - 1)] = im.last_avg(s.react);
    }
    return out;
}

// =============================================================================
// Driver loops
// =============================================================================

SimResult run_to_steady_state(const Netlist& netlist, const ModeSchedule& schedule,
                              const SimConfig& config,
                              const std::vector<Attachment>& attachments) {
    SwitchedCircuitEngine engine(netlist, schedule, config, attachments);
    if (config.init_mode == InitMode::Algebraic) {
        engine.seed_algebraic();
        engine.refine_to_periodic_orbit();
    }

    SimResult result;
    Eigen::VectorXd prev;
    int p = 0;
    for (p = 1; p <= config.n_periods_max; ++p) {
        const Eigen::VectorXd avg = engine.run_period();
        if (p >= 2 && relative_change(avg, prev) < config.ss_tolerance) {
            result.converged = true;
            break;
        }
        prev = avg;
    }
    result.periods_used = std::min(p, config.n_periods_max);
    engine.run_period(&result.trace);
    result.final_state = engine.state();
    result.duties = engine.realized_duties();
    return result;
}

WaveformTrace simulate_periods(const Netlist& netlist, const ModeSchedule& schedule,
                               const SimConfig& config,
                               const std::vector<Attachment>& attachments,
                               const StateVector* initial, int periods) {
    SwitchedCircuitEngine engine(netlist, schedule, config, attachments);
    if (initial) engine.set_state(*initial);
    WaveformTrace trace;
    for (int p = 0; p < periods; ++p) engine.run_period(&trace);
    return trace;
}

ClosedLoopResult run_closed_loop(const Netlist& netlist, const SimConfig& config,
                                 const ClosedLoopSpec& spec,
                                 const std::vector<Attachment>& attachments) {
    ModeSchedule schedule = make_schedule(spec.initial_duties, config.f_sw);
    SwitchedCircuitEngine engine(netlist, schedule, config, attachments);
    if (config.init_mode == InitMode::Algebraic) {
        engine.seed_algebraic();
        engine.refine_to_periodic_orbit();
    }

    ClosedLoopResult result;
    result.duties = spec.initial_duties;
    ControllerState ctl;
    Eigen::VectorXd prev;
    int p = 0;
    for (p = 1; p <= config.n_periods_max; ++p) {
        const Eigen::VectorXd avg = engine.run_period();
        const auto meas = engine.last_period_port_voltage_means();
        auto [next, st] = update_duties(meas, spec.references, spec.gains, result.duties,
                                        spec.slack_port, std::move(ctl), schedule.period);
        ctl = std::move(st);

        double duty_delta = 0.0;
        for (int i = 1; i <= next.size(); ++i)
            duty_delta = std::max(duty_delta, std::abs(next.of(i) - result.duties.of(i)));
        result.duties = next;
        result.duty_history.push_back(next.values());
        engine.set_schedule(make_schedule(next, config.f_sw));

        if (p >= 2 && duty_delta < spec.duty_tolerance &&
            relative_change(avg, prev) < config.ss_tolerance) {
            result.converged = true;
            break;
        }
        prev = avg;
    }
    result.periods_used = std::min(p, config.n_periods_max);
    engine.run_period(&result.trace);
    return result;
}

} // namespace mpcsim
