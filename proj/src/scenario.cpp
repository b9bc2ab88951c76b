#include "mpcsim/scenario.hpp"

#include "mpcsim/errors.hpp"
#include "mpcsim/topology.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

namespace mpcsim {

using nlohmann::json;
using nlohmann::ordered_json;

Netlist ScenarioConfig::build_netlist(const ScenarioConfig& cfg) {
    return build_universalized(cfg.descriptor);
}

std::vector<std::string> ScenarioConfig::builtin_names() {
    return {"sido-fig10a", "diso-fig10b"};
}

ScenarioConfig ScenarioConfig::builtin(const std::string& name) {
    ScenarioConfig cfg;
    cfg.name = name;
    cfg.descriptor.n = 3;
    cfg.descriptor.inductance = 0.72e-3;
    cfg.descriptor.capacitance = 560e-6;
    cfg.duties = DutyVector::from({0.35, 0.25, 0.40});
    cfg.sim.f_sw = 30e3;
    if (name == "sido-fig10a") {
        cfg.descriptor.attachments = {
            {{3, 4}, AttachmentKind::VoltageSource, 40.0},
            {{1, 4}, AttachmentKind::ResistiveLoad, 50.0},
            {{2, 4}, AttachmentKind::ResistiveLoad, 50.0},
        };
    } else if (name == "diso-fig10b") {
        cfg.descriptor.attachments = {
            {{1, 4}, AttachmentKind::VoltageSource, 50.0},
            {{3, 4}, AttachmentKind::VoltageSource, 20.0},
            {{2, 4}, AttachmentKind::ResistiveLoad, 50.0},
        };
    } else {
        throw ValidationError("unknown scenario '" + name + "'");
    }
    return cfg;
}

namespace {

AttachmentKind attachment_kind_from(const std::string& s) {
    if (s == "voltage-source") return AttachmentKind::VoltageSource;
    if (s == "resistive-load") return AttachmentKind::ResistiveLoad;
    if (s == "current-load") return AttachmentKind::CurrentLoad;
    if (s == "open") return AttachmentKind::Open;
    throw ValidationError("unknown attachment kind '" + s + "'");
}

InductorStyle style_from(const std::string& s) {
    if (s == "middle-branches") return InductorStyle::MiddleBranches;
    if (s == "plus-top") return InductorStyle::PlusTop;
    if (s == "plus-top-and-bottom") return InductorStyle::PlusTopAndBottom;
    throw ValidationError("unknown inductor style '" + s + "'");
}

} // namespace

ScenarioConfig ScenarioConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("config parse error: ") + e.what());
    }
    try {
        ScenarioConfig cfg;
        cfg.name = j.value("name", "custom");
        cfg.descriptor.n = j.at("n").get<int>();
        cfg.descriptor.inductance = j.at("inductance").get<double>();
        cfg.descriptor.capacitance = j.at("capacitance").get<double>();
        cfg.descriptor.synchronous = j.value("synchronous", true);
        cfg.descriptor.inductor_style =
            style_from(j.value("inductor_style", std::string("middle-branches")));
        for (const auto& [key, val] : j.value("inductance_overrides", json::object()).items())
            cfg.descriptor.inductance_overrides[std::stoi(key)] = val.get<double>();
        for (const auto& [key, val] : j.value("capacitance_overrides", json::object()).items())
            cfg.descriptor.capacitance_overrides[std::stoi(key)] = val.get<double>();
        for (const auto& a : j.at("attachments")) {
            Attachment att;
            att.kind = attachment_kind_from(a.at("kind").get<std::string>());
            const auto& span = a.at("span");
            att.span = PortSpan{span.at(0).get<int>(), span.at(1).get<int>()};
            att.value = a.value("value", 0.0);
            cfg.descriptor.attachments.push_back(att);
        }
        cfg.duties = DutyVector::from(j.at("duties").get<std::vector<double>>());
        if (cfg.duties.size() != cfg.descriptor.n)
            throw ValidationError("duty vector size does not match n");
        cfg.sim.f_sw = j.at("f_sw").get<double>();
        if (j.contains("sim")) {
            const auto& s = j.at("sim");
            cfg.sim.steps_per_period = s.value("steps_per_period", cfg.sim.steps_per_period);
            cfg.sim.n_periods_max = s.value("n_periods_max", cfg.sim.n_periods_max);
            cfg.sim.ss_tolerance = s.value("ss_tolerance", cfg.sim.ss_tolerance);
            cfg.sim.r_on = s.value("r_on", cfg.sim.r_on);
            cfg.sim.r_off = s.value("r_off", cfg.sim.r_off);
            cfg.sim.diode_vf = s.value("diode_vf", cfg.sim.diode_vf);
            const std::string init = s.value("init_mode", std::string("algebraic"));
            if (init == "zero") cfg.sim.init_mode = InitMode::Zero;
            else if (init == "algebraic") cfg.sim.init_mode = InitMode::Algebraic;
            else throw ValidationError("unknown init_mode '" + init + "'");
        }
        cfg.descriptor.validate();
        cfg.sim.validate();
        return cfg;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config error: ") + e.what());
    }
}

ScenarioConfig ScenarioConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

double mode_mean(const WaveformTrace& trace, const DutyVector& realized,
                 const std::string& channel, int mode) {
    const auto& col = trace.channel(channel);
    const int N = trace.samples_per_period;
    const int base = static_cast<int>(col.size()) - N;
    if (base < 0) throw ValidationError("trace shorter than one period");
    int begin = 0;
    for (int m = 1; m < mode; ++m)
        begin += static_cast<int>(std::llround(realized.of(m) * N));
    const int count = static_cast<int>(std::llround(realized.of(mode) * N));
    if (count == 0) return 0.0;
    double sum = 0.0;
    for (int s = begin; s < begin + count; ++s) sum += col[static_cast<std::size_t>(base + s)];
    return sum / count;
}

ordered_json report_json(const SteadyStateReport& report) {
    ordered_json j;
    j["v0"] = report.voltages.v0;
    j["port_voltages"] = report.voltages.port;
    j["duties"] = report.duties.values();
    ordered_json cur;
    cur["top"] = report.currents.top;
    ordered_json junction = ordered_json::object();
    for (int i = 2; i <= report.duties.size(); ++i)
        junction[std::to_string(i)] = report.currents.at(i);
    cur["junction"] = junction;
    cur["ground"] = report.currents.ground;
    cur["source"] = report.currents.source;
    j["branch_currents"] = cur;
    j["switch_voltage_stress"] = report.switch_voltage_stress;
    ordered_json table = ordered_json::array();
    const int n = report.stress_table.size();
    for (int mode = 1; mode <= n; ++mode) {
        ordered_json row = ordered_json::array();
        for (int sw = 1; sw <= n; ++sw) row.push_back(report.stress_table.entry(mode, sw));
        table.push_back(row);
    }
    j["stress_table"] = table;
    j["power_balance_residual"] = report.power_balance_residual;
    j["consistent"] = true;
    return j;
}

ordered_json summary_json(const ScenarioConfig& cfg, const Netlist& netlist,
                          const SimResult& result) {
    const auto& trace = result.trace;
    ordered_json j;
    j["scenario"] = cfg.name;
    j["converged"] = result.converged;
    j["periods_used"] = result.periods_used;
    j["f_sw"] = cfg.sim.f_sw;
    j["duties_realized"] = result.duties.values();

    auto chan_mean = [&](const std::string& name) { return measure(trace, name, 1).mean; };

    ordered_json spans = ordered_json::object();
    for (const auto& att : cfg.descriptor.attachments) {
        const std::string key =
            std::to_string(att.span.top) + ":" + std::to_string(att.span.bottom);
        if (!spans.contains(key))
            spans[key] = chan_mean("vspan(" + key + ")");
    }
    j["span_voltage_means"] = spans;

    ordered_json lmean = ordered_json::object(), lpp = ordered_json::object(),
                 lbal = ordered_json::object();
    ordered_json cbal = ordered_json::object();
    for (const auto& e : netlist.elements) {
        if (e.kind == ElementKind::Inductor) {
            const auto st = measure(trace, "i(" + e.id + ")", 1);
            lmean[e.id] = st.mean;
            lpp[e.id] = st.peak_to_peak;
            const double va = e.a.is_ground() ? 0.0 : chan_mean("v(" + netlist.node_name(e.a) + ")");
            const double vb = e.b.is_ground() ? 0.0 : chan_mean("v(" + netlist.node_name(e.b) + ")");
            lbal[e.id] = va - vb; // mean inductor voltage, ~0 at steady state
        } else if (e.kind == ElementKind::Capacitor) {
            cbal[e.id] = chan_mean("i(" + e.id + ")");
        }
    }
    j["inductor_current_means"] = lmean;
    j["inductor_ripple_pp"] = lpp;
    j["inductor_voltage_means"] = lbal;
    j["capacitor_current_means"] = cbal;

    // Switch stress: peak voltage while open, per-mode average currents.
    ordered_json stress = ordered_json::object();
    ordered_json vmax = ordered_json::object();
    for (const auto& e : netlist.elements) {
        if (e.kind != ElementKind::Switch) continue;
        const auto& v = trace.channel("v(" + e.id + ")");
        const auto& g = trace.channel("gate(" + e.id + ")");
        double peak = 0.0;
        const int N = trace.samples_per_period;
        for (int s = static_cast<int>(v.size()) - N; s < static_cast<int>(v.size()); ++s)
            if (g[static_cast<std::size_t>(s)] < 0.5)
                peak = std::max(peak, v[static_cast<std::size_t>(s)]);
        vmax[e.id] = peak;
    }
    stress["max_open_voltage"] = vmax;
    const int n = netlist.n_switches;
    ordered_json table = ordered_json::array();
    for (int mode = 1; mode <= n; ++mode) {
        ordered_json row = ordered_json::array();
        for (int sw = 1; sw <= n; ++sw) {
            const Element* e = netlist.find("S" + std::to_string(sw));
            if (!e) e = netlist.find("D" + std::to_string(sw));
            row.push_back(e ? mode_mean(trace, result.duties, "i(" + e->id + ")", mode) : 0.0);
        }
        table.push_back(row);
    }
    stress["per_mode_switch_current_avg"] = table;
    j["switch_stress"] = stress;

    // Attachment powers from instantaneous span voltages.
    double p_in = 0.0, p_out = 0.0;
    int n_v = 0;
    for (const auto& att : cfg.descriptor.attachments) {
        const std::string key =
            std::to_string(att.span.top) + ":" + std::to_string(att.span.bottom);
        switch (att.kind) {
            case AttachmentKind::VoltageSource: {
                ++n_v;
                const double i_del = -chan_mean("i(V" + std::to_string(n_v) + ")");
                p_in += att.value * i_del;
                break;
            }
            case AttachmentKind::ResistiveLoad: {
                const auto st = measure(trace, "vspan(" + key + ")", 1);
                p_out += st.rms * st.rms / att.value;
                break;
            }
            case AttachmentKind::CurrentLoad:
                p_out += chan_mean("vspan(" + key + ")") * att.value;
                break;
            case AttachmentKind::Open:
                break;
        }
    }
    ordered_json power;
    power["delivered_w"] = p_in;
    power["consumed_w"] = p_out;
    power["residual_w"] = p_in - p_out;
    j["power"] = power;
    return j;
}

ScenarioConfig random_synchronous_scenario(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto uniform = [&](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    auto uniform_int = [&](int lo, int hi) {
        return std::uniform_int_distribution<int>(lo, hi)(rng);
    };

    ScenarioConfig cfg;
    cfg.name = "random-" + std::to_string(seed);
    const int n = uniform_int(2, 5);
    cfg.descriptor.n = n;
    cfg.descriptor.inductance = 0.72e-3;
    cfg.descriptor.capacitance = 560e-6;
    cfg.sim.f_sw = 30e3;
    cfg.sim.n_periods_max = 2000;

    // Duties on the 1/steps grid with every D_i >= 0.05, so the snapped
    // schedule realizes them exactly.
    const int grid = cfg.sim.steps_per_period;
    const int floor_units = grid / 20;
    std::vector<int> units(static_cast<std::size_t>(n), floor_units);
    for (int left = grid - floor_units * n; left > 0; --left)
        units[static_cast<std::size_t>(uniform_int(0, n - 1))] += 1;
    std::vector<double> d;
    for (int u : units) d.push_back(static_cast<double>(u) / grid);
    cfg.duties = DutyVector::from(std::move(d));

    auto random_span = [&]() {
        const int a = uniform_int(1, n);
        const int b = uniform_int(a + 1, n + 1);
        return PortSpan{a, b};
    };
    cfg.descriptor.attachments.push_back(
        {random_span(), AttachmentKind::VoltageSource, uniform(10.0, 100.0)});
    const int n_loads = uniform_int(1, 3);
    for (int k = 0; k < n_loads; ++k)
        cfg.descriptor.attachments.push_back(
            {random_span(), AttachmentKind::ResistiveLoad, uniform(20.0, 200.0)});
    return cfg;
}

OracleComparison compare_with_oracle(const ScenarioConfig& cfg) {
    const Netlist net = cfg.build();
    const auto schedule = make_schedule(cfg.duties, cfg.sim.f_sw);
    const SimResult sim =
        run_to_steady_state(net, schedule, cfg.sim, cfg.descriptor.attachments);
    const auto voltages = solve_port_voltages(cfg.duties, cfg.descriptor.attachments);

    OracleComparison out;
    out.converged = sim.converged;
    for (const auto& att : cfg.descriptor.attachments) {
        const std::string key =
            std::to_string(att.span.top) + ":" + std::to_string(att.span.bottom);
        const double expected = voltages.span(att.span.top, att.span.bottom);
        const double got = measure(sim.trace, "vspan(" + key + ")", 1).mean;
        const double denom = std::max(std::abs(expected), 0.01 * std::abs(voltages.v0));
        out.max_span_error_rel =
            std::max(out.max_span_error_rel, std::abs(got - expected) / denom);
    }
    return out;
}

std::vector<OracleComparison> run_oracle_sweep(int count, std::uint64_t seed, int threads) {
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    if (const char* cap = std::getenv("MPCSIM_THREADS")) {
        const int c = std::atoi(cap);
        if (c > 0) threads = std::min(threads, c);
    }
    threads = std::max(1, std::min(threads, count));

    std::vector<OracleComparison> results(static_cast<std::size_t>(count));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t]() {
            for (int k = t; k < count; k += threads)
                results[static_cast<std::size_t>(k)] =
                    compare_with_oracle(random_synchronous_scenario(seed + static_cast<std::uint64_t>(k)));
        });
    }
    for (auto& th : pool) th.join();
    return results;
}

} // namespace mpcsim
