// mpcsim command-line front end.
//
// Exit codes: 0 success, 1 I/O or internal failure, 2 validation error,
// 3 inconsistent operating point, 4 simulation did not converge,
// 5 no nonsynchronous derivation exists.

#include "mpcsim/analysis.hpp"
#include "mpcsim/errors.hpp"
#include "mpcsim/scenario.hpp"
#include "mpcsim/simulator.hpp"
#include "mpcsim/spice_export.hpp"
#include "mpcsim/topology.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>

namespace {

using namespace mpcsim;
using nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitValidation = 2;
constexpr int kExitInconsistency = 3;
constexpr int kExitNonConvergence = 4;
constexpr int kExitDerivation = 5;

struct CommonOpts {
    std::string config;
    std::string scenario;
    std::string out;
    bool json = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_json = true) {
    cmd->add_option("--config", opts.config, "scenario config file (JSON)");
    cmd->add_option("--scenario", opts.scenario, "built-in scenario name");
    cmd->add_option("--out", opts.out, "output path");
    if (with_json) cmd->add_flag("--json", opts.json, "JSON output");
}

ScenarioConfig load_scenario(const CommonOpts& opts) {
    if (!opts.scenario.empty()) return ScenarioConfig::builtin(opts.scenario);
    if (!opts.config.empty()) return ScenarioConfig::from_json_file(opts.config);
    throw ValidationError("provide --config PATH or --scenario NAME");
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open output file '" + path + "'");
    out << text;
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

int cmd_enumerate(int n, int inputs_filter, bool as_json) {
    const auto assignments = enumerate_port_assignments(n);
    ordered_json rows = ordered_json::array();
    int shown = 0;
    for (const auto& a : assignments) {
        if (inputs_filter > 0 && a.input_count() != inputs_filter) continue;
        ++shown;
        if (as_json) {
            ordered_json row;
            row["inputs"] = a.inputs();
            row["outputs"] = a.outputs();
            row["k"] = a.input_count();
            row["p"] = n - a.input_count();
            rows.push_back(row);
        } else {
            std::cout << "inputs={";
            const auto in = a.inputs();
            for (std::size_t i = 0; i < in.size(); ++i)
                std::cout << (i ? "," : "") << in[i];
            std::cout << "} outputs={";
            const auto outp = a.outputs();
            for (std::size_t i = 0; i < outp.size(); ++i)
                std::cout << (i ? "," : "") << outp[i];
            std::cout << "} (k=" << a.input_count() << ", p=" << n - a.input_count()
                      << ")\n";
        }
    }
    if (as_json) {
        ordered_json j;
        j["n"] = n;
        j["assignments"] = rows;
        j["total"] = shown;
        std::cout << j.dump(2) << '\n';
    } else {
        if (inputs_filter > 0)
            std::cout << "total: " << shown << '\n';
        else
            std::cout << "total: " << shown << " = 2^" << n << " - 2\n";
    }
    return kExitOk;
}

int cmd_analyze(const CommonOpts& opts) {
    const auto cfg = load_scenario(opts);
    const auto report = analyze(cfg.descriptor, cfg.duties);
    write_text(opts.out, report_json(report).dump(2) + "\n");
    return kExitOk;
}

int cmd_simulate(const CommonOpts& opts, int sweep, std::uint64_t seed) {
    if (sweep > 0) {
        const auto results = run_oracle_sweep(sweep, seed);
        double worst = 0.0;
        int unconverged = 0;
        for (const auto& r : results) {
            worst = std::max(worst, r.max_span_error_rel);
            if (!r.converged) ++unconverged;
        }
        ordered_json j;
        j["points"] = sweep;
        j["seed"] = seed;
        j["max_span_error_rel"] = worst;
        j["unconverged"] = unconverged;
        std::cout << j.dump(2) << '\n';
        return unconverged == 0 ? kExitOk : kExitNonConvergence;
    }

    const auto cfg = load_scenario(opts);
    const Netlist net = cfg.build();
    const auto schedule = make_schedule(cfg.duties, cfg.sim.f_sw);
    const SimResult result =
        run_to_steady_state(net, schedule, cfg.sim, cfg.descriptor.attachments);

    const std::string trace_path = opts.out.empty() ? "trace.csv" : opts.out;
    std::ofstream csv(trace_path);
    if (!csv) throw std::runtime_error("cannot open output file '" + trace_path + "'");
    result.trace.write_csv(csv);

    std::cout << summary_json(cfg, net, result).dump(2) << '\n';
    return result.converged ? kExitOk : kExitNonConvergence;
}

int cmd_derive(const CommonOpts& opts) {
    const auto cfg = load_scenario(opts);
    const Netlist net = cfg.build();
    const auto report = analyze(cfg.descriptor, cfg.duties);
    const auto derived = derive_nonsynchronous(net, report);

    for (const auto& sub : derived.substitutions) {
        std::cout << "S" << sub.switch_index << " -> D" << sub.switch_index
                  << " (per-mode currents:";
        for (double c : sub.mode_currents) std::cout << ' ' << c;
        std::cout << " A)\n";
    }
    std::cout << derived.substitutions.size() << " of " << net.n_switches
              << " switches replaced\n";
    if (!opts.out.empty())
        write_text(opts.out, export_netlist(derived.netlist, cfg.duties, cfg.sim.f_sw));
    return kExitOk;
}

int cmd_export(const CommonOpts& opts) {
    const auto cfg = load_scenario(opts);
    const Netlist net = cfg.build();
    write_text(opts.out, export_netlist(net, cfg.duties, cfg.sim.f_sw));
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"mpcsim - integrated multiport dc-dc converter workbench"};
    app.require_subcommand(1);

    int enum_n = 0, enum_inputs = 0;
    bool enum_json = false;
    auto* enumerate = app.add_subcommand("enumerate", "list port assignments");
    enumerate->add_option("--n", enum_n, "switch count")->required();
    enumerate->add_option("--inputs", enum_inputs, "only assignments with k inputs");
    enumerate->add_flag("--json", enum_json, "JSON output");

    CommonOpts analyze_opts, simulate_opts, derive_opts, export_opts;
    auto* analyze_cmd = app.add_subcommand("analyze", "algebraic steady-state report");
    add_common(analyze_cmd, analyze_opts);
    auto* simulate_cmd = app.add_subcommand("simulate", "time-domain simulation");
    add_common(simulate_cmd, simulate_opts);
    int sweep = 0;
    std::uint64_t seed = 1;
    simulate_cmd->add_option("--sweep", sweep, "run N random oracle comparison points");
    simulate_cmd->add_option("--seed", seed, "sweep seed");
    auto* derive_cmd = app.add_subcommand("derive", "nonsynchronous derivation");
    add_common(derive_cmd, derive_opts);
    auto* export_cmd = app.add_subcommand("export", "SPICE-compatible netlist");
    add_common(export_cmd, export_opts);

    CLI11_PARSE(app, argc, argv);

    try {
        if (enumerate->parsed()) return cmd_enumerate(enum_n, enum_inputs, enum_json);
        if (analyze_cmd->parsed()) return cmd_analyze(analyze_opts);
        if (simulate_cmd->parsed()) return cmd_simulate(simulate_opts, sweep, seed);
        if (derive_cmd->parsed()) return cmd_derive(derive_opts);
        if (export_cmd->parsed()) return cmd_export(export_opts);
    } catch (const InconsistencyError& e) {
        std::cerr << "error: " << e.what() << "\n  implied stack voltages: "
                  << e.implied_a << " V vs " << e.implied_b << " V\n";
        return kExitInconsistency;
    } catch (const DerivationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitDerivation;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    }
    return kExitOk;
}
