#pragma once

// =============================================================================
// Scenario configs: the bridge between files/CLI and the library.
// =============================================================================

#include "mpcsim/analysis.hpp"
#include "mpcsim/netlist.hpp"
#include "mpcsim/pwm.hpp"
#include "mpcsim/simulator.hpp"

#include <nlohmann/json_fwd.hpp>

#include <string>
#include <vector>

namespace mpcsim {

struct ScenarioConfig {
    std::string name = "custom";
    TopologyDescriptor descriptor;
    DutyVector duties = DutyVector::from({1.0});
    SimConfig sim;

    Netlist build() const { return build_netlist(*this); }

    static Netlist build_netlist(const ScenarioConfig& cfg);
    static ScenarioConfig builtin(const std::string& name);
    static std::vector<std::string> builtin_names();
    static ScenarioConfig from_json_text(const std::string& text);
    static ScenarioConfig from_json_file(const std::string& path);
};

/// Mean of a channel over the samples belonging to mode k of the final
/// recorded period.
double mode_mean(const WaveformTrace& trace, const DutyVector& realized,
                 const std::string& channel, int mode);

/// Steady-state report rendered as JSON (ordered keys, round-trippable
/// doubles).
nlohmann::ordered_json report_json(const SteadyStateReport& report);

/// Simulation summary: span/port means, ripples, balance and stress figures
/// derived from the final-period trace.
nlohmann::ordered_json summary_json(const ScenarioConfig& cfg, const Netlist& netlist,
                                    const SimResult& result);

/// Seeded random synchronous operating point: n in 2..5, duties >= 0.05 on
/// the step grid, one stiff source and one to three resistive loads across
/// random junction spans. Used by the oracle sweep.
ScenarioConfig random_synchronous_scenario(std::uint64_t seed);

struct OracleComparison {
    bool converged = false;
    double max_span_error_rel = 0.0; // worst |sim - algebraic| / |algebraic|
};

/// Simulates the scenario and compares every attachment span's final-period
/// mean voltage against the algebraic solver.
OracleComparison compare_with_oracle(const ScenarioConfig& cfg);

/// Runs `count` seeded oracle comparisons (seed, seed+1, ...) across up to
/// `threads` workers (0 = hardware concurrency, capped by MPCSIM_THREADS).
std::vector<OracleComparison> run_oracle_sweep(int count, std::uint64_t seed, int threads = 0);

} // namespace mpcsim
