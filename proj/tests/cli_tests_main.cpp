// Exit-code and output contract tests for the mpcsim CLI, driven through
// the real binary (path in MPCSIM_BIN).

#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int g_failures = 0;

void expect(bool ok, const std::string& what) {
    std::printf("%s: %s\n", ok ? "ok" : "FAIL", what.c_str());
    if (!ok) ++g_failures;
}

struct RunResult {
    int exit_code = -1;
    std::string out;
};

RunResult run(const std::string& args) {
    const char* bin = std::getenv("MPCSIM_BIN");
    if (!bin) {
        std::fprintf(stderr, "MPCSIM_BIN not set\n");
        std::exit(1);
    }
    const std::string cmd = std::string(bin) + " " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    RunResult r;
    if (!pipe) return r;
    std::array<char, 4096> buf{};
    std::size_t n = 0;
    while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string write_temp(const std::string& name, const std::string& text) {
    const fs::path p = fs::temp_directory_path() / name;
    std::ofstream(p) << text;
    return p.string();
}

} // namespace

int main() {
    // enumerate
    auto r = run("enumerate --n 3");
    expect(r.exit_code == 0, "enumerate --n 3 exits 0");
    expect(r.out.find("total: 6 = 2^3 - 2") != std::string::npos, "enumerate footer");
    r = run("enumerate --n 3 --inputs 2");
    expect(r.out.find("total: 3") != std::string::npos, "enumerate --inputs filter");
    r = run("enumerate --n 1");
    expect(r.exit_code == 2, "enumerate --n 1 exits 2");

    // analyze built-ins
    r = run("analyze --scenario sido-fig10a");
    expect(r.exit_code == 0, "analyze sido-fig10a exits 0");
    {
        const auto j = json::parse(r.out, nullptr, false);
        expect(!j.is_discarded(), "analyze emits JSON");
        expect(std::abs(j.at("v0").get<double>() - 100.0) < 1e-9, "analyze v0 = 100");
    }
    r = run("analyze --scenario diso-fig10b");
    {
        const auto j = json::parse(r.out, nullptr, false);
        const auto ports = j.at("port_voltages").get<std::vector<double>>();
        expect(std::abs(ports[1] + ports[2] - 32.5) < 1e-9, "analyze output span 32.5 V");
    }

    // validation failure: duty sum 0.9
    const auto bad = write_temp("mpcsim_bad.json", R"({
        "n": 3, "duties": [0.3, 0.3, 0.3], "f_sw": 30000.0,
        "inductance": 0.00072, "capacitance": 0.00056,
        "attachments": [{"kind": "voltage-source", "span": [1, 4], "value": 10.0}]
    })");
    r = run("analyze --config " + bad);
    expect(r.exit_code == 2, "duty sum 0.9 exits 2");

    // inconsistency: conflicting sources
    const auto conflict = write_temp("mpcsim_conflict.json", R"({
        "n": 3, "duties": [0.35, 0.25, 0.40], "f_sw": 30000.0,
        "inductance": 0.00072, "capacitance": 0.00056,
        "attachments": [
            {"kind": "voltage-source", "span": [1, 4], "value": 50.0},
            {"kind": "voltage-source", "span": [3, 4], "value": 21.0}
        ]
    })");
    r = run("analyze --config " + conflict);
    expect(r.exit_code == 3, "conflicting sources exit 3");

    // missing config file
    r = run("analyze --config /nonexistent/config.json");
    expect(r.exit_code == 1, "missing config exits 1");

    // simulate
    const auto trace_path = (fs::temp_directory_path() / "mpcsim_trace.csv").string();
    r = run("simulate --scenario sido-fig10a --out " + trace_path);
    expect(r.exit_code == 0, "simulate sido-fig10a exits 0");
    {
        const auto j = json::parse(r.out, nullptr, false);
        expect(!j.is_discarded() && j.at("converged").get<bool>(), "simulate converged");
        const double v = j.at("span_voltage_means").at("1:4").get<double>();
        expect(v > 98.0 && v < 102.0, "simulate span 1:4 within 2% of 100 V");
        std::ifstream csv(trace_path);
        std::string header;
        std::getline(csv, header);
        expect(header.rfind("time,", 0) == 0, "trace CSV header starts with time");
    }
    r = run("simulate --scenario diso-fig10b --out " + trace_path);
    {
        const auto j = json::parse(r.out, nullptr, false);
        const double v = j.at("span_voltage_means").at("2:4").get<double>();
        expect(v > 31.85 && v < 33.15, "simulate span 2:4 within 2% of 32.5 V");
    }

    // zero source: all-zero summary
    const auto zero = write_temp("mpcsim_zero.json", R"({
        "n": 3, "duties": [0.35, 0.25, 0.40], "f_sw": 30000.0,
        "inductance": 0.00072, "capacitance": 0.00056,
        "attachments": [
            {"kind": "voltage-source", "span": [3, 4], "value": 0.0},
            {"kind": "resistive-load", "span": [1, 4], "value": 50.0}
        ]
    })");
    r = run("simulate --config " + zero + " --out " + trace_path);
    {
        const auto j = json::parse(r.out, nullptr, false);
        expect(r.exit_code == 0 &&
                   std::abs(j.at("span_voltage_means").at("1:4").get<double>()) < 1e-9,
               "zero-valued source yields an all-zero summary");
    }

    // derive
    r = run("derive --scenario diso-fig10b");
    expect(r.exit_code == 0, "derive diso-fig10b exits 0");
    expect(r.out.find("S2 -> D2") != std::string::npos, "derive reports S2 -> D2");
    const auto idle = write_temp("mpcsim_idle.json", R"({
        "n": 3, "duties": [0.35, 0.25, 0.40], "f_sw": 30000.0,
        "inductance": 0.00072, "capacitance": 0.00056,
        "attachments": [
            {"kind": "voltage-source", "span": [1, 4], "value": 100.0},
            {"kind": "voltage-source", "span": [2, 4], "value": 65.0},
            {"kind": "voltage-source", "span": [3, 4], "value": 40.0}
        ]
    })");
    r = run("derive --config " + idle);
    expect(r.exit_code == 5, "idle power flow exits 5");

    // export determinism and card count
    const auto net_path = (fs::temp_directory_path() / "mpcsim_export.cir").string();
    r = run("export --scenario sido-fig10a --out " + net_path);
    expect(r.exit_code == 0, "export exits 0");
    std::string first, second;
    {
        std::ifstream in(net_path);
        first.assign(std::istreambuf_iterator<char>(in), {});
    }
    run("export --scenario sido-fig10a --out " + net_path);
    {
        std::ifstream in(net_path);
        second.assign(std::istreambuf_iterator<char>(in), {});
    }
    expect(!first.empty() && first == second, "repeated export is byte-identical");
    {
        int cards = 0;
        std::istringstream ss(first);
        std::string line;
        while (std::getline(ss, line)) {
            if (line.empty() || line[0] == '*' || line[0] == '.') continue;
            if (line.rfind("VG", 0) == 0) continue; // gate drives
            ++cards;
        }
        expect(cards == 11, "export contains 11 element cards");
    }
    r = run("export --scenario sido-fig10a --out /nonexistent/dir/out.cir");
    expect(r.exit_code == 1, "export to missing directory exits 1");

    std::printf("%s (%d failure%s)\n", g_failures ? "FAILED" : "PASSED", g_failures,
                g_failures == 1 ? "" : "s");
    return g_failures ? 1 : 0;
}
