#include "mpcsim/errors.hpp"
#include "mpcsim/scenario.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

using namespace mpcsim;
using nlohmann::json;

TEST_SUITE_BEGIN("scenario");

TEST_CASE("built-in scenarios carry the reference parameters") {
    const auto a = ScenarioConfig::builtin("sido-fig10a");
    CHECK(a.descriptor.n == 3);
    CHECK(a.duties.values() == std::vector<double>{0.35, 0.25, 0.40});
    CHECK(a.sim.f_sw == 30e3);
    CHECK(a.descriptor.inductance == doctest::Approx(0.72e-3));
    CHECK(a.descriptor.capacitance == doctest::Approx(560e-6));
    REQUIRE(a.descriptor.attachments.size() == 3);
    CHECK(a.descriptor.attachments[0].value == 40.0);

    const auto b = ScenarioConfig::builtin("diso-fig10b");
    CHECK(b.descriptor.attachments[0].value == 50.0);
    CHECK(b.descriptor.attachments[1].value == 20.0);

    CHECK_THROWS_AS(ScenarioConfig::builtin("nope"), ValidationError);
}

TEST_CASE("config files parse, validate and reject sum violations") {
    const char* text = R"({
        "n": 3,
        "duties": [0.35, 0.25, 0.40],
        "f_sw": 30000.0,
        "inductance": 0.00072,
        "capacitance": 0.00056,
        "attachments": [
            {"kind": "voltage-source", "span": [3, 4], "value": 40.0},
            {"kind": "resistive-load", "span": [1, 4], "value": 50.0}
        ],
        "sim": {"steps_per_period": 500, "init_mode": "zero"}
    })";
    const auto cfg = ScenarioConfig::from_json_text(text);
    CHECK(cfg.descriptor.n == 3);
    CHECK(cfg.sim.steps_per_period == 500);
    CHECK(cfg.sim.init_mode == InitMode::Zero);
    CHECK(cfg.descriptor.attachments[1].kind == AttachmentKind::ResistiveLoad);

    CHECK_THROWS_AS(ScenarioConfig::from_json_text("{ not json"), ValidationError);
    CHECK_THROWS_AS(ScenarioConfig::from_json_text(R"({
        "n": 3, "duties": [0.4, 0.25, 0.25], "f_sw": 30000.0,
        "inductance": 0.00072, "capacitance": 0.00056,
        "attachments": [{"kind": "voltage-source", "span": [1, 4], "value": 10.0}]
    })"),
                    ValidationError);
}

TEST_CASE("report JSON round-trips bit-exactly") {
    const auto cfg = ScenarioConfig::builtin("sido-fig10a");
    const auto report = analyze(cfg.descriptor, cfg.duties);
    const auto j = report_json(report);
    const auto text = j.dump(2);
    const auto parsed = json::parse(text);
    CHECK(parsed.at("v0").get<double>() == report.voltages.v0);
    CHECK(parsed.at("branch_currents").at("junction").at("3").get<double>() ==
          report.currents.at(3));
    CHECK(json::parse(json(j).dump()) == json(j));
}

TEST_CASE("mode means recover piecewise-constant signals") {
    WaveformTrace trace;
    trace.samples_per_period = 10;
    trace.channels = {"x"};
    trace.data = {{1, 1, 1, 2, 2, 2, 2, 3, 3, 3}};
    const auto duties = DutyVector::from({0.3, 0.4, 0.3});
    CHECK(mode_mean(trace, duties, "x", 1) == doctest::Approx(1.0));
    CHECK(mode_mean(trace, duties, "x", 2) == doctest::Approx(2.0));
    CHECK(mode_mean(trace, duties, "x", 3) == doctest::Approx(3.0));
}

TEST_CASE("simulation summary reports the reference figures") {
    const auto cfg = ScenarioConfig::builtin("sido-fig10a");
    const auto net = cfg.build();
    const auto result = run_to_steady_state(net, make_schedule(cfg.duties, cfg.sim.f_sw),
                                            cfg.sim, cfg.descriptor.attachments);
    const auto j = summary_json(cfg, net, result);
    CHECK(j.at("converged").get<bool>());
    CHECK(j.at("span_voltage_means").at("1:4").get<double>() ==
          doctest::Approx(100.0).epsilon(0.02));
    CHECK(j.at("span_voltage_means").at("2:4").get<double>() ==
          doctest::Approx(65.0).epsilon(0.02));
    const double residual = j.at("power").at("residual_w").get<double>();
    const double delivered = j.at("power").at("delivered_w").get<double>();
    CHECK(std::abs(residual) < 0.01 * delivered);
}

TEST_SUITE_END();
