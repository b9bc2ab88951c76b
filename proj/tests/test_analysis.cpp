#include "mpcsim/analysis.hpp"
#include "mpcsim/errors.hpp"
#include "mpcsim/topology.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace mpcsim;

namespace {

TopologyDescriptor sido_reference() {
    TopologyDescriptor d;
    d.n = 3;
    d.inductance = 0.72e-3;
    d.capacitance = 560e-6;
    d.attachments = {{{3, 4}, AttachmentKind::VoltageSource, 40.0},
                     {{1, 4}, AttachmentKind::ResistiveLoad, 50.0},
                     {{2, 4}, AttachmentKind::ResistiveLoad, 50.0}};
    return d;
}

TopologyDescriptor diso_reference() {
    TopologyDescriptor d;
    d.n = 3;
    d.inductance = 0.72e-3;
    d.capacitance = 560e-6;
    d.attachments = {{{1, 4}, AttachmentKind::VoltageSource, 50.0},
                     {{3, 4}, AttachmentKind::VoltageSource, 20.0},
                     {{2, 4}, AttachmentKind::ResistiveLoad, 50.0}};
    return d;
}

const DutyVector kRefDuties = DutyVector::from({0.35, 0.25, 0.40});

} // namespace

TEST_SUITE_BEGIN("analysis");

TEST_CASE("single-input reference point: gains follow the duty ratios") {
    const auto v = solve_port_voltages(kRefDuties, sido_reference().attachments);
    CHECK(v.v0 == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(v.port[0] == doctest::Approx(35.0).epsilon(1e-12));
    CHECK(v.port[1] == doctest::Approx(25.0).epsilon(1e-12));
    CHECK(v.port[2] == doctest::Approx(40.0).epsilon(1e-12));
    CHECK(v.span(2, 4) == doctest::Approx(65.0).epsilon(1e-12));
}

TEST_CASE("dual-input reference point: consistent sources agree on the stack") {
    const auto v = solve_port_voltages(kRefDuties, diso_reference().attachments);
    CHECK(v.v0 == doctest::Approx(50.0).epsilon(1e-12));
    CHECK(v.span(2, 4) == doctest::Approx(32.5).epsilon(1e-12));
}

TEST_CASE("full-span source pins the stack regardless of duties") {
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        double a = u(rng), b = u(rng), c = u(rng);
        const double s = a + b + c;
        const auto duties = DutyVector::from({a / s, b / s, c / s});
        const std::vector<Attachment> atts{{{1, 4}, AttachmentKind::VoltageSource, 77.0}};
        CHECK(solve_port_voltages(duties, atts).v0 == doctest::Approx(77.0).epsilon(1e-12));
    }
}

TEST_CASE("conflicting sources raise an inconsistency carrying both values") {
    const std::vector<Attachment> atts{{{1, 4}, AttachmentKind::VoltageSource, 50.0},
                                       {{3, 4}, AttachmentKind::VoltageSource, 21.0}};
    try {
        solve_port_voltages(kRefDuties, atts);
        FAIL("expected InconsistencyError");
    } catch (const InconsistencyError& e) {
        CHECK(e.implied_a == doctest::Approx(50.0));
        CHECK(e.implied_b == doctest::Approx(52.5));
    }
}

TEST_CASE("interior and further-distance source spans pin the stack correctly") {
    // A 25 V source across junctions 2..3 spans only D_2 = 0.25 of the stack.
    const std::vector<Attachment> atts{{{2, 3}, AttachmentKind::VoltageSource, 25.0},
                                       {{1, 3}, AttachmentKind::ResistiveLoad, 60.0}};
    const auto v = solve_port_voltages(kRefDuties, atts);
    CHECK(v.v0 == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(v.span(1, 3) == doctest::Approx(60.0).epsilon(1e-12));

    const auto c = solve_branch_currents(kRefDuties, v, atts);
    // The load draws 1 A out of T_1 and returns it into T_3.
    CHECK(c.top == doctest::Approx(-1.0).epsilon(1e-9));
    // Power balance: the source must deliver exactly the load power.
    CHECK(25.0 * c.source[0] == doctest::Approx(60.0 * 60.0 / 60.0).epsilon(1e-9));
}

TEST_CASE("a source across a zero-duty span is unpowered") {
    const auto duties = DutyVector::from({0.6, 0.4, 0.0});
    const std::vector<Attachment> atts{{{3, 4}, AttachmentKind::VoltageSource, 10.0}};
    CHECK_THROWS_AS(solve_port_voltages(duties, atts), ValidationError);
}

TEST_CASE("duty synthesis from voltage targets") {
    const auto d1 = solve_duties_for_voltages(100.0, {{3, 40.0}}, 3, 1);
    CHECK(d1.of(3) == doctest::Approx(0.40).epsilon(1e-12));
    CHECK(d1.of(1) == doctest::Approx(0.30).epsilon(1e-12));

    const auto d2 = solve_duties_for_voltages(100.0, {{1, 35.0}, {2, 25.0}}, 3, 3);
    CHECK(d2.values() == std::vector<double>{0.35, 0.25, 0.40});

    CHECK_THROWS_AS(solve_duties_for_voltages(50.0, {{1, 30.0}, {2, 30.0}}, 3, 3),
                    ValidationError);
}

TEST_CASE("branch currents at the single-input reference point") {
    const auto v = solve_port_voltages(kRefDuties, sido_reference().attachments);
    const auto c = solve_branch_currents(kRefDuties, v, sido_reference().attachments);
    CHECK(c.at(2) == doctest::Approx(-1.3).epsilon(1e-9));
    // Power balance forces the source to carry (100^2 + 65^2)/50 W over 40 V.
    CHECK(c.at(3) == doctest::Approx(7.1125).epsilon(1e-9));
    CHECK(c.top == doctest::Approx(-2.0).epsilon(1e-9));
    CHECK(c.top + c.at(2) + c.at(3) + c.ground == doctest::Approx(0.0));
}

TEST_CASE("branch currents at the dual-input reference point") {
    const auto atts = diso_reference().attachments;
    const auto v = solve_port_voltages(kRefDuties, atts);
    const auto c = solve_branch_currents(kRefDuties, v, atts);
    CHECK(c.at(2) == doctest::Approx(-0.65).epsilon(1e-9));
    // The equal-on-resistance split: I_3 = -I_2 (D_1 + D_3) / (1 + D_3),
    // from the volt-second residual of the lower filter branch.
    CHECK(c.at(3) == doctest::Approx(0.65 * 0.75 / 1.4).epsilon(1e-9));
    // Exact power balance: 50 I_1 + 20 I_3 = 32.5^2 / 50.
    CHECK(50.0 * c.source[0] + 20.0 * c.source[1] ==
          doctest::Approx(32.5 * 32.5 / 50.0).epsilon(1e-9));
}

TEST_CASE("a lone source feeds no average current") {
    const std::vector<Attachment> atts{{{1, 4}, AttachmentKind::VoltageSource, 100.0}};
    const auto v = solve_port_voltages(kRefDuties, atts);
    const auto c = solve_branch_currents(kRefDuties, v, atts);
    CHECK(c.top == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(c.at(2) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(c.at(3) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("stress table follows the cumulative-sum pattern") {
    BranchCurrents c;
    c.junction = {0.0, 0.0, -1.3, 7.1125};
    const StressTable t(3, c);
    // Row 1: 0, I_2, I_2 + I_3.
    CHECK(t.entry(1, 1) == 0.0);
    CHECK(t.entry(1, 2) == doctest::Approx(-1.3));
    CHECK(t.entry(1, 3) == doctest::Approx(5.8125));
    // Row 2: -I_2, 0, I_3.
    CHECK(t.entry(2, 1) == doctest::Approx(1.3));
    CHECK(t.entry(2, 2) == 0.0);
    CHECK(t.entry(2, 3) == doctest::Approx(7.1125));
    // Row 3: -(I_2 + I_3), -I_3, 0.
    CHECK(t.entry(3, 1) == doctest::Approx(-5.8125));
    CHECK(t.entry(3, 2) == doctest::Approx(-7.1125));
    CHECK(t.entry(3, 3) == 0.0);
}

TEST_CASE("stress table is antisymmetric in (mode, switch)") {
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int n = 2; n <= 8; ++n) {
        BranchCurrents c;
        c.junction.assign(static_cast<std::size_t>(n) + 1, 0.0);
        for (int i = 2; i <= n; ++i) c.junction[static_cast<std::size_t>(i)] = u(rng);
        const StressTable t(n, c);
        for (int k = 1; k <= n; ++k)
            for (int j = 1; j <= n; ++j)
                CHECK(t.entry(k, j) == doctest::Approx(-t.entry(j, k)).epsilon(1e-12));
    }
}

TEST_CASE("voltage stress equals the stack voltage") {
    const auto report = analyze(sido_reference(), kRefDuties);
    CHECK(report.switch_voltage_stress == doctest::Approx(100.0));
}

TEST_CASE("ripple estimate at the reference point") {
    const auto desc = sido_reference();
    const auto report = analyze(desc, kRefDuties);
    const auto net = build_universalized(desc);
    const auto ripple = ripple_estimates(net, kRefDuties, report, 30e3);
    // The source-side branch sees -40 V for 0.6 T and +60 V for 0.4 T.
    CHECK(ripple.inductor_pp_current.at(3) ==
          doctest::Approx(60.0 * 0.4 / 30e3 / 0.72e-3).epsilon(1e-9));
    CHECK(ripple.inductor_pp_current.at(2) ==
          doctest::Approx(65.0 * 0.35 / 30e3 / 0.72e-3).epsilon(1e-9));
}

TEST_CASE("zero duty silences the only charging mode") {
    TopologyDescriptor d;
    d.n = 3;
    d.inductance = 0.72e-3;
    d.capacitance = 560e-6;
    d.attachments = {{{1, 4}, AttachmentKind::VoltageSource, 100.0}};
    const auto duties = DutyVector::from({0.5, 0.5, 0.0});
    const auto report = analyze(d, duties);
    const auto ripple = ripple_estimates(build_universalized(d), duties, report, 30e3);
    CHECK(ripple.inductor_pp_current.at(3) == doctest::Approx(0.0));
    CHECK(ripple.inductor_pp_current.at(2) > 0.0);
}

TEST_CASE("doubling the inductance halves the ripple") {
    auto desc = sido_reference();
    const auto report = analyze(desc, kRefDuties);
    const auto r1 =
        ripple_estimates(build_universalized(desc), kRefDuties, report, 30e3);
    desc.inductance *= 2.0;
    const auto r2 =
        ripple_estimates(build_universalized(desc), kRefDuties, report, 30e3);
    CHECK(r2.inductor_pp_current.at(3) ==
          doctest::Approx(0.5 * r1.inductor_pp_current.at(3)).epsilon(1e-12));
}

TEST_CASE("gain and balance invariants on randomized operating points") {
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 4);
        std::vector<double> d(static_cast<std::size_t>(n));
        double sum = 0.0;
        for (auto& x : d) sum += (x = 0.05 + u(rng));
        for (auto& x : d) x /= sum;
        const auto duties = DutyVector::from(d);

        TopologyDescriptor desc;
        desc.n = n;
        desc.inductance = 0.72e-3;
        desc.capacitance = 560e-6;
        const int src_top = 1 + static_cast<int>(rng() % n);
        desc.attachments.push_back(
            {{src_top, n + 1}, AttachmentKind::VoltageSource, 10.0 + 90.0 * u(rng)});
        const int n_loads = 1 + static_cast<int>(rng() % 3);
        for (int k = 0; k < n_loads; ++k) {
            const int a = 1 + static_cast<int>(rng() % n);
            const int b = a + 1 + static_cast<int>(rng() % (n + 1 - a));
            desc.attachments.push_back(
                {{a, b}, AttachmentKind::ResistiveLoad, 20.0 + 180.0 * u(rng)});
        }

        const auto report = analyze(desc, duties);
        const double v0 = report.voltages.v0;
        double vsum = 0.0;
        for (int i = 1; i <= n; ++i) {
            vsum += report.voltages.port[static_cast<std::size_t>(i - 1)];
            CHECK(std::abs(report.voltages.port[static_cast<std::size_t>(i - 1)] -
                           duties.of(i) * v0) < 1e-9 * std::abs(v0));
        }
        CHECK(std::abs(vsum - v0) < 1e-9 * std::abs(v0));

        double throughput = 0.0;
        for (std::size_t s = 0; s < report.currents.source.size(); ++s)
            throughput += std::abs(report.currents.source[s]);
        CHECK(std::abs(report.power_balance_residual) <=
              1e-6 * std::max(1.0, throughput * v0));
    }
}

TEST_CASE("scaling the sole source scales the whole report linearly") {
    auto desc = sido_reference();
    const auto base = analyze(desc, kRefDuties);
    desc.attachments[0].value *= 3.0;
    const auto scaled = analyze(desc, kRefDuties);
    CHECK(scaled.voltages.v0 == doctest::Approx(3.0 * base.voltages.v0).epsilon(1e-12));
    CHECK(scaled.currents.at(2) == doctest::Approx(3.0 * base.currents.at(2)).epsilon(1e-9));
    CHECK(scaled.currents.at(3) == doctest::Approx(3.0 * base.currents.at(3)).epsilon(1e-9));
}

TEST_CASE("volt-second balance closes for every filtered branch") {
    std::mt19937 rng(23);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int n = 2; n <= 8; ++n) {
        std::vector<double> d(static_cast<std::size_t>(n));
        double sum = 0.0;
        for (auto& x : d) sum += (x = 0.02 + u(rng));
        for (auto& x : d) x /= sum;
        const auto duties = DutyVector::from(d);
        const double v0 = 120.0;
        for (int i = 2; i <= n; ++i) {
            double volt_seconds = 0.0;
            for (int k = 1; k <= n; ++k) {
                const double ladder = (k >= i) ? v0 : 0.0;
                const double junction = duties.tail_sum(i) * v0;
                volt_seconds += duties.of(k) * (ladder - junction);
            }
            CHECK(std::abs(volt_seconds) < 1e-9 * v0);
        }
    }
}

TEST_CASE("analysis rejects the filtered-terminal styles") {
    auto desc = sido_reference();
    desc.inductor_style = InductorStyle::PlusTop;
    CHECK_THROWS_AS(analyze(desc, kRefDuties), ValidationError);
}

TEST_SUITE_END();
