#include "vruco/engine.hpp"
#include "vruco/metrics.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace vruco;

namespace {

const std::filesystem::path kScenarios(VRUCO_SCENARIO_DIR);

Scenario crossing() { return load_scenario(kScenarios / "occluded_crossing.json"); }

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("vruco_test_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

ForecastTrajectory line(double origin, const std::vector<double>& horizons, const Vec2& p) {
    std::vector<Vec2> m(horizons.size(), p);
    std::vector<Mat2> c(horizons.size(), Mat2::Identity());
    return {origin, horizons, m, c, Producer::Analytical};
}

}  // namespace

TEST_SUITE("sim-harness") {

TEST_CASE("metric examples") {
    const TruthFn truth = [](double t) -> std::optional<Vec2> {
        if (t > 10.0) return std::nullopt;
        return Vec2(1.0, 1.0);
    };
    const std::vector<ForecastTrajectory> one{line(0.0, {1.0}, Vec2(1.0, 0.0))};
    const auto e = metric_forecast_error(one, truth);
    REQUIRE(e.per_horizon.size() == 1);
    CHECK(e.per_horizon[0].mean == doctest::Approx(1.0));

    const std::vector<ForecastTrajectory> perfect{line(0.0, {0.5, 1.0}, Vec2(1, 1)), line(2.0, {0.5, 1.0}, Vec2(1, 1))};
    for (const auto& h : metric_forecast_error(perfect, truth).per_horizon) {
        CHECK(h.mean == 0.0);
        CHECK(h.p95 == 0.0);
    }
    const std::vector<ForecastTrajectory> late{line(9.5, {0.5, 1.0}, Vec2(1, 1))};
    CHECK(metric_forecast_error(late, truth).skipped == 1);

    CHECK(*metric_warning_lead(8.0, 10.0) == doctest::Approx(2.0));
    CHECK_FALSE(metric_warning_lead(std::nullopt, 10.0).has_value());
    CHECK_FALSE(metric_warning_lead(10.5, 10.0).has_value());

    const std::vector<Transition> tr{{5.0, MovementPrimitive::Waiting, MovementPrimitive::Starting}};
    const std::vector<TransitionEvent> ev{{1, 5.4, MovementPrimitive::Waiting, MovementPrimitive::Starting, 0.8}};
    CHECK(*metric_transition_latency(ev, tr).matches[0].latency == doctest::Approx(0.4));
    const std::vector<TransitionEvent> early{{1, 4.8, MovementPrimitive::Waiting, MovementPrimitive::Starting, 0.8}};
    CHECK(*metric_transition_latency(early, tr).matches[0].latency == doctest::Approx(-0.2));
    const auto none = metric_transition_latency({}, tr);
    CHECK_FALSE(none.matches[0].latency.has_value());
    const std::vector<TransitionEvent> far{{1, 8.0, MovementPrimitive::Waiting, MovementPrimitive::Starting, 0.8}};
    CHECK(metric_transition_latency(far, tr).false_alarms == 1);

    CHECK(percentile({3, 1, 2, 4}, 0.5) == 2.0);
    CHECK(percentile({3, 1, 2, 4}, 1.0) == 4.0);
}

TEST_CASE("emit_report files") {
    const auto empty_dir = scratch("empty");
    emit_report(MetricsReport{}, empty_dir);
    CHECK(std::filesystem::exists(empty_dir / "report.json"));
    const auto ts = slurp(empty_dir / "timeseries.csv");
    CHECK(std::count(ts.begin(), ts.end(), '\n') == 1);
    CHECK(slurp(empty_dir / "metrics.csv").rfind("metric,horizon,value\n", 0) == 0);

    MetricsReport r;
    for (double h : {0.5, 1.0, 1.5, 2.0, 3.0}) r.forecast_error.per_horizon.push_back({h, 3, 0.1 * h, 0.2 * h});
    const auto csv = metrics_csv(r);
    std::size_t rows = 0;
    std::istringstream in(csv);
    for (std::string l; std::getline(in, l);) rows += l.rfind("forecast_error,", 0) == 0;
    CHECK(rows == 5);

    const auto a = scratch("a"), b = scratch("b");
    emit_report(r, a);
    emit_report(r, b);
    for (const char* f : {"report.json", "metrics.csv", "timeseries.csv"}) CHECK(slurp(a / f) == slurp(b / f));
}

TEST_CASE("run config validation") {
    RunConfig cfg;
    cfg.type_a = false;
    cfg.type_b = false;
    CHECK_THROWS_AS(cfg.validate(), MalformedInput);
    cfg.coop = false;
    CHECK_NOTHROW(cfg.validate());
    RunConfig bad;
    bad.horizons = std::vector<double>{1.0, 0.5};
    CHECK_THROWS_AS(bad.validate(), MalformedInput);
}

TEST_CASE("cooperation off never touches fusion or the network") {
    RunConfig cfg;
    cfg.coop = false;
    const auto out = run(crossing(), cfg);
    CHECK(out.report.fusion.total_calls() == 0);
    CHECK(out.report.network.sent == 0);
    CHECK(out.report.network.messages == 0);
}

TEST_CASE("identical configs give byte-identical reports") {
    const auto sc = crossing();
    RunConfig cfg;
    cfg.seed = 7;
    CHECK(to_json(run(sc, cfg).report).dump() == to_json(run(sc, cfg).report).dump());
    RunConfig other = cfg;
    other.seed = 8;
    CHECK(to_json(run(sc, cfg).report).dump() != to_json(run(sc, other).report).dump());
}

TEST_CASE("trace records the stage order every tick") {
    const auto sc = crossing();
    RunConfig cfg;
    cfg.trace = true;
    const auto out = run(sc, cfg);
    const std::size_t stages = 9;
    REQUIRE(out.trace.size() == sc.tick_count() * stages);
    for (std::size_t i = 0; i < out.trace.size(); ++i) {
        CHECK(out.trace[i].tick == i / stages);
        CHECK(static_cast<std::size_t>(out.trace[i].stage) == i % stages);
    }
    CHECK(to_string(Stage::TruthAdvance) != to_string(Stage::Metrics));
}

TEST_CASE("other agents' noise settings do not perturb the ego stream") {
    auto sc = crossing();
    RunConfig cfg;
    cfg.coop = false;
    cfg.seed = 3;
    const auto base = to_json(run(sc, cfg).report).dump();
    for (auto& a : sc.agents) {
        if (a.id == AgentId{2}) a.sensor.false_positives = 1.5;
    }
    CHECK(to_json(run(sc, cfg).report).dump() == base);
}

TEST_CASE("cooperation does not lose coverage on the bundled crossing") {
    const auto sc = crossing();
    for (std::uint64_t seed : {0u, 1u, 2u}) {
        RunConfig on, off;
        on.seed = off.seed = seed;
        off.coop = false;
        const auto a = run(sc, on).report;
        const auto b = run(sc, off).report;
        REQUIRE(a.occlusion_coverage.has_value());
        REQUIRE(b.occlusion_coverage.has_value());
        CHECK(*a.occlusion_coverage >= *b.occlusion_coverage);
        CHECK(a.conservation_held);
        CHECK(a.network.conserved());
        CHECK(a.fusion.samples_in ==
              a.fusion.samples_inserted + a.fusion.samples_orphaned + a.fusion.samples_stale);
    }
}

}
