#include "oracles.hpp"

#include "vruco/perception.hpp"

#include <doctest.h>

#include <cmath>

using namespace vruco;

namespace {

Detection det(double t, const Vec2& p, double sigma = 0.2) {
    Detection d;
    d.sensor = AgentId{1};
    d.time = t;
    d.position = p;
    d.covariance = sigma * sigma * Mat2::Identity();
    return d;
}

TrackEstimate track_at(const Vec2& p, const Mat2& cov, std::uint32_t id = 1) {
    TrackEstimate t = init_track(det(0.0, p), id, ImmParams{});
    t.mean.head<2>() = p;
    t.cov.topLeftCorner<2, 2>() = cov;
    return t;
}

GroundTruthState truth_at(const Vec2& p, std::uint32_t id = 1) {
    GroundTruthState g;
    g.vru = VruId{id};
    g.kin.position = p;
    return g;
}

SensorModel camera(double p_detect = 1.0, double sigma = 1e-9, double fp = 0.0) {
    SensorModel s;
    s.agent = AgentId{1};
    s.params.fov_half_angle = 0.7;
    s.params.range_m = 60.0;
    s.params.sigma_m = sigma;
    s.params.p_detect = p_detect;
    s.params.false_positives = fp;
    s.mount = {Vec2(0, 0), 0.0};
    return s;
}

Obstacle segment(const Vec2& a, const Vec2& b) {
    Obstacle o;
    o.shape = Obstacle::Shape::Segment;
    o.a = a;
    o.b = b;
    return o;
}

}  // namespace

TEST_SUITE("perception") {

TEST_CASE("line_of_sight") {
    const std::vector<Obstacle> wall{segment({5, -1}, {5, 1})};
    CHECK_FALSE(line_of_sight({0, 0}, {10, 0}, wall));
    CHECK(line_of_sight({0, 0}, {10, 0}, {}));
    const std::vector<Obstacle> behind{segment({15, -1}, {15, 1})};
    CHECK(line_of_sight({0, 0}, {10, 0}, behind));

    Obstacle box;
    box.a = Vec2(4, -1);
    box.b = Vec2(6, 1);
    const std::vector<Obstacle> boxes{box};
    CHECK_FALSE(line_of_sight({0, 0}, {10, 0}, boxes));
    CHECK(line_of_sight({0, 0}, {10, 3}, boxes));
    CHECK(line_of_sight({0, 0}, {3, 0}, boxes));
}

TEST_CASE("field of view") {
    const auto s = camera();
    CHECK(in_field_of_view(s, {10, 0}));
    CHECK(in_field_of_view(s, {10, 5}));
    CHECK_FALSE(in_field_of_view(s, {10, 10}));
    CHECK_FALSE(in_field_of_view(s, {-10, 0}));
    CHECK_FALSE(in_field_of_view(s, {70, 0}));
}

TEST_CASE("sense noiseless limit and occlusion") {
    const auto s = camera();
    const std::vector<GroundTruthState> truth{truth_at({10, 1})};
    auto rng = sensing_stream(1, s.agent, 0);
    const auto d = sense(s, 0.0, truth, {}, rng);
    REQUIRE(d.size() == 1);
    CHECK((d[0].position - Vec2(10, 1)).norm() < 1e-6);
    CHECK_FALSE(validate_covariance(d[0].covariance).has_value());

    const std::vector<Obstacle> truck{segment({5, -3}, {5, 3})};
    for (std::uint64_t f = 0; f < 50; ++f) {
        auto r = sensing_stream(1, s.agent, f);
        CHECK(sense(s, 0.0, truth, truck, r).empty());
    }
}

TEST_CASE("sense detection rate matches the binomial band") {
    const auto s = camera(0.9, 0.2);
    const std::vector<GroundTruthState> truth{truth_at({10, 0})};
    int hits = 0;
    for (std::uint64_t f = 0; f < 10000; ++f) {
        auto rng = sensing_stream(42, s.agent, f);
        hits += static_cast<int>(sense(s, 0.0, truth, {}, rng).size());
    }
    CHECK(hits >= 8800);
    CHECK(hits <= 9200);
}

TEST_CASE("sense is reproducible and false positives stay in the sector") {
    const auto s = camera(0.9, 0.3, 2.0);
    const std::vector<GroundTruthState> truth{truth_at({10, 0})};
    for (std::uint64_t f = 0; f < 200; ++f) {
        auto a = sensing_stream(7, s.agent, f);
        auto b = sensing_stream(7, s.agent, f);
        const auto da = sense(s, 0.0, truth, {}, a);
        const auto db = sense(s, 0.0, truth, {}, b);
        REQUIRE(da.size() == db.size());
        for (std::size_t i = 0; i < da.size(); ++i) {
            CHECK(da[i].position == db[i].position);
            if (!da[i].true_id) CHECK(in_field_of_view(s, da[i].position));
        }
    }
}

TEST_CASE("smart device self-report ignores occlusion and confuses at the configured rate") {
    SensorModel s;
    s.agent = AgentId{5};
    s.params.smart_device = true;
    s.params.sigma_m = 3.0;
    s.params.p_detect = 1.0;
    s.params.carrier = VruId{1};
    s.params.confusion_rate = 0.1;
    s.mount = {Vec2(0, 0), 0.0};
    auto g = truth_at({10, 0});
    g.kind = VruKind::Cyclist;
    g.primitive = MovementPrimitive::Pedaling;
    const std::vector<GroundTruthState> truth{g};
    const std::vector<Obstacle> wall{segment({5, -50}, {5, 50})};
    int wrong = 0;
    const int n = 5000;
    for (int f = 0; f < n; ++f) {
        auto rng = sensing_stream(3, s.agent, static_cast<std::uint64_t>(f));
        const auto d = sense(s, 0.0, truth, wall, rng);
        REQUIRE(d.size() == 1);
        REQUIRE(d[0].self_report.has_value());
        CHECK(d[0].covariance(0, 0) == doctest::Approx(9.0));
        if (d[0].self_report->primitive != MovementPrimitive::Pedaling) ++wrong;
    }
    // binomial(5000, 0.1): sd ~ 21
    CHECK(std::abs(wrong - 500) < 80);
}

TEST_CASE("associate") {
    const std::vector<TrackEstimate> one{track_at({0, 0}, Mat2::Identity())};
    const std::vector<Detection> ds{det(0, {0.1, 0}), det(0, {50, 0})};
    const auto a = associate(one, ds);
    REQUIRE(a.pairs.size() == 1);
    CHECK(a.pairs[0] == std::pair<std::size_t, std::size_t>{0, 0});
    CHECK(a.unmatched_detections == std::vector<std::size_t>{1});

    const auto none = associate(one, {});
    CHECK(none.unmatched_tracks == std::vector<std::size_t>{0});

    const std::vector<TrackEstimate> two{track_at({0, 0}, Mat2::Identity(), 1), track_at({3, 0}, Mat2::Identity(), 2)};
    const std::vector<Detection> ds2{det(0, {2.8, 0.1}), det(0, {0.3, -0.2})};
    const auto b = associate(two, ds2);
    REQUIRE(b.pairs.size() == 2);
    // exhaustive oracle over the two possible bijections
    auto cost = [&](std::size_t t0, std::size_t t1) {
        auto m = [&](std::size_t t, std::size_t d) {
            return mahalanobis2(ds2[d].position - two[t].position(), two[t].position_cov() + ds2[d].covariance);
        };
        return m(t0, 0) + m(t1, 1);
    };
    const bool identity_best = cost(0, 1) < cost(1, 0);
    std::map<std::size_t, std::size_t> got(b.pairs.begin(), b.pairs.end());
    if (identity_best) {
        CHECK(got[0] == 0);
        CHECK(got[1] == 1);
    } else {
        CHECK(got[1] == 0);
        CHECK(got[0] == 1);
    }
}

TEST_CASE("imm predict limits") {
    ImmParams cv_only;
    cv_only.mixing = Mat2::Identity();
    cv_only.init_prob = {1.0, 0.0};
    auto t = init_track(det(0, {0, 0}), 1, cv_only);
    t.models[kCV].x(2) = 1.0;
    t.models[kCA].x(2) = 1.0;
    t.mean(2) = 1.0;
    const auto p = imm_step(t, std::nullopt, 1.0, cv_only);
    CHECK(p.position().x() == doctest::Approx(1.0));
    CHECK(p.position().y() == doctest::Approx(0.0));

    const auto z = imm_predict(t, 0.0, cv_only);
    CHECK((z.mean - t.mean).norm() == 0.0);
    CHECK((z.cov - t.cov).norm() < 1e-12);
}

TEST_CASE("imm symmetric setup keeps equal model probabilities") {
    ImmParams prm;
    auto t = init_track(det(0, {0, 0}), 1, prm);
    // identical model states make the likelihoods equal
    t.models[kCA] = t.models[kCV];
    const auto p = imm_predict(t, 0.0, prm);
    const auto u = imm_update(p, det(0.0, {0.2, -0.1}));
    CHECK(u.model_prob[0] == doctest::Approx(0.5));
    CHECK(u.model_prob[1] == doctest::Approx(0.5));
}

TEST_CASE("imm update scalar gain oracle") {
    ImmParams prm;
    auto t = init_track(det(0, {0, 0}, 1.0), 1, prm);
    for (auto& m : t.models) m.P.topLeftCorner<2, 2>() = Mat2::Identity();
    const auto u = imm_update(t, det(0.0, {1, 0}, 1.0));
    // K = P / (P + R) = 0.5 with zero position/velocity cross terms
    CHECK(u.position().x() == doctest::Approx(0.5));
    CHECK(u.position().y() == doctest::Approx(0.0));
}

TEST_CASE("imm invariants under random steps, coasting grows covariance") {
    std::mt19937_64 gen(11);
    std::normal_distribution<double> n(0.0, 0.3);
    ImmParams prm;
    auto t = init_track(det(0, {0, 0}, 0.3), 1, prm);
    double time = 0.0;
    for (int k = 1; k < 200; ++k) {
        time += 0.04;
        const bool miss = (k % 7) == 0;
        std::optional<Detection> d;
        if (!miss) d = det(time, Vec2(1.2 * time + n(gen), 0.3 * time * time + n(gen)), 0.3);
        const double before = t.position_cov().trace();
        t = imm_step(t, d, 0.04, prm);
        CHECK(t.model_prob[0] + t.model_prob[1] == doctest::Approx(1.0).epsilon(1e-9));
        CHECK_FALSE(validate_covariance(t.cov).has_value());
        if (miss) CHECK(t.position_cov().trace() >= before);
    }
    double prev = t.position_cov().trace();
    for (int k = 0; k < 25; ++k) {
        t = imm_step(t, std::nullopt, 0.04, prm);
        CHECK(t.position_cov().trace() >= prev);
        prev = t.position_cov().trace();
    }
}

TEST_CASE("track management lifecycle") {
    TrackerParams prm;
    ImmParams imm;
    std::uint32_t next = 1;
    const std::vector<Detection> one{det(0, {5, 5})};
    const auto fresh = track_manage({}, one, 0.0, prm, imm, next);
    REQUIRE(fresh.size() == 1);
    CHECK_FALSE(fresh[0].confirmed);

    auto old = fresh[0];
    old.confirmed = true;
    old.last_update = 0.0;
    CHECK(track_manage({old}, {}, 1.4, prm, imm, next).size() == 1);
    CHECK(track_manage({old}, {}, 1.6, prm, imm, next).empty());
}

TEST_CASE("occluded for one second then re-detected keeps the track id") {
    LocalTracker tracker(AgentId{1});
    std::mt19937_64 gen(5);
    std::normal_distribution<double> n(0.0, 0.1);
    std::optional<std::uint32_t> id;
    for (int k = 0; k <= 150; ++k) {
        const double t = k / 25.0;
        const Vec2 truth(1.5 * t, 2.0);
        std::vector<Detection> ds;
        const bool occluded = t > 2.0 && t <= 3.0;
        if (!occluded) ds.push_back(det(t, truth + Vec2(n(gen), n(gen)), 0.1));
        tracker.step(ds, t);
        if (t == 2.0) {
            REQUIRE(tracker.tracks().size() == 1);
            REQUIRE(tracker.tracks()[0].confirmed);
            id = tracker.tracks()[0].id;
        }
    }
    REQUIRE(id.has_value());
    REQUIRE(tracker.tracks().size() == 1);
    CHECK(tracker.tracks()[0].id == *id);
}

TEST_CASE("noiseless limit converges below a millimetre") {
    LocalTracker tracker(AgentId{1});
    for (int k = 0; k <= 75; ++k) {
        const double t = k / 25.0;
        const std::vector<Detection> ds{det(t, Vec2(1.0 + 1.4 * t, -2.0 + 0.5 * t), 1e-9)};
        tracker.step(ds, t);
        if (t >= 2.0) {
            REQUIRE(tracker.tracks().size() == 1);
            CHECK((tracker.tracks()[0].position() - Vec2(1.0 + 1.4 * t, -2.0 + 0.5 * t)).norm() < 1e-3);
        }
    }
}

TEST_CASE("cv_process_noise and propagate_cv") {
    const Mat4 Q = cv_process_noise(0.5, 2.0);
    CHECK(Q(0, 0) == doctest::Approx(2.0 * 0.125 / 3.0));
    CHECK(Q(0, 2) == doctest::Approx(2.0 * 0.25 / 2.0));
    CHECK(Q(2, 2) == doctest::Approx(1.0));
    auto t = track_at({0, 0}, Mat2::Identity());
    t.mean(2) = 2.0;
    const auto p = propagate_cv(t, 0.5, 1.0);
    CHECK(p.position().x() == doctest::Approx(1.0));
    CHECK(p.time == doctest::Approx(t.time + 0.5));
    CHECK(p.position_cov().trace() > t.position_cov().trace());
}

}
