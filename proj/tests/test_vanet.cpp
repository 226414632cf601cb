#include "vruco/scenario.hpp"
#include "vruco/vanet.hpp"

#include <doctest.h>

#include <random>

using namespace vruco;

namespace {

TrackEstimate est(std::uint32_t id, const Vec2& p, const Vec2& v, double var = 0.04, double t = 0.0) {
    TrackEstimate e;
    e.id = id;
    e.time = t;
    e.last_update = t;
    e.mean << p.x(), p.y(), v.x(), v.y();
    e.cov = Mat4::Identity() * 0.25;
    e.cov.topLeftCorner<2, 2>() = var * Mat2::Identity();
    return e;
}

Message msg(std::uint64_t seq, std::uint32_t sender, double created, double priority = 0.0) {
    return make_message(seq, AgentId{sender}, AgentKind::Vehicle, created,
                        TrackPayload{est(static_cast<std::uint32_t>(seq), {0, 0}, {0, 0})}, priority);
}

NodeState node(std::uint32_t id, const Vec2& p, LinkModel link) { return {AgentId{id}, p, link, true}; }

LinkModel ideal(double latency = 0.1) {
    LinkModel l;
    l.latency_s = latency;
    l.jitter_s = 0.0;
    l.loss = 0.0;
    return l;
}

}  // namespace

TEST_SUITE("vanet") {

TEST_CASE("message sizes") {
    CHECK(size_units(TrackPayload{}) == 1);
    CHECK(size_units(DecisionPayload{0, 0.0, SecondOrderDistribution::uniform(VruKind::Pedestrian, 1.0), false}) == 1);
    CHECK(size_units(RequestPayload{}) == 1);
    CHECK(size_units(ForecastPayload{0, ForecastTrajectory(0.0, {1.0}, {Vec2::Zero()}, {Mat2::Identity()},
                                                           Producer::Analytical)}) == 2);
    FeaturePayload f;
    CHECK(size_units(f) == 1);
    f.samples.resize(10);
    CHECK(size_units(f) == 1);
    f.samples.resize(11);
    CHECK(size_units(f) == 2);
}

TEST_CASE("priority score examples") {
    const PriorityWeights w;
    const Vec2 conflict(0, 0);
    const auto recede = est(1, {10, 0}, {1, 0});
    CHECK(priority_score(recede, recede, conflict, false, w).total == 0.0);

    const auto close = est(2, {20, 0}, {-10, 0});
    CHECK(priority_score(close, close, conflict, false, w).urgency == doctest::Approx(0.5));
    CHECK(priority_score(close, close, conflict, false, w).total == doctest::Approx(0.5 * w.urgency));

    const auto unknown = priority_score(close, std::nullopt, conflict, false, w);
    const auto known = priority_score(close, close, conflict, false, w);
    CHECK(unknown.novelty == 1.0);
    CHECK(known.novelty == 0.0);
    CHECK(unknown.total > known.total);

    // novelty grows with the discrepancy to the receiver view
    double prev = -1.0;
    for (double off : {0.0, 0.1, 0.2, 0.4, 0.8}) {
        const auto s = priority_score(est(3, {off, 5}, {0, 0}), est(3, {0, 5}, {0, 0}), std::nullopt, false, w);
        CHECK(s.novelty >= prev);
        CHECK(s.total >= 0.0);
        prev = s.novelty;
    }
    CHECK(time_to_conflict({0, 5}, {0, 1}, conflict) == std::numeric_limits<double>::infinity());
}

TEST_CASE("strategy examples") {
    NetworkParams prm;
    const std::vector<Product> three{{est(1, {1, 0}, {0, 0}), false, {TrackPayload{est(1, {1, 0}, {0, 0})}}},
                                     {est(2, {2, 0}, {0, 0}), false, {TrackPayload{est(2, {2, 0}, {0, 0})}}},
                                     {est(3, {3, 0}, {0, 0}), false, {TrackPayload{est(3, {3, 0}, {0, 0})}}}};
    SenderMemory m1, m2;
    CHECK(strategy_decide(StrategyKind::BroadcastAll, three, m1, 0.0, false, std::nullopt, prm).size() == 3);
    CHECK(strategy_decide(StrategyKind::RequestOnly, three, m2, 0.0, false, std::nullopt, prm).empty());
    CHECK(strategy_decide(StrategyKind::RequestOnly, three, m2, 0.0, true, std::nullopt, prm).size() == 3);

    // urgency only; TTC 10, 1.67 and 2.5 s give scores 0.1, 0.6, 0.4
    prm.weights = {1.0, 0.0, 0.0};
    prm.threshold = 0.3;
    std::vector<Product> scored;
    const double speeds[] = {1.0, 6.0, 4.0};
    for (std::uint32_t i = 0; i < 3; ++i) {
        const auto e = est(i + 1, {-10, 0}, {speeds[i], 0});
        scored.push_back({e, false, {TrackPayload{e}}});
    }
    SenderMemory m3;
    const auto out = strategy_decide(StrategyKind::AdaptivePriority, scored, m3, 0.0, false, Vec2(0, 0), prm);
    REQUIRE(out.size() == 2);
    CHECK(out[0].priority == doctest::Approx(0.6));
    CHECK(out[1].priority == doctest::Approx(0.4));
    CHECK(std::get<TrackPayload>(out[0].payload).track.id == 2);
    CHECK(std::get<TrackPayload>(out[1].payload).track.id == 3);
}

TEST_CASE("adaptive re-scores against the sender memory") {
    NetworkParams prm;
    const auto e = est(1, {5, 5}, {0, 0});
    const std::vector<Product> one{{e, false, {TrackPayload{e}}}};
    SenderMemory mem;
    CHECK(strategy_decide(StrategyKind::AdaptivePriority, one, mem, 0.0, false, std::nullopt, prm).size() == 1);
    // unchanged state next tick: nothing new to say
    auto later = e;
    later.time = 0.04;
    const std::vector<Product> again{{later, false, {TrackPayload{later}}}};
    CHECK(strategy_decide(StrategyKind::AdaptivePriority, again, mem, 0.04, false, std::nullopt, prm).empty());
    const std::vector<Product> flagged{{later, true, {TrackPayload{later}}}};
    CHECK(strategy_decide(StrategyKind::AdaptivePriority, flagged, mem, 0.04, false, std::nullopt, prm).size() == 1);
}

TEST_CASE("loss 1 delivers nothing") {
    NetworkParams prm;
    Network net(prm, 5);
    LinkModel l = ideal();
    l.loss = 1.0;
    const std::vector<NodeState> nodes{node(1, {0, 0}, l), node(2, {10, 0}, l)};
    net.set_nodes(nodes);
    for (std::uint64_t k = 0; k < 50; ++k) {
        net.enqueue(msg(k, 1 + k % 2, 0.04 * k));
        CHECK(net.step(0.04 * k, k).empty());
    }
    CHECK(net.counters().dropped_loss == net.counters().sent);
    CHECK(net.counters().delivered == 0);
}

TEST_CASE("deterministic latency") {
    Network net(NetworkParams{}, 1);
    const std::vector<NodeState> nodes{node(1, {0, 0}, ideal(0.1)), node(2, {10, 0}, ideal(0.1))};
    net.set_nodes(nodes);
    net.enqueue(msg(0, 1, 0.0));
    for (std::uint64_t k = 0; k < 3; ++k) CHECK(net.step(0.04 * k, k).empty());
    const auto d = net.step(0.12, 3);
    REQUIRE(d.size() == 1);
    CHECK(d[0].time == doctest::Approx(0.1));
    CHECK(d[0].receiver == AgentId{2});
    CHECK(net.counters().conserved());
}

TEST_CASE("budget transmits top priorities first") {
    NetworkParams prm;
    prm.budget_units = 2;
    Network net(prm, 1);
    const std::vector<NodeState> nodes{node(1, {0, 0}, ideal(0.01)), node(2, {10, 0}, ideal(0.01))};
    net.set_nodes(nodes);
    net.enqueue(msg(0, 1, 0.0, 0.2));
    net.enqueue(msg(1, 1, 0.0, 0.9));
    net.enqueue(msg(2, 1, 0.0, 0.5));
    CHECK(net.step(0.0, 0).empty());
    CHECK(net.last_step_units().at(AgentId{1}) == 2);
    CHECK(net.queue_depth(AgentId{1}) == 1);
    CHECK(net.counters().queued == 1);
    const auto first = net.step(0.04, 1);
    REQUIRE(first.size() == 2);
    CHECK(first[0].message.priority == 0.9);
    CHECK(first[1].message.priority == 0.5);
    const auto second = net.step(0.08, 2);
    REQUIRE(second.size() == 1);
    CHECK(second[0].message.priority == 0.2);
    CHECK(net.consistent());
}

TEST_CASE("queued messages expire") {
    NetworkParams prm;
    prm.budget_units = 1;
    prm.max_queue_age_s = 0.1;
    Network net(prm, 1);
    const std::vector<NodeState> nodes{node(1, {0, 0}, ideal(0.01)), node(2, {10, 0}, ideal(0.01))};
    net.set_nodes(nodes);
    for (std::uint64_t k = 0; k < 5; ++k) net.enqueue(msg(k, 1, 0.0));
    for (std::uint64_t k = 0; k < 5; ++k) net.step(0.04 * k, k);
    CHECK(net.counters().dropped_expired == 2);
    CHECK(net.counters().delivered == 3);
    CHECK(net.consistent());
}

TEST_CASE("membership and departures") {
    AgentSpec a;
    a.join_s = 10.0;
    CHECK_FALSE(a.active_at(5.0));
    CHECK(a.active_at(10.0));
    AgentSpec b;
    for (double t : {0.0, 7.0, 100.0}) CHECK(b.active_at(t));
    b.leave_s = 30.0;
    CHECK_FALSE(b.active_at(30.0));

    Network net(NetworkParams{}, 2);
    std::vector<NodeState> nodes{node(1, {0, 0}, ideal(0.5)), node(2, {10, 0}, ideal(0.5))};
    net.set_nodes(nodes);
    net.enqueue(msg(0, 2, 29.9));
    net.enqueue(msg(1, 2, 29.9));
    net.step(29.9, 0);
    CHECK(net.counters().in_flight == 2);
    nodes[1].active = false;
    net.set_nodes(nodes);
    CHECK(net.counters().dropped_departed == 2);
    CHECK(net.counters().in_flight == 0);
    CHECK(net.consistent());
    net.enqueue(msg(2, 2, 30.0));
    CHECK(net.counters().sent == 2);
}

TEST_CASE("out of range is lost") {
    Network net(NetworkParams{}, 2);
    LinkModel l = ideal(0.01);
    l.range_m = 50.0;
    const std::vector<NodeState> nodes{node(1, {0, 0}, l), node(2, {60, 0}, l)};
    net.set_nodes(nodes);
    net.enqueue(msg(0, 1, 0.0));
    net.step(0.0, 0);
    CHECK(net.counters().dropped_loss == 1);
}

TEST_CASE("property: conservation, causality and exactly-once delivery") {
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 30; ++rep) {
        NetworkParams prm;
        prm.budget_units = 1 + static_cast<int>(gen() % 6);
        Network net(prm, gen());
        std::vector<NodeState> nodes;
        LinkModel l;
        l.latency_s = 0.02 + 0.2 * u(gen);
        l.jitter_s = 0.5 * l.latency_s * u(gen);
        l.loss = 0.5 * u(gen);
        for (std::uint32_t i = 1; i <= 4; ++i) nodes.push_back(node(i, {30.0 * i * u(gen), 0}, l));
        std::uint64_t seq = 0;
        for (std::uint64_t k = 0; k < 100; ++k) {
            const double t = 0.04 * k;
            for (auto& n : nodes) n.active = u(gen) > 0.05 || n.id == AgentId{1};
            net.set_nodes(nodes);
            const int burst = static_cast<int>(gen() % 4);
            for (int b = 0; b < burst; ++b) net.enqueue(msg(seq++, 1 + gen() % 4, t, u(gen)));
            for (const auto& d : net.step(t, k)) {
                CHECK(d.time >= d.message.created + l.latency_s - l.jitter_s - 1e-12);
                CHECK(d.time <= t + 1e-9);
            }
            CHECK(net.consistent());
        }
    }

    NetworkParams big;
    big.budget_units = 1000;
    Network net(big, 3);
    const std::vector<NodeState> nodes{node(1, {0, 0}, ideal(0.05)), node(2, {10, 0}, ideal(0.05)),
                                       node(3, {20, 0}, ideal(0.05))};
    net.set_nodes(nodes);
    std::map<std::pair<std::uint64_t, AgentId>, int> got;
    for (std::uint64_t k = 0; k < 20; ++k) {
        net.enqueue(msg(k, 1 + k % 3, 0.04 * k));
        for (const auto& d : net.step(0.04 * k, k)) ++got[{d.message.seq, d.receiver}];
    }
    for (std::uint64_t k = 20; k < 30; ++k) {
        for (const auto& d : net.step(0.04 * k, k)) ++got[{d.message.seq, d.receiver}];
    }
    CHECK(got.size() == 40);
    for (const auto& [key, n] : got) CHECK(n == 1);
}

TEST_CASE("identical seeds give identical schedules") {
    auto run = [](std::uint64_t seed) {
        NetworkParams prm;
        prm.budget_units = 3;
        Network net(prm, seed);
        LinkModel l;
        l.loss = 0.3;
        const std::vector<NodeState> nodes{node(1, {0, 0}, l), node(2, {10, 0}, l), node(3, {40, 0}, l)};
        net.set_nodes(nodes);
        std::vector<double> times;
        for (std::uint64_t k = 0; k < 200; ++k) {
            net.enqueue(msg(k, 1 + k % 3, 0.04 * k, 0.01 * (k % 7)));
            for (const auto& d : net.step(0.04 * k, k)) times.push_back(d.time);
        }
        return std::make_pair(times, net.counters().dropped_loss);
    };
    CHECK(run(9) == run(9));
    CHECK(run(9) != run(10));
}

}
