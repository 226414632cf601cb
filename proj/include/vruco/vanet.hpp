// Simulated ad-hoc network: typed messages, lossy delayed links, per-tick
// bandwidth budgets and the strategies that decide what gets sent.
#pragma once

#include "vruco/coop_fusion.hpp"
#include "vruco/core.hpp"
#include "vruco/intention.hpp"
#include "vruco/params.hpp"
#include "vruco/perception.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <variant>
#include <vector>

namespace vruco {

// ---------------------------------------------------------------------------
// Messages

struct TrackPayload {
    TrackEstimate track;
};

struct FeaturePayload {
    std::uint32_t track = 0;
    std::vector<FeatureSample> samples;
};

struct DecisionPayload {
    std::uint32_t track = 0;
    double time = 0.0;
    SecondOrderDistribution dist;
    bool transition = false;
};

struct ForecastPayload {
    std::uint32_t track = 0;
    ForecastTrajectory forecast;
};

struct SelfReportPayload {
    std::uint32_t track = 0;
    double time = 0.0;
    SelfReport report;
};

/// Blanket request for fresh information.
struct RequestPayload {
    double time = 0.0;
};

using Payload =
    std::variant<TrackPayload, FeaturePayload, DecisionPayload, ForecastPayload, SelfReportPayload, RequestPayload>;

enum class PayloadKind { Track, FeatureSamples, Decision, Forecast, SelfReport, Request };
std::string_view to_string(PayloadKind k);
PayloadKind kind_of(const Payload& p);

/// 1 per track, decision, self-report or request; 1 per 10 feature samples;
/// 2 per forecast.
int size_units(const Payload& p);

struct Message {
    std::uint64_t seq = 0;
    AgentId sender;
    AgentKind sender_kind = AgentKind::Vehicle;
    double created = 0.0;
    PayloadKind kind = PayloadKind::Track;
    std::shared_ptr<const Payload> payload;
    int size = 1;
    double priority = 0.0;
};

Message make_message(std::uint64_t seq, AgentId sender, AgentKind kind, double created, Payload payload,
                     double priority);

// ---------------------------------------------------------------------------
// Priority scoring

struct ScoreTerms {
    double urgency = 0.0;
    double novelty = 0.0;
    double uncertainty = 0.0;
    double total = 0.0;
};

/// Time for `state` to reach `conflict` at its current closing speed;
/// infinity when receding.
double time_to_conflict(const Vec2& position, const Vec2& velocity, const Vec2& conflict);

/// `receiver` is the sender's estimate of what the receiver already holds for
/// this object, aligned to the payload time; nullopt when nothing was sent.
ScoreTerms priority_score(const TrackEstimate& payload, const std::optional<TrackEstimate>& receiver,
                          const std::optional<Vec2>& conflict, bool transition, const PriorityWeights& w,
                          double gate = 9.21);

// ---------------------------------------------------------------------------
// Strategies

/// Everything an agent could send about one of its tracks this tick.
struct Product {
    TrackEstimate state;
    bool transition = false;
    std::vector<Payload> payloads;
};

/// Sender-side memory used as the proxy for the receiver's view.
class SenderMemory {
public:
    std::optional<TrackEstimate> receiver_view(std::uint32_t track, double now, double q) const;
    void record(const TrackEstimate& sent);

private:
    std::map<std::uint32_t, TrackEstimate> last_sent_;
};

struct Decided {
    Payload payload;
    double priority;
};

/// Products to enqueue for one agent this tick, highest priority first.
std::vector<Decided> strategy_decide(StrategyKind strategy, std::span<const Product> products, SenderMemory& memory,
                                     double now, bool request_received, const std::optional<Vec2>& conflict,
                                     const NetworkParams& params, double proxy_q = 1.0);

// ---------------------------------------------------------------------------
// Network state

struct NetworkCounters {
    std::uint64_t sent = 0;  // per-destination copies
    std::uint64_t delivered = 0;
    std::uint64_t dropped_loss = 0;
    std::uint64_t dropped_expired = 0;
    std::uint64_t dropped_departed = 0;
    std::uint64_t in_flight = 0;
    std::uint64_t queued = 0;
    std::uint64_t messages = 0;
    std::uint64_t units_transmitted = 0;

    bool conserved() const {
        return sent == delivered + dropped_loss + dropped_expired + dropped_departed + in_flight + queued;
    }
};

struct Delivery {
    Message message;
    AgentId receiver;
    double time = 0.0;
};

struct NodeState {
    AgentId id;
    Vec2 position = Vec2::Zero();
    LinkModel link;
    bool active = true;
};

class Network {
public:
    Network(NetworkParams params, std::uint64_t seed);

    /// Replaces node positions and activity. Queued and in-flight copies that
    /// involve an inactive node are dropped as departed.
    void set_nodes(std::span<const NodeState> nodes);

    /// Fans the message out to every active node except the sender.
    void enqueue(Message m);

    /// Expires old queued messages, transmits within each sender's budget and
    /// delivers copies whose delivery time has come.
    std::vector<Delivery> step(double now, std::uint64_t tick);

    const NetworkCounters& counters() const { return counters_; }
    std::size_t queue_depth(AgentId agent) const;
    std::size_t total_queue_depth() const;
    std::uint64_t units_transmitted(AgentId agent) const;
    /// Units transmitted by each agent in the latest step.
    const std::map<AgentId, int>& last_step_units() const { return last_units_; }
    /// Recounts queued and in-flight copies from the containers.
    bool consistent() const;

private:
    struct Queued {
        Message message;
        std::vector<AgentId> destinations;
    };
    struct InFlight {
        Message message;
        AgentId receiver;
        double time;
    };

    const NodeState* node(AgentId id) const;

    NetworkParams params_;
    std::uint64_t seed_;
    std::map<AgentId, NodeState> nodes_;
    std::map<AgentId, std::vector<Queued>> outbox_;
    std::vector<InFlight> in_flight_;
    NetworkCounters counters_;
    std::map<AgentId, std::uint64_t> units_by_agent_;
    std::map<AgentId, int> last_units_;
};

}  // namespace vruco
