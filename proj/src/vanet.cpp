#include "vruco/vanet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vruco {

// ---------------------------------------------------------------------------
// Messages

std::string_view to_string(PayloadKind k) {
    switch (k) {
        case PayloadKind::Track: return "track";
        case PayloadKind::FeatureSamples: return "feature-samples";
        case PayloadKind::Decision: return "decision";
        case PayloadKind::Forecast: return "forecast";
        case PayloadKind::SelfReport: return "self-report";
        case PayloadKind::Request: return "request";
    }
    return "?";
}

PayloadKind kind_of(const Payload& p) { return static_cast<PayloadKind>(p.index()); }

int size_units(const Payload& p) {
    if (const auto* f = std::get_if<FeaturePayload>(&p)) {
        return std::max<int>(1, static_cast<int>((f->samples.size() + 9) / 10));
    }
    if (std::holds_alternative<ForecastPayload>(p)) return 2;
    return 1;
}

Message make_message(std::uint64_t seq, AgentId sender, AgentKind kind, double created, Payload payload,
                     double priority) {
    Message m;
    m.seq = seq;
    m.sender = sender;
    m.sender_kind = kind;
    m.created = created;
    m.kind = kind_of(payload);
    m.size = size_units(payload);
    m.priority = priority;
    m.payload = std::make_shared<const Payload>(std::move(payload));
    return m;
}

// ---------------------------------------------------------------------------
// Priority scoring

double time_to_conflict(const Vec2& position, const Vec2& velocity, const Vec2& conflict) {
    const Vec2 to = conflict - position;
    const double dist = to.norm();
    if (dist == 0.0) return 0.0;
    const double closing = velocity.dot(to) / dist;
    if (closing <= 0.0) return std::numeric_limits<double>::infinity();
    return dist / closing;
}

ScoreTerms priority_score(const TrackEstimate& payload, const std::optional<TrackEstimate>& receiver,
                          const std::optional<Vec2>& conflict, bool transition, const PriorityWeights& w,
                          double gate) {
    ScoreTerms s;
    if (conflict) {
        const double ttc = time_to_conflict(payload.position(), payload.velocity(), *conflict);
        s.urgency = ttc == 0.0 ? 2.0 : std::clamp(1.0 / ttc, 0.0, 2.0);
    }
    if (!receiver || transition) {
        s.novelty = 1.0;
    } else {
        const double d2 = mahalanobis2(payload.position() - receiver->position(),
                                       payload.position_cov() + receiver->position_cov());
        s.novelty = std::min(d2 / gate, 1.0);
    }
    if (!receiver) {
        s.uncertainty = 1.0;
    } else {
        const double before = receiver->position_cov().trace();
        const double after = payload.position_cov().trace();
        s.uncertainty = before > 0.0 ? std::max(0.0, (before - after) / before) : 0.0;
    }
    s.total = w.urgency * s.urgency + w.novelty * s.novelty + w.uncertainty * s.uncertainty;
    return s;
}

// ---------------------------------------------------------------------------
// Strategies

std::optional<TrackEstimate> SenderMemory::receiver_view(std::uint32_t track, double now, double q) const {
    const auto it = last_sent_.find(track);
    if (it == last_sent_.end()) return std::nullopt;
    const double dt = now - it->second.time;
    if (dt <= 0.0) return it->second;
    return propagate_cv(it->second, dt, q);
}

void SenderMemory::record(const TrackEstimate& sent) { last_sent_.insert_or_assign(sent.id, sent); }

std::vector<Decided> strategy_decide(StrategyKind strategy, std::span<const Product> products, SenderMemory& memory,
                                     double now, bool request_received, const std::optional<Vec2>& conflict,
                                     const NetworkParams& params, double proxy_q) {
    (void)now;
    struct Pick {
        std::size_t index;
        double score;
    };
    std::vector<Pick> picks;
    for (std::size_t i = 0; i < products.size(); ++i) {
        const auto& p = products[i];
        const auto view = memory.receiver_view(p.state.id, p.state.time, proxy_q);
        const auto terms = priority_score(p.state, view, conflict, p.transition, params.weights);
        bool send = false;
        switch (strategy) {
            case StrategyKind::BroadcastAll: send = true; break;
            case StrategyKind::RequestOnly: send = request_received; break;
            case StrategyKind::AdaptivePriority: send = terms.total > params.threshold; break;
        }
        if (send) picks.push_back({i, terms.total});
    }
    std::stable_sort(picks.begin(), picks.end(), [](const Pick& a, const Pick& b) { return a.score > b.score; });

    std::vector<Decided> out;
    for (const auto& pk : picks) {
        const auto& p = products[pk.index];
        memory.record(p.state);
        for (const auto& pl : p.payloads) out.push_back({pl, pk.score});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Network state

Network::Network(NetworkParams params, std::uint64_t seed) : params_(params), seed_(seed) {}

const NodeState* Network::node(AgentId id) const {
    const auto it = nodes_.find(id);
    return it == nodes_.end() ? nullptr : &it->second;
}

void Network::set_nodes(std::span<const NodeState> nodes) {
    for (auto& [id, n] : nodes_) n.active = false;
    for (const auto& n : nodes) nodes_[n.id] = n;

    auto active = [&](AgentId id) {
        const auto* n = node(id);
        return n && n->active;
    };
    for (auto& [sender, queue] : outbox_) {
        for (auto& q : queue) {
            const auto before = q.destinations.size();
            if (!active(sender)) {
                q.destinations.clear();
            } else {
                std::erase_if(q.destinations, [&](AgentId d) { return !active(d); });
            }
            const auto dropped = before - q.destinations.size();
            counters_.dropped_departed += dropped;
            counters_.queued -= dropped;
        }
        std::erase_if(queue, [](const Queued& q) { return q.destinations.empty(); });
    }
    const auto before = in_flight_.size();
    std::erase_if(in_flight_, [&](const InFlight& f) { return !active(f.message.sender) || !active(f.receiver); });
    const auto dropped = before - in_flight_.size();
    counters_.dropped_departed += dropped;
    counters_.in_flight -= dropped;
}

void Network::enqueue(Message m) {
    const auto* s = node(m.sender);
    if (!s || !s->active) return;
    Queued q{std::move(m), {}};
    for (const auto& [id, n] : nodes_) {
        if (n.active && id != q.message.sender) q.destinations.push_back(id);
    }
    if (q.destinations.empty()) return;
    counters_.sent += q.destinations.size();
    counters_.queued += q.destinations.size();
    ++counters_.messages;
    outbox_[q.message.sender].push_back(std::move(q));
}

std::vector<Delivery> Network::step(double now, std::uint64_t tick) {
    last_units_.clear();
    for (auto& [sender, queue] : outbox_) {
        // expiry
        std::erase_if(queue, [&](const Queued& q) {
            if (now - q.message.created <= params_.max_queue_age_s) return false;
            counters_.dropped_expired += q.destinations.size();
            counters_.queued -= q.destinations.size();
            return true;
        });
        std::stable_sort(queue.begin(), queue.end(), [](const Queued& a, const Queued& b) {
            if (a.message.priority != b.message.priority) return a.message.priority > b.message.priority;
            return a.message.seq < b.message.seq;
        });

        const auto* s = node(sender);
        if (!s || !s->active) continue;
        Rng rng(seed_, sender.value, "net", tick);
        int budget = params_.budget_units;
        std::size_t sent_count = 0;
        for (auto& q : queue) {
            if (q.message.size > budget) break;
            budget -= q.message.size;
            ++sent_count;
            counters_.units_transmitted += static_cast<std::uint64_t>(q.message.size);
            units_by_agent_[sender] += static_cast<std::uint64_t>(q.message.size);
            last_units_[sender] += q.message.size;
            for (AgentId dest : q.destinations) {
                --counters_.queued;
                const auto* d = node(dest);
                const bool in_range = d && (d->position - s->position).norm() <= s->link.range_m;
                const bool lost = rng.bernoulli(s->link.loss);
                const double delay = s->link.latency_s + rng.uniform(-s->link.jitter_s, s->link.jitter_s);
                if (!in_range || lost) {
                    ++counters_.dropped_loss;
                    continue;
                }
                in_flight_.push_back({q.message, dest, now + delay});
                ++counters_.in_flight;
            }
        }
        queue.erase(queue.begin(), queue.begin() + static_cast<std::ptrdiff_t>(sent_count));
    }

    std::vector<Delivery> out;
    std::vector<InFlight> keep;
    for (auto& f : in_flight_) {
        if (f.time <= now + 1e-9) {
            out.push_back({std::move(f.message), f.receiver, f.time});
        } else {
            keep.push_back(std::move(f));
        }
    }
    in_flight_ = std::move(keep);
    counters_.in_flight -= out.size();
    counters_.delivered += out.size();
    std::sort(out.begin(), out.end(), [](const Delivery& a, const Delivery& b) {
        if (a.time != b.time) return a.time < b.time;
        if (a.message.seq != b.message.seq) return a.message.seq < b.message.seq;
        return a.receiver < b.receiver;
    });
    return out;
}

std::size_t Network::queue_depth(AgentId agent) const {
    const auto it = outbox_.find(agent);
    return it == outbox_.end() ? 0 : it->second.size();
}

std::size_t Network::total_queue_depth() const {
    std::size_t n = 0;
    for (const auto& [a, q] : outbox_) n += q.size();
    return n;
}

std::uint64_t Network::units_transmitted(AgentId agent) const {
    const auto it = units_by_agent_.find(agent);
    return it == units_by_agent_.end() ? 0 : it->second;
}

bool Network::consistent() const {
    std::uint64_t queued = 0;
    for (const auto& [a, q] : outbox_) {
        for (const auto& m : q) queued += m.destinations.size();
    }
    return counters_.conserved() && queued == counters_.queued && in_flight_.size() == counters_.in_flight;
}

}  // namespace vruco
