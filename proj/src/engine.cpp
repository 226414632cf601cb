#include "vruco/engine.hpp"

#include "vruco/intention.hpp"
#include "vruco/perception.hpp"
#include "vruco/vanet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace vruco {

void RunConfig::validate() const {
    if (coop && !type_a && !type_b) throw MalformedInput("cooperation needs at least one fusion type");
    if (horizons) {
        if (horizons->empty()) throw MalformedInput("horizon grid is empty");
        for (std::size_t i = 0; i < horizons->size(); ++i) {
            if (!((*horizons)[i] > 0.0) || (i > 0 && (*horizons)[i] <= (*horizons)[i - 1])) {
                throw MalformedInput("horizon grid must be positive and increasing");
            }
        }
    }
}

std::string_view to_string(Stage s) {
    switch (s) {
        case Stage::TruthAdvance: return "truth-advance";
        case Stage::Membership: return "membership";
        case Stage::Perception: return "perception";
        case Stage::Intention: return "intention";
        case Stage::KnowledgeAcquisition: return "knowledge-acquisition";
        case Stage::Strategy: return "strategy";
        case Stage::Network: return "network";
        case Stage::EgoFusion: return "ego-fusion";
        case Stage::Metrics: return "metrics";
    }
    return "?";
}

namespace {

constexpr double kMatchRadius = 3.0;
constexpr double kCoverageGate = 9.21;
constexpr double kConflictZone = 30.0;

struct TrackPipeline {
    IntentionState intention;
    std::optional<IntentionOutput> latest{};
    bool pending_transition = false;
    std::vector<FeatureSample> samples{};
    double last_sample = -std::numeric_limits<double>::infinity();
    double last_sent_sample = -std::numeric_limits<double>::infinity();
};

struct AgentRuntime {
    const AgentSpec* spec = nullptr;
    LocalTracker tracker;
    std::optional<std::int64_t> last_frame{};
    bool active = false;
    bool stepped = false;
    std::map<std::uint32_t, TrackPipeline> pipelines{};
    SenderMemory memory{};
    bool request_received = false;
    std::optional<SelfReport> self_report{};
};

struct ViewItem {
    std::uint32_t id = 0;
    TrackEstimate state;
    bool confirmed = false;
    std::optional<SecondOrderDistribution> decision;
    const ForecastTrajectory* forecast = nullptr;
    std::vector<const TrackEstimate*> estimates;
};

bool on_conflict_path(const Vec2& p, const Vec2& v, const Vec2& c, double corridor) {
    const Vec2 to = c - p;
    const double dist = to.norm();
    const double speed = v.norm();
    if (dist == 0.0) return true;
    if (speed < 1e-9) return false;
    if (v.dot(to) <= 0.0) return false;
    const Vec2 dir = v / speed;
    return std::abs(dir.x() * to.y() - dir.y() * to.x()) <= corridor;
}

std::optional<VruId> nearest_truth(const Vec2& p, std::span<const GroundTruthState> truth) {
    std::optional<VruId> best;
    double best_d = kMatchRadius;
    for (const auto& g : truth) {
        const double d = (g.kin.position - p).norm();
        if (d <= best_d) {
            best_d = d;
            best = g.vru;
        }
    }
    return best;
}

}  // namespace

RunOutput run(const Scenario& sc, const RunConfig& cfg) {
    cfg.validate();
    const StrategyKind strategy = cfg.strategy.value_or(sc.network.strategy);
    IntentionParams iparams;
    if (cfg.horizons) iparams.forecast.horizons = *cfg.horizons;

    RunOutput out;
    MetricsReport& rep = out.report;
    rep.scenario = sc.name;
    rep.seed = cfg.seed;
    rep.coop = cfg.coop;
    rep.strategy = strategy;
    rep.type_a = cfg.type_a;
    rep.type_b = cfg.type_b;
    rep.naive_tracks = cfg.naive_tracks;

    std::vector<AgentRuntime> agents;
    agents.reserve(sc.agents.size());
    for (const auto& a : sc.agents) {
        AgentRuntime rt{.spec = &a, .tracker = LocalTracker(a.id)};
        agents.push_back(std::move(rt));
    }
    std::sort(agents.begin(), agents.end(),
              [](const AgentRuntime& a, const AgentRuntime& b) { return a.spec->id < b.spec->id; });
    auto runtime = [&](AgentId id) -> AgentRuntime& {
        for (auto& a : agents) {
            if (a.spec->id == id) return a;
        }
        throw OutOfRange("unknown agent");
    };

    const auto ego_id = sc.ego();
    AgentRuntime* ego = ego_id ? &runtime(*ego_id) : nullptr;

    Network net(sc.network, cfg.seed);
    std::optional<VruMap> map;
    if (cfg.coop && ego) {
        MapParams mp;
        mp.type_a = cfg.type_a;
        mp.type_b = cfg.type_b;
        mp.naive_tracks = cfg.naive_tracks;
        mp.decision_mode = cfg.decision_mode;
        mp.intention = iparams;
        map.emplace(*ego_id, mp);
    }

    const std::optional<Vec2> conflict_point =
        sc.conflict ? std::optional<Vec2>(sc.conflict->point) : std::nullopt;
    rep.conflict_time = conflict_time(sc);
    const std::optional<VruId> conflict_vru = sc.conflict ? sc.conflict->vru : std::nullopt;

    std::map<VruId, CoverageReport> coverage;
    std::map<VruId, std::vector<TransitionEvent>> events_by_vru;
    for (const auto& v : sc.vrus) {
        coverage[v.id].vru = v.id;
        events_by_vru[v.id];
    }
    ForecastErrorAccumulator acc;
    std::uint64_t seq = 0;

    auto truth_fn = [&](VruId id) {
        const auto* plan = &sc.vru(id).plan;
        const double end = sc.duration_s;
        return TruthFn([plan, end](double tt) -> std::optional<Vec2> {
            if (tt > end + 1e-9) return std::nullopt;
            return kinematics_at(*plan, std::min(tt, end)).position;
        });
    };
    std::map<VruId, TruthFn> truth_fns;
    for (const auto& v : sc.vrus) truth_fns.emplace(v.id, truth_fn(v.id));

    auto mark = [&](std::size_t k, Stage s) {
        if (cfg.trace) out.trace.push_back({k, s});
    };

    const std::size_t ticks = sc.tick_count();
    rep.ticks = ticks;
    for (std::size_t k = 0; k < ticks; ++k) {
        const double t = sc.tick_time(k);

        // 1. truth
        mark(k, Stage::TruthAdvance);
        const auto truth = ground_truth_at(sc, t);

        // 2. membership
        mark(k, Stage::Membership);
        std::vector<NodeState> nodes;
        for (auto& a : agents) {
            a.active = a.spec->active_at(t);
            a.stepped = false;
            nodes.push_back({a.spec->id, agent_pose(sc, *a.spec, t).position, a.spec->link, a.active});
        }
        if (cfg.coop) net.set_nodes(nodes);

        // 3. perception
        mark(k, Stage::Perception);
        for (auto& a : agents) {
            if (!a.active) continue;
            const auto& sp = a.spec->sensor;
            const auto frame = static_cast<std::int64_t>(std::floor(t * sp.frame_hz + 1e-9));
            if (a.last_frame && *a.last_frame == frame) continue;
            a.last_frame = frame;
            const SensorModel sensor{a.spec->id, sp, agent_pose(sc, *a.spec, t)};
            Rng rng = sensing_stream(cfg.seed, a.spec->id, k);
            const auto dets = sense(sensor, t, truth, sc.obstacles, rng);
            for (const auto& d : dets) {
                if (d.self_report) a.self_report = d.self_report;
            }
            a.tracker.step(dets, t);
            a.stepped = true;
        }

        // 4. intention
        mark(k, Stage::Intention);
        std::vector<std::pair<TransitionEvent, Vec2>> view_events;
        for (auto& a : agents) {
            if (!a.active || !a.stepped) continue;
            if (a.spec->sensor.smart_device) continue;
            const bool is_ego = ego && a.spec->id == ego->spec->id;
            if (is_ego && map) continue;
            std::map<std::uint32_t, TrackPipeline> next;
            for (const auto& tr : a.tracker.tracks()) {
                if (!tr.confirmed) continue;
                auto it = a.pipelines.find(tr.id);
                TrackPipeline pl = it != a.pipelines.end() ? std::move(it->second)
                                                           : TrackPipeline{.intention = IntentionState(tr.id, iparams)};
                if (tr.last_update == tr.time && tr.time > pl.last_sample) {
                    const FeatureSample fs{tr.time, tr.position(), tr.velocity().norm()};
                    pl.intention.add_sample(fs.time, fs.position, fs.speed, 1.0, a.spec->id);
                    pl.samples.push_back(fs);
                    pl.last_sample = tr.time;
                    const double cutoff = t - iparams.window.span_s;
                    std::erase_if(pl.samples, [&](const FeatureSample& s) { return s.time <= cutoff; });
                }
                auto o = pl.intention.step(tr, t);
                if (o.transition) {
                    pl.pending_transition = true;
                    if (is_ego) view_events.emplace_back(*o.transition, tr.position());
                }
                pl.latest = std::move(o);
                next.emplace(tr.id, std::move(pl));
            }
            a.pipelines = std::move(next);
        }

        // knowledge acquisition: no learning in scope, recorded for the trace
        mark(k, Stage::KnowledgeAcquisition);

        // 5. strategy
        mark(k, Stage::Strategy);
        if (cfg.coop) {
            for (auto& a : agents) {
                if (!a.active) continue;
                const bool is_ego = ego && a.spec->id == ego->spec->id;
                if (is_ego) {
                    if (strategy != StrategyKind::RequestOnly || !map) continue;
                    bool need = true;
                    for (const auto& e : map->entries()) {
                        const bool in_zone = !conflict_point ||
                                             (e.fused.position() - *conflict_point).norm() <= kConflictZone;
                        if (!in_zone) continue;
                        need = e.staleness(t) > sc.network.request_staleness_s;
                        if (need) break;
                    }
                    if (need) {
                        net.enqueue(make_message(seq++, a.spec->id, a.spec->kind, t, RequestPayload{t}, 1.0));
                    }
                    continue;
                }
                if (!a.stepped) continue;
                std::vector<Product> products;
                for (const auto& tr : a.tracker.tracks()) {
                    if (!tr.confirmed || tr.time != t) continue;
                    Product p{tr, false, {}};
                    p.payloads.push_back(TrackPayload{tr});
                    if (a.spec->sensor.smart_device) {
                        if (a.self_report) p.payloads.push_back(SelfReportPayload{tr.id, t, *a.self_report});
                    } else if (auto it = a.pipelines.find(tr.id); it != a.pipelines.end() && it->second.latest) {
                        auto& pl = it->second;
                        p.transition = pl.pending_transition;
                        FeaturePayload fp{tr.id, {}};
                        for (const auto& s : pl.samples) {
                            if (s.time > pl.last_sent_sample) fp.samples.push_back(s);
                        }
                        if (!fp.samples.empty()) p.payloads.push_back(std::move(fp));
                        p.payloads.push_back(DecisionPayload{tr.id, t, pl.latest->decision, pl.pending_transition});
                        p.payloads.push_back(ForecastPayload{tr.id, pl.latest->forecast});
                    }
                    products.push_back(std::move(p));
                }
                const auto decided =
                    strategy_decide(strategy, products, a.memory, t, a.request_received, conflict_point, sc.network);
                a.request_received = false;
                for (const auto& d : decided) {
                    if (const auto* fp = std::get_if<FeaturePayload>(&d.payload)) {
                        auto& pl = a.pipelines.at(fp->track);
                        pl.last_sent_sample = std::max(pl.last_sent_sample, fp->samples.back().time);
                    } else if (const auto* dp = std::get_if<DecisionPayload>(&d.payload)) {
                        a.pipelines.at(dp->track).pending_transition = false;
                    }
                    net.enqueue(make_message(seq++, a.spec->id, a.spec->kind, t, d.payload, d.priority));
                }
            }
        }

        // 6. network
        mark(k, Stage::Network);
        std::vector<Delivery> inbox;
        if (cfg.coop) {
            auto delivered = net.step(t, k);
            if (!net.consistent()) throw InternalConsistencyError("network counters do not reconcile");
            for (const auto& [agent, units] : net.last_step_units()) {
                rep.max_units_per_tick = std::max<std::uint64_t>(rep.max_units_per_tick, static_cast<std::uint64_t>(units));
            }
            for (auto& d : delivered) {
                if (d.message.kind == PayloadKind::Request) {
                    runtime(d.receiver).request_received = true;
                } else if (ego && d.receiver == ego->spec->id) {
                    inbox.push_back(std::move(d));
                }
            }
        }

        // 7. ego fusion
        mark(k, Stage::EgoFusion);
        if (map) {
            std::vector<TrackInput> inputs;
            if (ego->active) {
                for (const auto& tr : ego->tracker.tracks()) {
                    if (tr.confirmed) inputs.push_back({tr, ego->spec->id, AgentKind::EgoVehicle});
                }
            }
            for (const auto& d : inbox) {
                if (const auto* tp = std::get_if<TrackPayload>(d.message.payload.get())) {
                    inputs.push_back({tp->track, d.message.sender, d.message.sender_kind});
                }
            }
            map->update(inputs, t);
            for (const auto& d : inbox) {
                const auto& m = d.message;
                const Payload& p = *m.payload;
                if (const auto* fp = std::get_if<FeaturePayload>(&p)) {
                    if (cfg.type_a) map->add_features(m.sender, m.sender_kind, fp->track, fp->samples);
                } else if (const auto* dp = std::get_if<DecisionPayload>(&p)) {
                    map->add_decision(m.sender, m.sender_kind, dp->track, dp->time, dp->dist);
                } else if (const auto* sp = std::get_if<SelfReportPayload>(&p)) {
                    map->add_self_report(m.sender, sp->track, sp->time, sp->report);
                } else if (const auto* fc = std::get_if<ForecastPayload>(&p)) {
                    map->add_forecast(m.sender, m.sender_kind, fc->track, fc->forecast);
                }
            }
            for (const auto& ev : map->refresh(t)) {
                if (const auto* e = map->find(ev.track)) view_events.emplace_back(ev, e->fused.position());
            }
        }

        // 8. metrics
        mark(k, Stage::Metrics);
        std::vector<ViewItem> view;
        if (map) {
            for (const auto& e : map->entries()) {
                ViewItem it;
                it.id = e.id;
                it.state = e.fused;
                it.confirmed = e.confirmed || !e.ego_tracks.empty();
                it.decision = e.decision;
                it.forecast = e.forecast ? &*e.forecast : nullptr;
                it.estimates.push_back(&e.fused);
                for (const auto& et : e.ego_tracks) it.estimates.push_back(&et);
                view.push_back(std::move(it));
            }
        } else if (ego) {
            for (const auto& tr : ego->tracker.tracks()) {
                if (!tr.confirmed) continue;
                ViewItem it;
                it.id = tr.id;
                it.state = tr;
                it.confirmed = true;
                if (auto p = ego->pipelines.find(tr.id); p != ego->pipelines.end() && p->second.latest) {
                    it.decision = p->second.latest->decision;
                    it.forecast = &p->second.latest->forecast;
                }
                it.estimates.push_back(&tr);
                view.push_back(std::move(it));
            }
        }

        // coverage of VRUs the ego cannot see
        std::size_t hidden_now = 0;
        std::size_t covered_now = 0;
        if (ego) {
            const SensorModel ego_sensor{ego->spec->id, ego->spec->sensor, agent_pose(sc, *ego->spec, t)};
            for (const auto& g : truth) {
                if (t < sc.warmup_s) break;
                if (conflict_vru && g.vru == *conflict_vru && rep.conflict_time && t >= *rep.conflict_time) continue;
                const bool visible = ego->active && in_field_of_view(ego_sensor, g.kin.position) &&
                                     line_of_sight(ego_sensor.mount.position, g.kin.position, sc.obstacles);
                if (visible) continue;
                auto& c = coverage[g.vru];
                ++c.hidden_ticks;
                ++hidden_now;
                bool covered = false;
                for (const auto& it : view) {
                    for (const auto* est : it.estimates) {
                        if (mahalanobis2(g.kin.position - est->position(), est->position_cov()) <= kCoverageGate) {
                            covered = true;
                        }
                    }
                }
                if (covered) {
                    ++c.covered_ticks;
                    ++covered_now;
                }
            }
        }

        // alerts
        if (sc.conflict) {
            for (const auto& it : view) {
                if (!it.confirmed || !it.decision || !is_moving(it.decision->argmax())) continue;
                const Vec2 p = it.state.position();
                const Vec2 v = it.state.velocity();
                if (!on_conflict_path(p, v, sc.conflict->point, sc.conflict->corridor_m)) continue;
                if (time_to_conflict(p, v, sc.conflict->point) > sc.conflict->alert_ttc_s) continue;
                const auto who = nearest_truth(p, truth);
                if (who && conflict_vru && *who == *conflict_vru) {
                    if (!rep.alert_time) rep.alert_time = t;
                } else {
                    ++rep.unmatched_alerts;
                }
            }
        }

        // forecasts
        double err_sum = 0.0;
        std::size_t err_n = 0;
        for (const auto& it : view) {
            if (!it.forecast) continue;
            const auto& f = *it.forecast;
            ++rep.forecasts_emitted;
            bool monotone = true;
            for (std::size_t i = 1; i < f.size(); ++i) {
                if (f.covs()[i].trace() < f.covs()[i - 1].trace()) monotone = false;
            }
            if (monotone) ++rep.forecasts_monotone;
            if (t < sc.warmup_s) continue;
            const auto who = nearest_truth(it.state.position(), truth);
            if (!who) continue;
            const auto& tf = truth_fns.at(*who);
            acc.add(f, tf);
            const auto i1 = f.nearest(1.0);
            if (auto p = tf(f.origin() + f.horizons()[i1])) {
                err_sum += (f.means()[i1] - *p).norm();
                ++err_n;
            }
        }

        for (const auto& [ev, pos] : view_events) {
            const auto who = nearest_truth(pos, truth);
            if (who) {
                events_by_vru[*who].push_back(ev);
            } else {
                ++rep.unmatched_events;
            }
        }

        TimeseriesRow row;
        row.time = t;
        row.map_entries = view.size();
        if (hidden_now > 0) row.coverage = static_cast<double>(covered_now) / static_cast<double>(hidden_now);
        row.queue_depth = cfg.coop ? net.total_queue_depth() : 0;
        if (err_n > 0) row.error_1s = err_sum / static_cast<double>(err_n);
        rep.timeseries.push_back(row);
    }

    rep.network = net.counters();
    rep.conservation_held = net.consistent();
    if (map) rep.fusion = map->counters();
    rep.forecast_error = acc.finish();
    if (rep.conflict_time) rep.warning_lead = metric_warning_lead(rep.alert_time, *rep.conflict_time);

    std::size_t hidden = 0;
    std::size_t covered = 0;
    for (const auto& [id, c] : coverage) {
        rep.coverage.push_back(c);
        hidden += c.hidden_ticks;
        covered += c.covered_ticks;
    }
    if (conflict_vru) {
        rep.occlusion_coverage = coverage[*conflict_vru].fraction();
    } else if (hidden > 0) {
        rep.occlusion_coverage = static_cast<double>(covered) / static_cast<double>(hidden);
    }

    for (const auto& v : sc.vrus) {
        const auto truth_tr = transition_times(sc, v.id);
        rep.transitions.push_back({v.id, metric_transition_latency(events_by_vru[v.id], truth_tr)});
    }
    return out;
}

}  // namespace vruco
