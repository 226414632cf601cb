#include "vruco/coop_fusion.hpp"

#include <algorithm>
#include <cmath>

namespace vruco {

double FusionWeights::reliability(AgentKind kind) const {
    switch (kind) {
        case AgentKind::SmartDevice: return smart_device;
        case AgentKind::Infrastructure: return infrastructure;
        case AgentKind::Vehicle: return vehicle;
        case AgentKind::EgoVehicle: return ego;
    }
    return 1.0;
}

// ---------------------------------------------------------------------------
// Track fusion

namespace {

Mat4 checked_inverse(const Mat4& P) {
    const Eigen::LLT<Mat4> llt(P);
    if (llt.info() != Eigen::Success) throw MalformedInput("singular or indefinite covariance");
    const Mat4 inv = llt.solve(Mat4::Identity());
    if (!inv.allFinite()) throw MalformedInput("singular covariance");
    return symmetrized(inv);
}

void require_aligned(const TrackEstimate& a, const TrackEstimate& b) {
    if (std::abs(a.time - b.time) > 1e-9) throw MalformedInput("track timestamps are not aligned");
}

}  // namespace

CiResult covariance_intersection(const Vec4& a, const Mat4& Pa, const Vec4& b, const Mat4& Pb, double tolerance) {
    const Mat4 Ia = checked_inverse(Pa);
    const Mat4 Ib = checked_inverse(Pb);
    auto info = [&](double w) { return Mat4(w * Ia + (1.0 - w) * Ib); };
    auto trace_at = [&](double w) {
        if (w <= 0.0) return Pb.trace();
        if (w >= 1.0) return Pa.trace();
        return info(w).ldlt().solve(Mat4::Identity()).trace();
    };

    constexpr double kInvPhi = 0.6180339887498949;
    double lo = 0.0;
    double hi = 1.0;
    double x1 = hi - kInvPhi * (hi - lo);
    double x2 = lo + kInvPhi * (hi - lo);
    double f1 = trace_at(x1);
    double f2 = trace_at(x2);
    while (hi - lo > tolerance) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - kInvPhi * (hi - lo);
            f1 = trace_at(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + kInvPhi * (hi - lo);
            f2 = trace_at(x2);
        }
    }
    double w = 0.5 * (lo + hi);
    double best = trace_at(w);
    for (double end : {0.0, 1.0}) {
        const double f = trace_at(end);
        if (f < best) {
            best = f;
            w = end;
        }
    }

    if (w == 0.0) return {b, Pb, 0.0};
    if (w == 1.0) return {a, Pa, 1.0};
    const Mat4 I = info(w);
    const Mat4 P = symmetrized(Mat4(I.ldlt().solve(Mat4::Identity())));
    const Vec4 m = P * (w * Ia * a + (1.0 - w) * Ib * b);
    return {m, P, w};
}

TrackEstimate fuse_tracks_ci(const TrackEstimate& a, const TrackEstimate& b) {
    require_aligned(a, b);
    const auto r = covariance_intersection(a.mean, a.cov, b.mean, b.cov);
    TrackEstimate out = a;
    out.mean = r.mean;
    out.cov = r.cov;
    require_covariance(out.cov, "covariance intersection output");
    return out;
}

TrackEstimate fuse_tracks_naive(const TrackEstimate& a, const TrackEstimate& b) {
    require_aligned(a, b);
    const Mat4 Ia = checked_inverse(a.cov);
    const Mat4 Ib = checked_inverse(b.cov);
    const Mat4 P = symmetrized(Mat4((Ia + Ib).ldlt().solve(Mat4::Identity())));
    TrackEstimate out = a;
    out.mean = P * (Ia * a.mean + Ib * b.mean);
    out.cov = P;
    require_covariance(out.cov, "product fusion output");
    return out;
}

// ---------------------------------------------------------------------------
// Decision and forecast fusion

SecondOrderDistribution fuse_decisions(std::span<const WeightedDecision> inputs, DecisionMode mode) {
    if (inputs.empty()) throw MalformedInput("decision fusion needs at least one input");
    const VruKind kind = inputs.front().dist.kind();
    for (const auto& in : inputs) {
        if (in.dist.kind() != kind) throw MalformedInput("decision inputs use different primitive sets");
        if (!(in.reliability >= 0.0) || in.reliability > 1.0) throw MalformedInput("reliability must be in [0, 1]");
    }

    if (mode == DecisionMode::Competitive) {
        const WeightedDecision* best = nullptr;
        double best_score = -1.0;
        for (const auto& in : inputs) {
            const double score =
                in.reliability * in.dist.evidence() * *std::max_element(in.dist.p().begin(), in.dist.p().end());
            if (score > best_score) {
                best_score = score;
                best = &in;
            }
        }
        return best->dist;
    }

    // Evidence vectors summed in a canonical order so the result does not
    // depend on the order of the inputs. Pooled inputs at full reliability
    // contribute their original terms, which makes nesting flatten exactly.
    std::vector<std::vector<double>> alphas;
    alphas.reserve(inputs.size());
    for (const auto& in : inputs) {
        if (in.reliability == 1.0 && !in.dist.pooled_terms().empty()) {
            const auto& t = in.dist.pooled_terms();
            alphas.insert(alphas.end(), t.begin(), t.end());
            continue;
        }
        std::vector<double> a(in.dist.size());
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = in.reliability * in.dist.evidence() * in.dist.p()[i];
        alphas.push_back(std::move(a));
    }
    std::sort(alphas.begin(), alphas.end());
    std::vector<double> total(alphas.front().size(), 0.0);
    for (const auto& a : alphas) {
        for (std::size_t i = 0; i < a.size(); ++i) total[i] += a[i];
    }
    double s = 0.0;
    for (double v : total) s += v;
    if (!(s > 0.0)) throw DegenerateWeights("fused evidence is zero");
    SecondOrderDistribution out(kind, normalize_distribution(total), s);
    out.set_pooled_terms(std::move(alphas));
    return out;
}

ForecastTrajectory fuse_forecasts(std::span<const WeightedForecast> members) {
    if (members.empty()) throw MalformedInput("forecast fusion needs at least one member");
    std::vector<ForecastTrajectory> fs;
    std::vector<double> w;
    for (const auto& m : members) {
        fs.push_back(m.forecast);
        w.push_back(m.reliability * confidence_weight(m.forecast));
    }
    return ensemble_forecast(fs, w, Producer::Fused);
}

// ---------------------------------------------------------------------------
// Feature fusion

FeatureFusionCount fuse_features(IntentionState& windows, std::span<const FeatureSample> samples,
                                 double reliability, AgentId source) {
    FeatureFusionCount c;
    for (const auto& s : samples) {
        const auto before = windows.x().stale_discards();
        windows.add_sample(s.time, s.position, s.speed, reliability, source);
        if (windows.x().stale_discards() != before) {
            ++c.stale;
        } else {
            ++c.inserted;
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// VRU map

VruMap::VruMap(AgentId ego, MapParams params) : ego_(ego), params_(std::move(params)) {}

const MapEntry* VruMap::find(std::uint32_t id) const {
    for (const auto& e : entries_) {
        if (e.id == id) return &e;
    }
    return nullptr;
}

const MapEntry* VruMap::route(AgentId sender, std::uint32_t track) const {
    const auto it = routes_.find({sender, track});
    return it == routes_.end() ? nullptr : find(it->second);
}

MapEntry* VruMap::route_mut(AgentId sender, std::uint32_t track) {
    return const_cast<MapEntry*>(route(sender, track));
}

TrackEstimate VruMap::fuse(const TrackEstimate& a, const TrackEstimate& b) {
    if (params_.naive_tracks) {
        ++counters_.naive_calls;
        return fuse_tracks_naive(a, b);
    }
    ++counters_.ci_calls;
    return fuse_tracks_ci(a, b);
}

void VruMap::update(std::span<const TrackInput> inputs, double now) {
    ++counters_.map_updates;
    for (auto& e : entries_) {
        if (e.fused.time < now) e.fused = propagate_cv(e.fused, now - e.fused.time, params_.q);
        e.ego_tracks.clear();
    }

    auto gate_d2 = [](const TrackEstimate& a, const TrackEstimate& b) {
        return mahalanobis2(b.position() - a.position(), a.position_cov() + b.position_cov());
    };

    std::map<std::uint32_t, std::set<AgentId>> touched;
    for (const auto& in : inputs) {
        TrackEstimate t = in.track;
        if (t.time < now) t = propagate_cv(t, now - t.time, params_.q);
        t.time = now;

        MapEntry* target = route_mut(in.source, in.track.id);
        if (target && (touched[target->id].contains(in.source) || gate_d2(target->fused, t) > params_.gate)) {
            target = nullptr;
        }
        if (!target) {
            double best = params_.gate;
            for (auto& e : entries_) {
                if (touched[e.id].contains(in.source)) continue;
                const double d2 = gate_d2(e.fused, t);
                if (d2 <= best) {
                    best = d2;
                    target = &e;
                }
            }
        }
        if (target) {
            const double ext = target->fused.extent_m;
            target->fused = fuse(target->fused, t);
            target->fused.extent_m = 0.5 * (ext + t.extent_m);
        } else {
            MapEntry e;
            e.id = next_id_++;
            e.fused = t;
            e.fused.id = e.id;
            e.intention = IntentionState(e.id, params_.intention);
            e.fused.owner = ego_;
            entries_.push_back(std::move(e));
            ++counters_.entries_created;
            target = &entries_.back();
        }
        touched[target->id].insert(in.source);
        target->contributors.insert(in.source);
        auto& seen = target->last_seen[in.source];
        seen = std::max(seen, in.track.time);
        target->last_contribution = std::max(target->last_contribution, in.track.time);
        routes_[{in.source, in.track.id}] = target->id;

        if (in.source == ego_) {
            target->ego_tracks.push_back(t);
            const auto& orig = in.track;
            auto& last = target->last_sample_time.try_emplace(ego_, -1.0).first->second;
            if (orig.last_update == orig.time && orig.time > last) {
                target->intention.add_sample(orig.time, orig.position(), orig.velocity().norm(),
                                             params_.weights.ego, ego_);
                last = orig.time;
            }
        }
    }

    for (auto& e : entries_) {
        int count = 0;
        for (const auto& [agent, t] : e.last_seen) {
            if (t >= now - params_.confirm_window_s) ++count;
        }
        e.confirmation = count;
        if (count >= params_.confirm_count) e.confirmed = true;
    }

    const auto before = entries_.size();
    std::erase_if(entries_, [&](const MapEntry& e) { return e.staleness(now) > params_.stale_s; });
    counters_.entries_dropped += before - entries_.size();
    std::erase_if(routes_, [&](const auto& kv) { return find(kv.second) == nullptr; });
}

void VruMap::add_features(AgentId sender, AgentKind kind, std::uint32_t track,
                          std::span<const FeatureSample> samples) {
    if (!params_.type_a) return;
    counters_.samples_in += samples.size();
    MapEntry* e = route_mut(sender, track);
    if (!e) {
        counters_.samples_orphaned += samples.size();
        ++counters_.messages_orphaned;
        return;
    }
    ++counters_.feature_fusions;
    const auto c = fuse_features(e->intention, samples, params_.weights.reliability(kind), sender);
    counters_.samples_inserted += c.inserted;
    counters_.samples_stale += c.stale;
}

void VruMap::add_decision(AgentId sender, AgentKind kind, std::uint32_t track, double time,
                          const SecondOrderDistribution& d) {
    MapEntry* e = route_mut(sender, track);
    if (!e) {
        ++counters_.messages_orphaned;
        return;
    }
    e->remote_decisions.insert_or_assign(sender, TimedDecision{time, d, kind});
}

void VruMap::add_self_report(AgentId sender, std::uint32_t track, double time, const SelfReport& r) {
    MapEntry* e = route_mut(sender, track);
    if (!e) {
        ++counters_.messages_orphaned;
        return;
    }
    e->self_reports.insert_or_assign(sender, TimedSelfReport{time, r});
}

void VruMap::add_forecast(AgentId sender, AgentKind kind, std::uint32_t track, const ForecastTrajectory& f) {
    MapEntry* e = route_mut(sender, track);
    if (!e) {
        ++counters_.messages_orphaned;
        return;
    }
    e->remote_forecasts.insert_or_assign(sender, TimedForecast{f, kind});
}

std::vector<TransitionEvent> VruMap::refresh(double now) {
    std::vector<TransitionEvent> events;
    for (auto& e : entries_) {
        const VruKind kind = e.kind();
        std::vector<WeightedDecision> inputs;

        bool gesture = false;
        for (const auto& [agent, r] : e.self_reports) {
            if (now - r.time <= params_.max_input_age_s && r.report.gesture) gesture = true;
        }
        std::optional<FeatureVector> f;
        const auto own = e.intention.classify(now, kind, gesture, &f);
        if (f) inputs.push_back({own, params_.weights.ego});

        if (params_.type_b) {
            for (const auto& [agent, d] : e.remote_decisions) {
                if (now - d.time > params_.max_input_age_s || d.dist.kind() != kind) continue;
                inputs.push_back({d.dist, params_.weights.reliability(d.kind)});
            }
            for (const auto& [agent, r] : e.self_reports) {
                if (now - r.time > params_.max_input_age_s) continue;
                inputs.push_back({self_report_distribution(kind, r.report.primitive, params_.self_report_confusion,
                                                           params_.self_report_evidence),
                                  params_.weights.smart_device});
            }
        }

        e.decision_informative = !inputs.empty();
        if (inputs.empty()) {
            e.decision = SecondOrderDistribution::uniform(kind, params_.intention.classifier.s_min);
        } else {
            ++counters_.decision_fusions;
            e.decision = fuse_decisions(inputs, params_.decision_mode);
        }
        if (auto ev = e.intention.observe(now, *e.decision, e.decision_informative)) events.push_back(*ev);

        auto fc = e.intention.forecast(e.fused, *e.decision, now);
        std::vector<WeightedForecast> members{{fc, params_.weights.ego}};
        if (params_.type_b) {
            for (const auto& [agent, rf] : e.remote_forecasts) {
                if (now - rf.forecast.origin() > params_.max_input_age_s) continue;
                if (rf.forecast.horizons() != fc.horizons()) continue;
                members.push_back({resample(rf.forecast, now), params_.weights.reliability(rf.kind)});
            }
        }
        if (members.size() > 1) {
            ++counters_.forecast_fusions;
            e.forecast = fuse_forecasts(members);
        } else {
            e.forecast = std::move(fc);
        }
    }
    return events;
}

}  // namespace vruco
