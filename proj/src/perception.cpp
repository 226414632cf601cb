#include "vruco/perception.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

namespace vruco {

// ---------------------------------------------------------------------------
// Geometry

namespace {

double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

constexpr double kEps = 1e-12;

// Does the open segment p + t*d, t in (0, 1), cross the closed segment [a, b]?
bool crosses_segment(const Vec2& p, const Vec2& d, const Vec2& a, const Vec2& b) {
    const Vec2 e = b - a;
    const double denom = cross(d, e);
    const Vec2 ap = a - p;
    if (std::abs(denom) < kEps) {
        // parallel: only collinear overlap blocks the view
        if (std::abs(cross(ap, d)) > kEps * std::max(1.0, d.norm())) return false;
        const double dd = d.squaredNorm();
        const double t0 = ap.dot(d) / dd;
        const double t1 = (b - p).dot(d) / dd;
        return std::max(std::min(t0, t1), 0.0) < std::min(std::max(t0, t1), 1.0) - kEps;
    }
    const double t = cross(ap, e) / denom;
    const double u = cross(ap, d) / denom;
    return t > kEps && t < 1.0 - kEps && u >= -kEps && u <= 1.0 + kEps;
}

// Liang-Barsky clip of the open segment against an axis-aligned box.
bool crosses_rect(const Vec2& p, const Vec2& d, const Vec2& lo, const Vec2& hi) {
    double t0 = 0.0;
    double t1 = 1.0;
    for (int axis = 0; axis < 2; ++axis) {
        if (std::abs(d[axis]) < kEps) {
            if (p[axis] < lo[axis] || p[axis] > hi[axis]) return false;
            continue;
        }
        double ta = (lo[axis] - p[axis]) / d[axis];
        double tb = (hi[axis] - p[axis]) / d[axis];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return false;
    }
    // the shared interval must contain an interior point of the sightline
    return t1 > kEps && t0 < 1.0 - kEps && t1 - t0 > kEps;
}

}  // namespace

bool line_of_sight(const Vec2& from, const Vec2& to, std::span<const Obstacle> obstacles) {
    const Vec2 d = to - from;
    for (const auto& ob : obstacles) {
        const bool blocked = ob.shape == Obstacle::Shape::Rect ? crosses_rect(from, d, ob.a, ob.b)
                                                               : crosses_segment(from, d, ob.a, ob.b);
        if (blocked) return false;
    }
    return true;
}

bool in_field_of_view(const SensorModel& sensor, const Vec2& target) {
    const Vec2 rel = target - sensor.mount.position;
    const double r = rel.norm();
    if (r > sensor.params.range_m) return false;
    if (r == 0.0) return true;
    const double bearing = wrap_angle(std::atan2(rel.y(), rel.x()) - sensor.mount.heading);
    return std::abs(bearing) <= sensor.params.fov_half_angle;
}

// ---------------------------------------------------------------------------
// Sensing

Rng sensing_stream(std::uint64_t seed, AgentId agent, std::uint64_t frame) {
    return Rng(seed, agent.value, "sense", frame);
}

std::vector<Detection> sense(const SensorModel& sensor, double time,
                             std::span<const GroundTruthState> truth,
                             std::span<const Obstacle> obstacles, Rng& rng) {
    std::vector<Detection> out;
    const auto& prm = sensor.params;
    const double sigma = prm.sigma_m;
    const Mat2 R = sigma * sigma * Mat2::Identity();

    auto noisy = [&](const Vec2& p) {
        const double nx = rng.normal();
        const double ny = rng.normal();
        return Vec2(p.x() + sigma * nx, p.y() + sigma * ny);
    };

    if (prm.smart_device) {
        for (const auto& g : truth) {
            if (!prm.carrier || g.vru != *prm.carrier) continue;
            if (!rng.bernoulli(prm.p_detect)) continue;
            Detection d{sensor.agent, time, noisy(g.kin.position), R, g.extent_m, g.vru, std::nullopt};
            SelfReport rep{g.kind, g.primitive, g.gesture};
            if (rng.bernoulli(prm.confusion_rate)) {
                auto set = primitive_set(g.kind);
                const auto truth_idx = *primitive_index(g.kind, g.primitive);
                auto pick = static_cast<std::size_t>(rng.uniform() * static_cast<double>(set.size() - 1));
                pick = std::min(pick, set.size() - 2);
                if (pick >= truth_idx) ++pick;
                rep.primitive = set[pick];
            }
            d.self_report = rep;
            out.push_back(d);
        }
        return out;
    }

    for (const auto& g : truth) {
        if (!in_field_of_view(sensor, g.kin.position)) continue;
        if (!line_of_sight(sensor.mount.position, g.kin.position, obstacles)) continue;
        if (!rng.bernoulli(prm.p_detect)) continue;
        out.push_back({sensor.agent, time, noisy(g.kin.position), R, g.extent_m, g.vru, std::nullopt});
    }

    const int n_fp = rng.poisson(prm.false_positives);
    for (int i = 0; i < n_fp; ++i) {
        const double r = prm.range_m * std::sqrt(rng.uniform());
        const double a = sensor.mount.heading + rng.uniform(-prm.fov_half_angle, prm.fov_half_angle);
        const Vec2 p = sensor.mount.position + r * Vec2(std::cos(a), std::sin(a));
        out.push_back({sensor.agent, time, p, R, rng.uniform(0.2, 1.0), std::nullopt, std::nullopt});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Association

double mahalanobis2(const Vec2& residual, const Mat2& S) {
    return residual.dot(S.ldlt().solve(residual));
}

Association associate(std::span<const TrackEstimate> tracks, std::span<const Detection> detections,
                      double gate) {
    struct Candidate {
        double d2;
        std::size_t track;
        std::size_t det;
    };
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < tracks.size(); ++i) {
        for (std::size_t j = 0; j < detections.size(); ++j) {
            const Mat2 S = tracks[i].position_cov() + detections[j].covariance;
            const double d2 = mahalanobis2(detections[j].position - tracks[i].position(), S);
            if (d2 <= gate) cands.push_back({d2, i, j});
        }
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.d2 != b.d2) return a.d2 < b.d2;
        if (a.track != b.track) return a.track < b.track;
        return a.det < b.det;
    });

    std::vector<bool> track_used(tracks.size(), false);
    std::vector<bool> det_used(detections.size(), false);
    Association out;
    for (const auto& c : cands) {
        if (track_used[c.track] || det_used[c.det]) continue;
        track_used[c.track] = det_used[c.det] = true;
        out.pairs.emplace_back(c.track, c.det);
    }
    std::sort(out.pairs.begin(), out.pairs.end());
    for (std::size_t i = 0; i < tracks.size(); ++i) {
        if (!track_used[i]) out.unmatched_tracks.push_back(i);
    }
    for (std::size_t j = 0; j < detections.size(); ++j) {
        if (!det_used[j]) out.unmatched_detections.push_back(j);
    }
    return out;
}

// ---------------------------------------------------------------------------
// IMM

namespace {

Mat6 transition(ModelIndex m, double dt) {
    Mat6 F = Mat6::Identity();
    for (int i = 0; i < 2; ++i) {
        F(i, 2 + i) = dt;
        if (m == kCA) {
            F(i, 4 + i) = 0.5 * dt * dt;
            F(2 + i, 4 + i) = dt;
        } else {
            F(4 + i, 4 + i) = 0.0;
        }
    }
    return F;
}

Mat6 process_noise(ModelIndex m, double dt, const ImmParams& prm) {
    Mat6 Q = Mat6::Zero();
    const double dt2 = dt * dt;
    const double dt3 = dt2 * dt;
    for (int i = 0; i < 2; ++i) {
        const int p = i, v = 2 + i, a = 4 + i;
        if (m == kCV) {
            const double q = prm.q_cv;
            Q(p, p) = q * dt3 / 3.0;
            Q(p, v) = Q(v, p) = q * dt2 / 2.0;
            Q(v, v) = q * dt;
        } else {
            const double q = prm.q_ca;
            const double dt4 = dt3 * dt;
            const double dt5 = dt4 * dt;
            Q(p, p) = q * dt5 / 20.0;
            Q(p, v) = Q(v, p) = q * dt4 / 8.0;
            Q(p, a) = Q(a, p) = q * dt3 / 6.0;
            Q(v, v) = q * dt3 / 3.0;
            Q(v, a) = Q(a, v) = q * dt2 / 2.0;
            Q(a, a) = q * dt;
        }
    }
    return Q;
}

void combine(TrackEstimate& t) {
    Vec4 mean = Vec4::Zero();
    for (std::size_t j = 0; j < 2; ++j) mean += t.model_prob[j] * t.models[j].x.head<4>();
    Mat4 cov = Mat4::Zero();
    for (std::size_t j = 0; j < 2; ++j) {
        const Vec4 d = t.models[j].x.head<4>() - mean;
        cov += t.model_prob[j] * (t.models[j].P.topLeftCorner<4, 4>() + d * d.transpose());
    }
    t.mean = mean;
    t.cov = symmetrized(cov);
    require_covariance(t.cov, "imm output covariance");
    const double psum = t.model_prob[0] + t.model_prob[1];
    if (std::abs(psum - 1.0) > 1e-9) throw InternalConsistencyError("imm model probabilities do not sum to 1");
}

void record_hit(TrackEstimate& t, const Detection& d) {
    ++t.hits;
    t.misses = 0;
    ++t.frames;
    t.hit_history = (t.hit_history << 1) | 1u;
    t.last_update = d.time;
    t.extent_m = 0.8 * t.extent_m + 0.2 * d.extent_m;
}

void record_miss(TrackEstimate& t) {
    ++t.misses;
    ++t.frames;
    t.hit_history <<= 1;
}

}  // namespace

TrackEstimate init_track(const Detection& d, std::uint32_t id, const ImmParams& params) {
    TrackEstimate t;
    t.id = id;
    t.owner = d.sensor;
    t.time = d.time;
    for (std::size_t j = 0; j < 2; ++j) {
        auto& m = t.models[j];
        m.x = Vec6::Zero();
        m.x.head<2>() = d.position;
        m.P = Mat6::Zero();
        m.P.topLeftCorner<2, 2>() = d.covariance;
        m.P(2, 2) = m.P(3, 3) = params.init_velocity_var;
        if (j == kCA) m.P(4, 4) = m.P(5, 5) = params.init_accel_var;
    }
    t.model_prob = params.init_prob;
    t.hits = 1;
    t.frames = 1;
    t.hit_history = 1;
    t.last_update = d.time;
    t.extent_m = d.extent_m;
    combine(t);
    return t;
}

TrackEstimate imm_predict(const TrackEstimate& track, double dt, const ImmParams& params) {
    if (!(dt >= 0.0)) throw MalformedInput("imm_predict: dt must be >= 0");
    TrackEstimate t = track;
    const auto& mu = track.model_prob;
    const auto& pi = params.mixing;

    std::array<double, 2> c{};
    for (std::size_t j = 0; j < 2; ++j) {
        c[j] = pi(0, static_cast<Eigen::Index>(j)) * mu[0] + pi(1, static_cast<Eigen::Index>(j)) * mu[1];
    }

    for (std::size_t j = 0; j < 2; ++j) {
        ModelState mixed;
        if (c[j] < 1e-300) {
            mixed = track.models[j];
        } else {
            std::array<double, 2> w{};
            for (std::size_t i = 0; i < 2; ++i) {
                w[i] = pi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * mu[i] / c[j];
            }
            mixed.x = w[0] * track.models[0].x + w[1] * track.models[1].x;
            mixed.P = Mat6::Zero();
            for (std::size_t i = 0; i < 2; ++i) {
                const Vec6 d = track.models[i].x - mixed.x;
                mixed.P += w[i] * (track.models[i].P + d * d.transpose());
            }
        }
        const auto m = static_cast<ModelIndex>(j);
        const Mat6 F = transition(m, dt);
        t.models[j].x = F * mixed.x;
        t.models[j].P = symmetrized(F * mixed.P * F.transpose() + process_noise(m, dt, params));
    }
    const double csum = c[0] + c[1];
    t.model_prob = {c[0] / csum, c[1] / csum};
    t.time = track.time + dt;
    combine(t);
    return t;
}

TrackEstimate imm_update(const TrackEstimate& predicted, const Detection& d) {
    TrackEstimate t = predicted;
    Eigen::Matrix<double, 2, 6> H = Eigen::Matrix<double, 2, 6>::Zero();
    H(0, 0) = H(1, 1) = 1.0;

    std::array<double, 2> loglik{};
    for (std::size_t j = 0; j < 2; ++j) {
        auto& m = t.models[j];
        const Vec2 nu = d.position - H * m.x;
        const Mat2 S = symmetrized(H * m.P * H.transpose() + d.covariance);
        const Eigen::LDLT<Mat2> ldlt(S);
        const Eigen::Matrix<double, 6, 2> K = m.P * H.transpose() * ldlt.solve(Mat2::Identity());
        m.x += K * nu;
        const Mat6 IKH = Mat6::Identity() - K * H;
        m.P = symmetrized(IKH * m.P * IKH.transpose() + K * d.covariance * K.transpose());
        loglik[j] = -0.5 * nu.dot(ldlt.solve(nu)) - 0.5 * std::log(S.determinant()) -
                    std::log(2.0 * std::numbers::pi);
    }
    const double lmax = std::max(loglik[0], loglik[1]);
    std::array<double, 2> w{};
    for (std::size_t j = 0; j < 2; ++j) w[j] = predicted.model_prob[j] * std::exp(loglik[j] - lmax);
    const double wsum = w[0] + w[1];
    if (wsum > 0.0 && std::isfinite(wsum)) t.model_prob = {w[0] / wsum, w[1] / wsum};
    t.time = d.time;
    combine(t);
    record_hit(t, d);
    return t;
}

TrackEstimate imm_step(const TrackEstimate& track, const std::optional<Detection>& d, double dt,
                       const ImmParams& params) {
    auto t = imm_predict(track, dt, params);
    if (d) return imm_update(t, *d);
    record_miss(t);
    return t;
}

Mat4 cv_process_noise(double dt, double q) {
    Mat4 Q = Mat4::Zero();
    for (int i = 0; i < 2; ++i) {
        Q(i, i) = q * dt * dt * dt / 3.0;
        Q(i, 2 + i) = Q(2 + i, i) = q * dt * dt / 2.0;
        Q(2 + i, 2 + i) = q * dt;
    }
    return Q;
}

TrackEstimate propagate_cv(const TrackEstimate& track, double dt, double q) {
    Mat4 F = Mat4::Identity();
    F(0, 2) = F(1, 3) = dt;
    TrackEstimate t = track;
    t.mean = F * track.mean;
    t.cov = symmetrized(F * track.cov * F.transpose() + cv_process_noise(dt, q));
    t.time = track.time + dt;
    return t;
}

// ---------------------------------------------------------------------------
// Track management

std::vector<TrackEstimate> track_manage(std::vector<TrackEstimate> tracks,
                                        std::span<const Detection> unmatched, double time,
                                        const TrackerParams& params, const ImmParams& imm,
                                        std::uint32_t& next_id) {
    const std::uint32_t window_mask = (1u << params.confirm_window) - 1u;
    std::vector<TrackEstimate> kept;
    kept.reserve(tracks.size() + unmatched.size());
    for (auto& t : tracks) {
        if (!t.confirmed && std::popcount(t.hit_history & window_mask) >= params.confirm_hits) {
            t.confirmed = true;
        }
        if (!t.confirmed && t.frames >= params.confirm_window) continue;
        if (time - t.last_update > params.coast_s) continue;
        if (t.position_cov().trace() > params.max_position_trace) continue;
        kept.push_back(std::move(t));
    }
    for (const auto& d : unmatched) kept.push_back(init_track(d, next_id++, imm));
    return kept;
}

LocalTracker::LocalTracker(AgentId owner, ImmParams imm, TrackerParams params)
    : owner_(owner), imm_(std::move(imm)), params_(params) {}

void LocalTracker::step(std::span<const Detection> detections, double time) {
    std::vector<TrackEstimate> predicted;
    predicted.reserve(tracks_.size());
    for (const auto& t : tracks_) predicted.push_back(imm_predict(t, std::max(0.0, time - t.time), imm_));

    const auto assoc = associate(predicted, detections, params_.gate);
    for (const auto& [ti, di] : assoc.pairs) predicted[ti] = imm_update(predicted[ti], detections[di]);
    for (auto ti : assoc.unmatched_tracks) {
        auto& t = predicted[ti];
        ++t.misses;
        ++t.frames;
        t.hit_history <<= 1;
    }
    std::vector<Detection> fresh;
    for (auto di : assoc.unmatched_detections) fresh.push_back(detections[di]);
    tracks_ = track_manage(std::move(predicted), fresh, time, params_, imm_, next_id_);
}

}  // namespace vruco
