#include "vruco/intention.hpp"

#include "vruco/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vruco {

// ---------------------------------------------------------------------------
// Features

std::optional<FeatureVector> extract_features(const ApproxWindow& x, const ApproxWindow& y,
                                              const ApproxWindow* speed, double t, bool gesture) {
    if (!x.well_posed() || !y.well_posed()) return std::nullopt;
    FeatureVector f;
    f.gesture = gesture;
    const Vec2 v(x.evaluate(t, 1).value, y.evaluate(t, 1).value);
    Vec2 a = Vec2::Zero();
    if (x.params().degree >= 2 && y.params().degree >= 2) {
        a = Vec2(x.evaluate(t, 2).value, y.evaluate(t, 2).value);
    }
    f.speed = v.norm();
    f.tangential_accel = f.speed > 1e-3 ? v.dot(a) / f.speed : a.norm();
    f.heading_rate = f.speed > 0.1 ? (v.x() * a.y() - v.y() * a.x()) / (f.speed * f.speed) : 0.0;
    if (speed && speed->well_posed() && speed->params().degree >= 1) {
        f.slope = speed->evaluate(t, 1).value;
    } else {
        f.slope = f.tangential_accel;
    }
    return f;
}

// ---------------------------------------------------------------------------
// Classification

namespace {

double clamp_margin(double m) { return std::clamp(m, -2.0, 1.0); }

double fuzzy_and(std::initializer_list<double> ms) {
    double out = 1.0;
    for (double m : ms) out = std::min(out, clamp_margin(m));
    return out;
}

}  // namespace

std::vector<double> movement_margins(const FeatureVector& f, VruKind kind, const ClassifierParams& prm) {
    const double v_move = prm.v_move_fraction * default_vmax(kind);
    const double sp = f.speed;
    const double a = f.tangential_accel;
    const double w = std::abs(f.heading_rate);
    const double cruise_speed = 2.0 * (sp - prm.v_wait) / (v_move - prm.v_wait) - 1.0;
    const double below_cruise = 1.0 - sp / v_move;

    std::vector<double> out;
    for (auto prim : primitive_set(kind)) {
        double m = -2.0;
        switch (prim) {
            case MovementPrimitive::Waiting:
                m = fuzzy_and({1.0 - sp / prm.v_wait, 1.0 - std::abs(a) / prm.a_on});
                break;
            case MovementPrimitive::Starting:
                m = fuzzy_and({(a - prm.a_on) / prm.a_ref, below_cruise});
                if (f.gesture && sp < v_move) m = std::max(m, 0.5);
                break;
            case MovementPrimitive::Stopping:
                m = fuzzy_and({(-a - prm.a_on) / prm.a_ref, below_cruise});
                break;
            case MovementPrimitive::Walking:
            case MovementPrimitive::Pedaling:
                m = fuzzy_and({cruise_speed, 1.0 - std::abs(a) / prm.a_on, 1.0 - w / prm.omega_min});
                break;
            case MovementPrimitive::Acceleration:
                m = fuzzy_and({(f.slope - prm.a_on) / prm.a_ref, cruise_speed});
                break;
            case MovementPrimitive::Deceleration:
                m = fuzzy_and({(-f.slope - prm.a_on) / prm.a_ref, cruise_speed});
                break;
            case MovementPrimitive::Turning:
                m = fuzzy_and({w / prm.omega_min - 1.0, (sp - prm.v_wait) / prm.v_wait});
                break;
        }
        out.push_back(m);
    }
    return out;
}

SecondOrderDistribution classify_movement(const std::optional<FeatureVector>& f, VruKind kind, double fill,
                                          const ClassifierParams& prm) {
    if (!f) return SecondOrderDistribution::uniform(kind, prm.s_min);
    const auto margins = movement_margins(*f, kind, prm);
    const double mmax = *std::max_element(margins.begin(), margins.end());
    std::vector<double> e;
    e.reserve(margins.size());
    for (double m : margins) e.push_back(std::exp((m - mmax) / prm.temperature));
    const double s = std::max(prm.s_min, prm.s_max * std::clamp(fill, 0.0, 1.0));
    return SecondOrderDistribution(kind, normalize_distribution(e), s);
}

SecondOrderDistribution self_report_distribution(VruKind kind, MovementPrimitive reported, double confusion_rate,
                                                 double evidence) {
    const auto set = primitive_set(kind);
    const auto idx = primitive_index(kind, reported);
    if (!idx) return SecondOrderDistribution::uniform(kind, evidence);
    const double rest = std::clamp(confusion_rate, 0.0, 1.0) / static_cast<double>(set.size() - 1);
    std::vector<double> p(set.size(), rest);
    p[*idx] = 1.0 - std::clamp(confusion_rate, 0.0, 1.0);
    return SecondOrderDistribution(kind, normalize_distribution(p), evidence);
}

// ---------------------------------------------------------------------------
// Transitions

TransitionDetector::TransitionDetector(TransitionParams params, std::uint32_t track)
    : params_(params), track_(track) {}

std::optional<TransitionEvent> TransitionDetector::push(double time, const SecondOrderDistribution& d) {
    const auto prim = d.argmax();
    if (has_current_ && prim == current_) {
        candidate_.reset();
        return std::nullopt;
    }
    if (!candidate_ || candidate_->primitive != prim) candidate_ = Candidate{prim, time, 0.0, 0};
    candidate_->sum += d.prob(prim);
    ++candidate_->count;

    const double mean = candidate_->sum / candidate_->count;
    if (time - candidate_->start < params_.dwell_s - 1e-9 || mean < 0.5 + params_.hysteresis) {
        return std::nullopt;
    }
    const bool had = has_current_;
    const MovementPrimitive previous = current_;
    current_ = prim;
    has_current_ = true;
    candidate_.reset();
    if (!had) return std::nullopt;
    return TransitionEvent{track_, time, previous, prim, mean};
}

std::vector<TransitionEvent> detect_transitions(std::span<const TimedDistribution> history,
                                                TransitionParams params) {
    TransitionDetector det(params);
    std::vector<TransitionEvent> out;
    for (const auto& h : history) {
        if (auto ev = det.push(h.time, h.dist)) out.push_back(*ev);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forecast trajectories

std::string_view to_string(Producer p) {
    switch (p) {
        case Producer::Analytical: return "analytical";
        case Producer::Extrapolation: return "extrapolation";
        case Producer::Ensemble: return "ensemble";
        case Producer::Fused: return "fused";
    }
    return "?";
}

ForecastTrajectory::ForecastTrajectory(double origin, std::vector<double> horizons, std::vector<Vec2> means,
                                       std::vector<Mat2> covs, Producer producer)
    : origin_(origin),
      horizons_(std::move(horizons)),
      means_(std::move(means)),
      covs_(std::move(covs)),
      producer_(producer) {
    if (horizons_.empty()) throw MalformedInput("forecast grid is empty");
    if (means_.size() != horizons_.size() || covs_.size() != horizons_.size()) {
        throw MalformedInput("forecast grid, means and covariances differ in length");
    }
    for (std::size_t k = 0; k < horizons_.size(); ++k) {
        if (!std::isfinite(horizons_[k]) || horizons_[k] < 0.0) throw MalformedInput("invalid forecast horizon");
        if (k > 0 && horizons_[k] <= horizons_[k - 1]) throw MalformedInput("forecast grid not increasing");
        if (!means_[k].allFinite()) throw InternalConsistencyError("forecast mean is not finite");
        require_covariance(covs_[k], "forecast covariance");
        if (k > 0) {
            const double prev = covs_[k - 1].trace();
            if (covs_[k].trace() < prev - 1e-12 * std::max(1.0, prev)) {
                throw InternalConsistencyError("forecast covariance trace decreases with horizon");
            }
        }
    }
}

ForecastTrajectory ForecastTrajectory::retagged(Producer p) const {
    ForecastTrajectory f = *this;
    f.producer_ = p;
    return f;
}

std::size_t ForecastTrajectory::nearest(double h) const {
    std::size_t best = 0;
    for (std::size_t k = 1; k < horizons_.size(); ++k) {
        if (std::abs(horizons_[k] - h) < std::abs(horizons_[best] - h)) best = k;
    }
    return best;
}

std::vector<double> default_horizons() {
    std::vector<double> h;
    for (int k = 1; k <= 25; ++k) h.push_back(k / 10.0);
    return h;
}

void enforce_monotone_trace(std::vector<Mat2>& covs) {
    for (std::size_t k = 1; k < covs.size(); ++k) {
        const double deficit = covs[k - 1].trace() - covs[k].trace();
        if (deficit <= 0.0) continue;
        covs[k] += 0.5 * deficit * Mat2::Identity();
        // rounding can leave the sum one ulp short
        while (covs[k].trace() < covs[k - 1].trace()) {
            const double d = covs[k](0, 0);
            covs[k](0, 0) = std::nextafter(d, std::numeric_limits<double>::infinity());
        }
    }
}

namespace {

// Distance and speed after time h of a first-order lag from v0 toward vt.
struct LagState {
    double distance;
    double speed;
};

LagState lag(double v0, double vt, double tau, double h) {
    const double e = std::exp(-h / tau);
    return {vt * h + (v0 - vt) * tau * (1.0 - e), vt + (v0 - vt) * e};
}

double stop_distance(double v0, double tau, double h) {
    if (v0 <= kStopSpeed) return 0.0;
    const double t_stop = tau * std::log(v0 / kStopSpeed);
    return lag(v0, 0.0, tau, std::min(h, t_stop)).distance;
}

Vec2 arc(const Vec2& p, double heading, double speed, double omega, double h) {
    if (std::abs(omega) < 1e-12) return p + speed * h * Vec2(std::cos(heading), std::sin(heading));
    const double r = speed / omega;
    return p + r * Vec2(std::sin(heading + omega * h) - std::sin(heading),
                        -std::cos(heading + omega * h) + std::cos(heading));
}

}  // namespace

ForecastTrajectory forecast_analytical(const TrackEstimate& track, const SecondOrderDistribution& d,
                                       const ForecastParams& prm) {
    const VruKind kind = d.kind();
    const auto set = primitive_set(kind);
    const Vec2 p0 = track.position();
    const Vec2 v = track.velocity();
    const double speed = v.norm();
    const double heading = std::atan2(v.y(), v.x());
    const Vec2 dir(std::cos(heading), std::sin(heading));
    const bool heading_known = speed >= prm.min_heading_speed;
    const double vmax = default_vmax(kind);
    const double tau = default_tau(kind);

    // triggered primitives and their renormalized weights
    std::vector<std::size_t> active;
    std::vector<double> w;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (d.p()[i] >= prm.trigger) {
            active.push_back(i);
            w.push_back(d.p()[i]);
        }
    }
    if (active.empty()) {
        const auto am = static_cast<std::size_t>(std::distance(
            d.p().begin(), std::max_element(d.p().begin(), d.p().end())));
        active.push_back(am);
        w.push_back(1.0);
    }
    w = normalize_distribution(w);

    std::vector<Vec2> means;
    std::vector<Mat2> covs;
    for (double h : prm.horizons) {
        std::vector<Vec2> pts;
        std::vector<double> pw;
        double extra_var = 0.0;  // isotropic, per axis
        for (std::size_t k = 0; k < active.size(); ++k) {
            const auto prim = set[active[k]];
            const double wk = w[k];
            switch (prim) {
                case MovementPrimitive::Waiting:
                    pts.push_back(p0);
                    pw.push_back(wk);
                    break;
                case MovementPrimitive::Walking:
                case MovementPrimitive::Pedaling:
                    pts.push_back(p0 + v * h);
                    pw.push_back(wk);
                    break;
                case MovementPrimitive::Starting:
                    if (heading_known) {
                        pts.push_back(p0 + lag(speed, std::max(vmax, speed), tau, h).distance * dir);
                    } else {
                        const double s = lag(0.0, vmax, tau, h).distance;
                        pts.push_back(p0);
                        extra_var += wk * s * s / 2.0;
                    }
                    pw.push_back(wk);
                    break;
                case MovementPrimitive::Stopping:
                    pts.push_back(p0 + stop_distance(speed, tau, h) * dir);
                    pw.push_back(wk);
                    break;
                case MovementPrimitive::Acceleration:
                    pts.push_back(p0 + lag(speed, speed + prm.speed_delta, tau, h).distance * dir);
                    pw.push_back(wk);
                    break;
                case MovementPrimitive::Deceleration:
                    pts.push_back(p0 + lag(speed, std::max(speed - prm.speed_delta, 0.0), tau, h).distance * dir);
                    pw.push_back(wk);
                    break;
                case MovementPrimitive::Turning:
                    pts.push_back(arc(p0, heading, speed, prm.turn_rate, h));
                    pw.push_back(0.5 * wk);
                    pts.push_back(arc(p0, heading, speed, -prm.turn_rate, h));
                    pw.push_back(0.5 * wk);
                    break;
            }
        }
        Vec2 mean = Vec2::Zero();
        for (std::size_t i = 0; i < pts.size(); ++i) mean += pw[i] * pts[i];
        Mat2 spread = Mat2::Zero();
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const Vec2 dd = pts[i] - mean;
            spread += pw[i] * dd * dd.transpose();
        }
        const Mat2 base = propagate_cv(track, h, prm.q).position_cov();
        means.push_back(mean);
        covs.push_back(symmetrized(Mat2(base + spread + extra_var * Mat2::Identity())));
    }
    enforce_monotone_trace(covs);
    return {track.time, prm.horizons, std::move(means), std::move(covs), Producer::Analytical};
}

ForecastTrajectory forecast_extrapolate(const ApproxWindow& x, const ApproxWindow& y, double origin,
                                        std::span<const double> horizons) {
    const auto fx = x.fit();
    const auto fy = y.fit();
    const double T = x.params().span_s;
    const double vx = std::max(fx.residual_rms * fx.residual_rms, 1e-4);
    const double vy = std::max(fy.residual_rms * fy.residual_rms, 1e-4);
    std::vector<Vec2> means;
    std::vector<Mat2> covs;
    for (double h : horizons) {
        means.emplace_back(fx.evaluate(origin + h), fy.evaluate(origin + h));
        const double g = 1.0 + (h / T) * (h / T);
        Mat2 c = Mat2::Zero();
        c(0, 0) = vx * g;
        c(1, 1) = vy * g;
        covs.push_back(c);
    }
    return {origin, {horizons.begin(), horizons.end()}, std::move(means), std::move(covs), Producer::Extrapolation};
}

ForecastTrajectory ensemble_forecast(std::span<const ForecastTrajectory> members, std::span<const double> weights,
                                     Producer producer) {
    if (members.empty()) throw MalformedInput("ensemble needs at least one member");
    if (weights.size() != members.size()) throw MalformedInput("one weight per ensemble member required");
    const auto& grid = members.front().horizons();
    for (const auto& m : members) {
        if (m.horizons() != grid) throw MalformedInput("ensemble members do not share a horizon grid");
    }
    const auto w = normalize_distribution(weights);

    std::vector<Vec2> means;
    std::vector<Mat2> covs;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        Vec2 mean = Vec2::Zero();
        for (std::size_t i = 0; i < members.size(); ++i) mean += w[i] * members[i].means()[k];
        Mat2 cov = Mat2::Zero();
        for (std::size_t i = 0; i < members.size(); ++i) {
            if (w[i] == 0.0) continue;
            const Vec2 d = members[i].means()[k] - mean;
            cov += w[i] * (members[i].covs()[k] + d * d.transpose());
        }
        means.push_back(mean);
        covs.push_back(symmetrized(cov));
    }
    enforce_monotone_trace(covs);
    return {members.front().origin(), grid, std::move(means), std::move(covs), producer};
}

double confidence_weight(const ForecastTrajectory& f) {
    return 1.0 / f.covs()[f.nearest(1.0)].trace();
}

ForecastTrajectory resample(const ForecastTrajectory& f, double origin) {
    const auto& hs = f.horizons();
    const auto& ms = f.means();
    const auto& cs = f.covs();
    const std::size_t n = hs.size();
    std::vector<Vec2> means;
    std::vector<Mat2> covs;
    for (double h : hs) {
        const double r = origin + h - f.origin();
        if (n == 1 || r <= hs.front()) {
            means.push_back(ms.front());
            covs.push_back(cs.front());
            continue;
        }
        if (r >= hs.back()) {
            const double dh = hs[n - 1] - hs[n - 2];
            const double ex = r - hs[n - 1];
            means.push_back(ms[n - 1] + (ms[n - 1] - ms[n - 2]) * (ex / dh));
            const double growth = std::max(0.0, cs[n - 1].trace() - cs[n - 2].trace()) / dh;
            covs.push_back(cs[n - 1] + 0.5 * growth * ex * Mat2::Identity());
            continue;
        }
        const auto it = std::upper_bound(hs.begin(), hs.end(), r);
        const auto k = static_cast<std::size_t>(std::distance(hs.begin(), it));
        const double a = (r - hs[k - 1]) / (hs[k] - hs[k - 1]);
        means.push_back((1.0 - a) * ms[k - 1] + a * ms[k]);
        covs.push_back((1.0 - a) * cs[k - 1] + a * cs[k]);
    }
    enforce_monotone_trace(covs);
    return {origin, hs, std::move(means), std::move(covs), f.producer()};
}

// ---------------------------------------------------------------------------
// Per-track pipeline

IntentionState::IntentionState(std::uint32_t track, IntentionParams params)
    : track_(track),
      params_(std::move(params)),
      x_(params_.window),
      y_(params_.window),
      speed_(params_.window),
      detector_(params_.transition, track) {}

void IntentionState::add_sample(double time, const Vec2& position, double speed, double weight, AgentId source) {
    x_.insert({time, position.x(), weight, source});
    y_.insert({time, position.y(), weight, source});
    speed_.insert({time, speed, weight, source});
}

SecondOrderDistribution IntentionState::classify(double t, VruKind kind, bool gesture,
                                                 std::optional<FeatureVector>* features) const {
    const auto f = extract_features(x_, y_, &speed_, t, gesture);
    if (features) *features = f;
    return classify_movement(f, kind, std::min(x_.fill(), y_.fill()), params_.classifier);
}

std::optional<TransitionEvent> IntentionState::observe(double t, const SecondOrderDistribution& d,
                                                       bool informative) {
    if (!informative) return std::nullopt;
    return detector_.push(t, d);
}

ForecastTrajectory IntentionState::forecast(const TrackEstimate& track, const SecondOrderDistribution& d,
                                            double t) const {
    auto analytical = forecast_analytical(track, d, params_.forecast);
    if (!x_.well_posed() || !y_.well_posed()) return analytical;
    // align the analytical member with the window origin
    if (std::abs(analytical.origin() - t) > 1e-12) analytical = resample(analytical, t);
    const auto extra = forecast_extrapolate(x_, y_, t, params_.forecast.horizons);
    const std::vector<ForecastTrajectory> members{analytical, extra};
    const std::vector<double> weights{confidence_weight(analytical), confidence_weight(extra)};
    return ensemble_forecast(members, weights);
}

IntentionOutput IntentionState::step(const TrackEstimate& track, double t, bool gesture) {
    std::optional<FeatureVector> f;
    auto d = classify(t, track.kind(), gesture, &f);
    auto ev = observe(t, d, f.has_value());
    auto fc = forecast(track, d, t);
    return {f, std::move(d), ev, std::move(fc)};
}

}  // namespace vruco
