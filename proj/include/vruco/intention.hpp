// Intention detection: kinematic features, movement classification,
// transition detection and short-horizon trajectory forecasts.
#pragma once

#include "vruco/core.hpp"
#include "vruco/perception.hpp"
#include "vruco/poly_approx.hpp"

#include <optional>
#include <span>
#include <vector>

namespace vruco {

// ---------------------------------------------------------------------------
// Features

struct FeatureVector {
    double speed = 0.0;
    double tangential_accel = 0.0;
    double heading_rate = 0.0;
    double slope = 0.0;  // speed trend from the speed window
    bool gesture = false;
};

/// Features at time t from the position windows and, when available, a speed
/// window. Returns nullopt while either position window is underdetermined.
std::optional<FeatureVector> extract_features(const ApproxWindow& x, const ApproxWindow& y,
                                              const ApproxWindow* speed, double t, bool gesture = false);

// ---------------------------------------------------------------------------
// Classification

struct ClassifierParams {
    double v_wait = 0.3;
    double v_move_fraction = 0.8;  // of the kind's default cruise speed
    double omega_min = 0.15;
    double a_on = 0.4;
    double a_ref = 0.2;
    double temperature = 0.5;
    double s_max = 20.0;
    double s_min = 0.5;
};

/// Margin per primitive of the kind's set, each in [-2, 1].
std::vector<double> movement_margins(const FeatureVector& f, VruKind kind, const ClassifierParams& params = {});

/// Softmax over the margins; evidence scales with window fill. Without
/// features the output is uniform with minimal evidence.
SecondOrderDistribution classify_movement(const std::optional<FeatureVector>& f, VruKind kind, double fill,
                                          const ClassifierParams& params = {});

/// Distribution implied by a smart-device self-report.
SecondOrderDistribution self_report_distribution(VruKind kind, MovementPrimitive reported,
                                                 double confusion_rate, double evidence);

// ---------------------------------------------------------------------------
// Transitions

struct TransitionEvent {
    std::uint32_t track = 0;
    double time = 0.0;
    MovementPrimitive from = MovementPrimitive::Waiting;
    MovementPrimitive to = MovementPrimitive::Waiting;
    double confidence = 0.0;
};

struct TransitionParams {
    double dwell_s = 0.2;
    double hysteresis = 0.1;
};

/// Incremental detector. The first primitive that holds for the dwell time
/// becomes the reference without an event; later changes emit one event each.
class TransitionDetector {
public:
    explicit TransitionDetector(TransitionParams params = {}, std::uint32_t track = 0);

    std::optional<TransitionEvent> push(double time, const SecondOrderDistribution& d);
    std::optional<MovementPrimitive> current() const {
        return has_current_ ? std::optional<MovementPrimitive>(current_) : std::nullopt;
    }

private:
    struct Candidate {
        MovementPrimitive primitive;
        double start;
        double sum;
        int count;
    };
    TransitionParams params_;
    std::uint32_t track_;
    MovementPrimitive current_{};
    bool has_current_ = false;
    std::optional<Candidate> candidate_;
};

struct TimedDistribution {
    double time;
    SecondOrderDistribution dist;
};

std::vector<TransitionEvent> detect_transitions(std::span<const TimedDistribution> history,
                                                TransitionParams params = {});

// ---------------------------------------------------------------------------
// Forecasts

enum class Producer { Analytical, Extrapolation, Ensemble, Fused };
std::string_view to_string(Producer p);

/// Position forecast on a horizon grid relative to its origin time.
/// Construction checks the grid, every covariance, and that the covariance
/// trace never decreases with the horizon.
class ForecastTrajectory {
public:
    ForecastTrajectory(double origin, std::vector<double> horizons, std::vector<Vec2> means,
                       std::vector<Mat2> covs, Producer producer);

    double origin() const { return origin_; }
    const std::vector<double>& horizons() const { return horizons_; }
    const std::vector<Vec2>& means() const { return means_; }
    const std::vector<Mat2>& covs() const { return covs_; }
    Producer producer() const { return producer_; }
    std::size_t size() const { return horizons_.size(); }

    ForecastTrajectory retagged(Producer p) const;
    /// Index of the grid point closest to `h`.
    std::size_t nearest(double h) const;

private:
    double origin_;
    std::vector<double> horizons_;
    std::vector<Vec2> means_;
    std::vector<Mat2> covs_;
    Producer producer_;
};

/// 0.1, 0.2, ..., 2.5 s.
std::vector<double> default_horizons();

/// Adds isotropic variance wherever the trace would otherwise decrease.
void enforce_monotone_trace(std::vector<Mat2>& covs);

struct ForecastParams {
    std::vector<double> horizons = default_horizons();
    double trigger = 0.05;           // primitives below this probability are not simulated
    double min_heading_speed = 0.2;  // below it the heading is treated as unknown
    double turn_rate = 0.3;          // rad/s
    double speed_delta = 1.0;        // acceleration/deceleration target change, m/s
    double q = 0.5;                  // CV process noise for the track covariance
};

/// Mixture of closed-form per-primitive trajectories weighted by d.p.
ForecastTrajectory forecast_analytical(const TrackEstimate& track, const SecondOrderDistribution& d,
                                       const ForecastParams& params = {});

ForecastTrajectory forecast_extrapolate(const ApproxWindow& x, const ApproxWindow& y, double origin,
                                        std::span<const double> horizons);

/// Normalized-weight mixture of members sharing a grid.
ForecastTrajectory ensemble_forecast(std::span<const ForecastTrajectory> members, std::span<const double> weights,
                                     Producer producer = Producer::Ensemble);

/// 1 / trace of the covariance at the grid point closest to 1 s.
double confidence_weight(const ForecastTrajectory& f);

/// Re-expresses a forecast on its own grid relative to a later origin.
/// Points past the end of the source grid are extrapolated linearly.
ForecastTrajectory resample(const ForecastTrajectory& f, double origin);

// ---------------------------------------------------------------------------
// Per-track pipeline

struct IntentionParams {
    WindowParams window;
    ClassifierParams classifier;
    TransitionParams transition;
    ForecastParams forecast;
};

struct IntentionOutput {
    std::optional<FeatureVector> features;
    SecondOrderDistribution decision;
    std::optional<TransitionEvent> transition;
    ForecastTrajectory forecast;
};

/// Feature windows and transition state for one tracked VRU.
class IntentionState {
public:
    explicit IntentionState(std::uint32_t track = 0, IntentionParams params = {});

    /// Feeds one position (and derived speed) sample into the windows.
    void add_sample(double time, const Vec2& position, double speed, double weight, AgentId source);

    const ApproxWindow& x() const { return x_; }
    const ApproxWindow& y() const { return y_; }
    const ApproxWindow& speed() const { return speed_; }
    ApproxWindow& x() { return x_; }
    ApproxWindow& y() { return y_; }
    ApproxWindow& speed() { return speed_; }

    /// Decision from the windows at time t.
    SecondOrderDistribution classify(double t, VruKind kind, bool gesture = false,
                                     std::optional<FeatureVector>* features = nullptr) const;

    /// Transition detection on the given decision; uninformative decisions
    /// (no features) are skipped.
    std::optional<TransitionEvent> observe(double t, const SecondOrderDistribution& d, bool informative);

    /// Ensemble of the analytical forecast from `track` and `d` and, when the
    /// windows allow it, polynomial extrapolation.
    ForecastTrajectory forecast(const TrackEstimate& track, const SecondOrderDistribution& d, double t) const;

    /// classify + observe + forecast.
    IntentionOutput step(const TrackEstimate& track, double t, bool gesture = false);

    const IntentionParams& params() const { return params_; }

private:
    std::uint32_t track_;
    IntentionParams params_;
    ApproxWindow x_;
    ApproxWindow y_;
    ApproxWindow speed_;
    TransitionDetector detector_;
};

}  // namespace vruco
