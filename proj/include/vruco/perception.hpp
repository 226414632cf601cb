// Per-agent sensing and local tracking.
#pragma once

#include "vruco/core.hpp"
#include "vruco/params.hpp"
#include "vruco/rng.hpp"
#include "vruco/scenario.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace vruco {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Sensor parameters plus the mount pose at the sensing instant.
struct SensorModel {
    AgentId agent;
    SensorParams params;
    Pose mount;
};

/// What a smart device says about its carrier besides position.
struct SelfReport {
    VruKind kind = VruKind::Pedestrian;
    MovementPrimitive primitive = MovementPrimitive::Waiting;
    bool gesture = false;
};

struct Detection {
    AgentId sensor;
    double time = 0.0;
    Vec2 position = Vec2::Zero();
    Mat2 covariance = Mat2::Identity();
    double extent_m = 0.3;
    std::optional<VruId> true_id;  // debug only; never read by the algorithms
    std::optional<SelfReport> self_report;
};

/// One motion model's state inside the IMM. Layout [x, y, vx, vy, ax, ay];
/// the CV model keeps its acceleration at zero.
struct ModelState {
    Vec6 x = Vec6::Zero();
    Mat6 P = Mat6::Identity();
};

enum ModelIndex : std::size_t { kCV = 0, kCA = 1 };

struct TrackEstimate {
    std::uint32_t id = 0;
    AgentId owner;
    double time = 0.0;
    Vec4 mean = Vec4::Zero();  // [x, y, vx, vy]
    Mat4 cov = Mat4::Identity();
    std::array<double, 2> model_prob{0.5, 0.5};  // CV, CA
    std::array<ModelState, 2> models;

    int hits = 0;
    int misses = 0;  // consecutive
    int frames = 0;
    std::uint32_t hit_history = 0;  // bit 0 = latest frame
    double last_update = 0.0;
    bool confirmed = false;
    double extent_m = 0.3;

    Vec2 position() const { return mean.head<2>(); }
    Vec2 velocity() const { return mean.tail<2>(); }
    Mat2 position_cov() const { return cov.topLeftCorner<2, 2>(); }
    VruKind kind() const { return extent_m > 0.6 ? VruKind::Cyclist : VruKind::Pedestrian; }
};

struct ImmParams {
    double q_cv = 0.5;   // white-noise acceleration, m^2/s^3
    double q_ca = 1.0;   // white-noise jerk, m^2/s^5
    Eigen::Matrix2d mixing = (Eigen::Matrix2d() << 0.95, 0.05, 0.05, 0.95).finished();
    double init_velocity_var = 4.0;
    double init_accel_var = 1.0;
    std::array<double, 2> init_prob{0.5, 0.5};
};

struct TrackerParams {
    double gate = 9.21;          // chi^2, 2 dof, 99%
    int confirm_hits = 3;
    int confirm_window = 4;
    double coast_s = 1.5;
    double max_position_trace = 100.0;  // m^2
};

// ---------------------------------------------------------------------------
// Geometry

/// True when the open segment from -> to crosses no obstacle.
bool line_of_sight(const Vec2& from, const Vec2& to, std::span<const Obstacle> obstacles);

bool in_field_of_view(const SensorModel& sensor, const Vec2& target);

// ---------------------------------------------------------------------------
// Sensing

/// Rng stream for one sensing frame of one agent.
Rng sensing_stream(std::uint64_t seed, AgentId agent, std::uint64_t frame);

std::vector<Detection> sense(const SensorModel& sensor, double time,
                             std::span<const GroundTruthState> truth,
                             std::span<const Obstacle> obstacles, Rng& rng);

// ---------------------------------------------------------------------------
// Association

struct Association {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (track, detection)
    std::vector<std::size_t> unmatched_detections;
    std::vector<std::size_t> unmatched_tracks;
};

double mahalanobis2(const Vec2& residual, const Mat2& S);

/// Greedy nearest neighbour in Mahalanobis distance, gated. Tracks must
/// already be predicted to the detection time.
Association associate(std::span<const TrackEstimate> tracks, std::span<const Detection> detections,
                      double gate = 9.21);

// ---------------------------------------------------------------------------
// IMM filter

TrackEstimate init_track(const Detection& d, std::uint32_t id, const ImmParams& params);

/// Mixing and per-model prediction. Model probabilities become the
/// predicted (prior) ones.
TrackEstimate imm_predict(const TrackEstimate& track, double dt, const ImmParams& params);

/// Measurement update of an already predicted track.
TrackEstimate imm_update(const TrackEstimate& predicted, const Detection& d);

/// Predict, then update with `d` or record a miss.
TrackEstimate imm_step(const TrackEstimate& track, const std::optional<Detection>& d, double dt,
                       const ImmParams& params);

/// Plain constant-velocity propagation of the combined 4D estimate.
TrackEstimate propagate_cv(const TrackEstimate& track, double dt, double q);

/// Discretized white-noise process covariance for CV (4D) propagation.
Mat4 cv_process_noise(double dt, double q);

// ---------------------------------------------------------------------------
// Track management

/// Opens tentative tracks for unmatched detections, confirms M-of-N, drops
/// coasting or diverged tracks.
std::vector<TrackEstimate> track_manage(std::vector<TrackEstimate> tracks,
                                        std::span<const Detection> unmatched, double time,
                                        const TrackerParams& params, const ImmParams& imm,
                                        std::uint32_t& next_id);

/// Per-agent tracker: predict, associate, update, manage.
class LocalTracker {
public:
    LocalTracker(AgentId owner, ImmParams imm = {}, TrackerParams params = {});

    void step(std::span<const Detection> detections, double time);
    /// Advance tracks without detections (sensor had no frame this tick).
    const std::vector<TrackEstimate>& tracks() const { return tracks_; }
    AgentId owner() const { return owner_; }

private:
    AgentId owner_;
    ImmParams imm_;
    TrackerParams params_;
    std::vector<TrackEstimate> tracks_;
    std::uint32_t next_id_ = 1;
};

}  // namespace vruco
