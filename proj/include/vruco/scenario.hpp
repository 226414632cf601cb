// Deterministic ground-truth worlds.
//
// VRU motion is a scripted list of movement phases. Every phase has a closed
// form for speed and position, so truth at any instant is evaluated directly
// rather than integrated tick by tick.
#pragma once

#include "vruco/core.hpp"
#include "vruco/params.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace vruco {

/// Schema or consistency violation in a scenario document. `path` points at
/// the offending field, e.g. "agents[2].sensor.sigma_m".
class ScenarioError : public Error {
public:
    ScenarioError(std::string path, const std::string& message)
        : Error(path + ": " + message), path_(std::move(path)) {}
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

struct Phase {
    MovementPrimitive primitive = MovementPrimitive::Waiting;
    double start_s = 0.0;
    std::optional<double> v_max;  // target speed
    double tau = 1.0;             // lag time constant
    double omega = 0.0;           // turn rate, turning phases only
    bool gesture = false;
};

/// Speed and heading of the VRU when a phase begins; filled in at build time.
struct PhaseEntry {
    Vec2 position = Vec2::Zero();
    double heading = 0.0;
    double speed = 0.0;
};

struct PhasePlan {
    std::vector<Phase> phases;
    std::vector<PhaseEntry> entries;  // one per phase
    double duration_s = 0.0;

    std::size_t phase_index_at(double t) const;
};

/// Stop threshold for the stopping form: below it the VRU is at rest.
inline constexpr double kStopSpeed = 0.05;

struct VruSpec {
    VruId id;
    VruKind kind = VruKind::Pedestrian;
    Vec2 position = Vec2::Zero();
    double heading = 0.0;
    double extent_m = 0.3;
    PhasePlan plan;
};

struct AgentSpec {
    AgentId id;
    AgentKind kind = AgentKind::Vehicle;
    Vec2 position = Vec2::Zero();
    double heading = 0.0;
    Vec2 velocity = Vec2::Zero();
    double join_s = 0.0;
    std::optional<double> leave_s;
    SensorParams sensor;
    LinkModel link;

    /// Membership: joined and not yet left.
    bool active_at(double t) const { return join_s <= t && (!leave_s || t < *leave_s); }
};

struct Obstacle {
    enum class Shape { Rect, Segment };
    Shape shape = Shape::Rect;
    Vec2 a = Vec2::Zero();  // rect min corner, or segment start
    Vec2 b = Vec2::Zero();  // rect max corner, or segment end
    std::string label;
};

struct ConflictSpec {
    Vec2 point = Vec2::Zero();
    std::optional<VruId> vru;
    double radius_m = 0.5;
    double corridor_m = 3.0;
    double alert_ttc_s = 4.0;
};

struct Scenario {
    std::string name;
    double duration_s = 0.0;
    double tick_hz = 25.0;
    std::vector<VruSpec> vrus;
    std::vector<AgentSpec> agents;
    std::vector<Obstacle> obstacles;
    std::optional<ConflictSpec> conflict;
    NetworkParams network;
    double warmup_s = 1.0;

    std::size_t tick_count() const;
    double tick_time(std::size_t k) const { return static_cast<double>(k) / tick_hz; }
    const VruSpec& vru(VruId id) const;
    const AgentSpec& agent(AgentId id) const;
    std::optional<AgentId> ego() const;
};

struct GroundTruthState {
    VruId vru;
    VruKind kind = VruKind::Pedestrian;
    double time = 0.0;
    KinematicState kin;
    MovementPrimitive primitive = MovementPrimitive::Waiting;
    bool gesture = false;
    double extent_m = 0.3;
};

struct Transition {
    double time;
    MovementPrimitive from;
    MovementPrimitive to;
};

/// Defaults applied where a phase omits its parameters.
double default_vmax(VruKind kind);
double default_tau(VruKind kind);

Scenario build_scenario(const nlohmann::json& doc);
Scenario load_scenario(const std::filesystem::path& file);

/// Builds a plan's cached entry states; validates continuity constraints.
/// `where` is used as the error path prefix.
void finalize_plan(PhasePlan& plan, const Vec2& position, double heading, double initial_speed,
                   const std::string& where);

double speed_profile(const PhasePlan& plan, double t);
KinematicState kinematics_at(const PhasePlan& plan, double t);
std::vector<GroundTruthState> ground_truth_at(const Scenario& scenario, double t);
std::vector<Transition> transition_times(const Scenario& scenario, VruId vru);

/// Agent pose (mount position and heading) at time t. Smart devices follow
/// their carrier.
struct Pose {
    Vec2 position = Vec2::Zero();
    double heading = 0.0;
};
Pose agent_pose(const Scenario& scenario, const AgentSpec& agent, double t);

/// Time at which the conflict VRU first comes within `radius_m` of the
/// conflict point, sampled on the tick grid.
std::optional<double> conflict_time(const Scenario& scenario);

}  // namespace vruco
