// Ego-side cooperation layer: the fused VRU map plus feature-, decision- and
// forecast-level fusion of remote information.
#pragma once

#include "vruco/core.hpp"
#include "vruco/intention.hpp"
#include "vruco/perception.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

namespace vruco {

/// Per-source reliability by agent kind.
struct FusionWeights {
    double smart_device = 0.4;
    double infrastructure = 1.0;
    double vehicle = 0.8;
    double ego = 1.0;

    double reliability(AgentKind kind) const;
};

// ---------------------------------------------------------------------------
// Track fusion

struct CiResult {
    Vec4 mean;
    Mat4 cov;
    double omega;
};

/// Covariance intersection of two aligned estimates. omega minimizes the
/// fused trace (golden section, endpoints included).
CiResult covariance_intersection(const Vec4& a, const Mat4& Pa, const Vec4& b, const Mat4& Pb,
                                 double tolerance = 1e-4);

TrackEstimate fuse_tracks_ci(const TrackEstimate& a, const TrackEstimate& b);

/// Independent-information product (for comparison; overconfident when the
/// inputs share process noise).
TrackEstimate fuse_tracks_naive(const TrackEstimate& a, const TrackEstimate& b);

// ---------------------------------------------------------------------------
// Decision and forecast fusion

struct WeightedDecision {
    SecondOrderDistribution dist;
    double reliability = 1.0;
};

enum class DecisionMode { Pooling, Competitive };

/// Pooling adds reliability-weighted evidence vectors; competitive mode keeps
/// the input with the highest s * max(p).
SecondOrderDistribution fuse_decisions(std::span<const WeightedDecision> inputs,
                                       DecisionMode mode = DecisionMode::Pooling);

struct WeightedForecast {
    ForecastTrajectory forecast;
    double reliability = 1.0;
};

/// Ensemble with weights reliability / trace(cov at 1 s), tagged fused.
ForecastTrajectory fuse_forecasts(std::span<const WeightedForecast> members);

// ---------------------------------------------------------------------------
// Feature fusion

struct FeatureSample {
    double time = 0.0;
    Vec2 position = Vec2::Zero();
    double speed = 0.0;
};

struct FeatureFusionCount {
    std::size_t inserted = 0;
    std::size_t stale = 0;
};

/// Inserts remote samples into the windows with weight = reliability.
FeatureFusionCount fuse_features(IntentionState& windows, std::span<const FeatureSample> samples,
                                 double reliability, AgentId source);

// ---------------------------------------------------------------------------
// VRU map

struct MapParams {
    double gate = 9.21;
    double q = 1.0;               // CV process noise for aligning estimates
    double stale_s = 2.0;
    double confirm_window_s = 1.0;
    int confirm_count = 2;
    double max_input_age_s = 1.0;  // for remote decisions and forecasts
    double self_report_evidence = 10.0;
    double self_report_confusion = 0.1;
    bool naive_tracks = false;
    bool type_a = true;
    bool type_b = true;
    DecisionMode decision_mode = DecisionMode::Pooling;
    FusionWeights weights;
    IntentionParams intention;
};

struct TrackInput {
    TrackEstimate track;
    AgentId source;
    AgentKind kind = AgentKind::Vehicle;
};

struct TimedDecision {
    double time;
    SecondOrderDistribution dist;
    AgentKind kind;
};

struct TimedSelfReport {
    double time;
    SelfReport report;
};

struct TimedForecast {
    ForecastTrajectory forecast;
    AgentKind kind;
};

struct MapEntry {
    std::uint32_t id = 0;
    TrackEstimate fused;
    std::set<AgentId> contributors;
    std::map<AgentId, double> last_seen;  // latest contribution time per agent
    int confirmation = 0;                 // distinct agents within the confirmation window
    bool confirmed = false;
    double last_contribution = 0.0;
    std::vector<TrackEstimate> ego_tracks;  // ego-local tracks routed here in the latest update

    IntentionState intention;
    std::map<AgentId, TimedDecision> remote_decisions;
    std::map<AgentId, TimedSelfReport> self_reports;
    std::map<AgentId, TimedForecast> remote_forecasts;
    std::optional<SecondOrderDistribution> decision;
    bool decision_informative = false;
    std::optional<ForecastTrajectory> forecast;
    std::map<AgentId, double> last_sample_time;

    double staleness(double now) const { return std::max(0.0, now - last_contribution); }
    VruKind kind() const { return fused.kind(); }
};

struct FusionCounters {
    std::uint64_t map_updates = 0;
    std::uint64_t ci_calls = 0;
    std::uint64_t naive_calls = 0;
    std::uint64_t feature_fusions = 0;
    std::uint64_t decision_fusions = 0;
    std::uint64_t forecast_fusions = 0;
    std::uint64_t entries_created = 0;
    std::uint64_t entries_dropped = 0;
    std::uint64_t samples_in = 0;
    std::uint64_t samples_inserted = 0;
    std::uint64_t samples_orphaned = 0;
    std::uint64_t samples_stale = 0;
    std::uint64_t messages_orphaned = 0;

    std::uint64_t total_calls() const {
        return map_updates + ci_calls + naive_calls + feature_fusions + decision_fusions + forecast_fusions;
    }
};

class VruMap {
public:
    explicit VruMap(AgentId ego, MapParams params = {});

    /// Aligns entries and inputs to `now`, associates, fuses, confirms and
    /// drops stale entries. Ego inputs also feed the entry's feature windows.
    void update(std::span<const TrackInput> inputs, double now);

    void add_features(AgentId sender, AgentKind kind, std::uint32_t track, std::span<const FeatureSample> samples);
    void add_decision(AgentId sender, AgentKind kind, std::uint32_t track, double time,
                      const SecondOrderDistribution& d);
    void add_self_report(AgentId sender, std::uint32_t track, double time, const SelfReport& r);
    void add_forecast(AgentId sender, AgentKind kind, std::uint32_t track, const ForecastTrajectory& f);

    /// Per entry: ego decision from the windows, decision pooling, forecast
    /// fusion and transition detection. Returns the detected transitions.
    std::vector<TransitionEvent> refresh(double now);

    const std::vector<MapEntry>& entries() const { return entries_; }
    const MapEntry* find(std::uint32_t id) const;
    const MapEntry* route(AgentId sender, std::uint32_t track) const;
    const FusionCounters& counters() const { return counters_; }
    const MapParams& params() const { return params_; }

private:
    MapEntry* route_mut(AgentId sender, std::uint32_t track);
    TrackEstimate fuse(const TrackEstimate& a, const TrackEstimate& b);

    AgentId ego_;
    MapParams params_;
    std::vector<MapEntry> entries_;
    std::map<std::pair<AgentId, std::uint32_t>, std::uint32_t> routes_;
    std::uint32_t next_id_ = 1;
    FusionCounters counters_;
};

}  // namespace vruco
