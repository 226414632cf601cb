// Evaluation metrics and report files.
#pragma once

#include "vruco/coop_fusion.hpp"
#include "vruco/core.hpp"
#include "vruco/intention.hpp"
#include "vruco/params.hpp"
#include "vruco/vanet.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace vruco {

// ---------------------------------------------------------------------------
// Forecast error

struct HorizonError {
    double horizon = 0.0;
    std::size_t count = 0;
    double mean = 0.0;
    double p95 = 0.0;
};

struct ForecastErrorStats {
    std::vector<HorizonError> per_horizon;
    std::size_t skipped = 0;  // (origin, horizon) pairs past the end of the scenario
};

/// Truth position at an absolute time, or nullopt beyond the scenario.
using TruthFn = std::function<std::optional<Vec2>(double)>;

class ForecastErrorAccumulator {
public:
    void add(const ForecastTrajectory& f, const TruthFn& truth);
    ForecastErrorStats finish() const;

private:
    std::map<double, std::vector<double>> errors_;
    std::size_t skipped_ = 0;
};

ForecastErrorStats metric_forecast_error(std::span<const ForecastTrajectory> forecasts, const TruthFn& truth);

/// Nearest-rank percentile, q in (0, 1].
double percentile(std::vector<double> values, double q);

// ---------------------------------------------------------------------------
// Warning lead and transitions

/// conflict - alert when the alert precedes the conflict; nullopt (missed)
/// otherwise.
std::optional<double> metric_warning_lead(std::optional<double> alert_time, double conflict_time);

struct TransitionMatch {
    double truth_time = 0.0;
    MovementPrimitive from = MovementPrimitive::Waiting;
    MovementPrimitive to = MovementPrimitive::Waiting;
    std::optional<double> latency;  // nullopt = missed
};

struct TransitionLatencyStats {
    std::vector<TransitionMatch> matches;
    std::size_t false_alarms = 0;
};

/// Greedy matching in time order within `window` seconds.
TransitionLatencyStats metric_transition_latency(std::span<const TransitionEvent> events,
                                                 std::span<const Transition> truth, double window = 2.0);

// ---------------------------------------------------------------------------
// Report

struct VruTransitionReport {
    VruId vru;
    TransitionLatencyStats stats;
};

struct CoverageReport {
    VruId vru;
    std::size_t hidden_ticks = 0;
    std::size_t covered_ticks = 0;
    std::optional<double> fraction() const;
};

struct TimeseriesRow {
    double time = 0.0;
    std::size_t map_entries = 0;
    std::optional<double> coverage;  // share of ego-hidden VRUs covered at this tick
    std::size_t queue_depth = 0;
    std::optional<double> error_1s;
};

struct MetricsReport {
    std::string scenario;
    std::uint64_t seed = 0;
    bool coop = false;
    StrategyKind strategy = StrategyKind::AdaptivePriority;
    bool type_a = true;
    bool type_b = true;
    bool naive_tracks = false;
    std::size_t ticks = 0;

    std::vector<VruTransitionReport> transitions;
    std::size_t unmatched_events = 0;
    ForecastErrorStats forecast_error;
    std::size_t forecasts_emitted = 0;
    std::size_t forecasts_monotone = 0;

    std::optional<double> conflict_time;
    std::optional<double> alert_time;
    std::optional<double> warning_lead;
    std::size_t unmatched_alerts = 0;

    std::vector<CoverageReport> coverage;
    std::optional<double> occlusion_coverage;

    NetworkCounters network;
    bool conservation_held = true;
    std::uint64_t max_units_per_tick = 0;
    FusionCounters fusion;

    std::vector<TimeseriesRow> timeseries;
};

nlohmann::json to_json(const MetricsReport& r);

/// Writes report.json, metrics.csv and timeseries.csv into `dir`.
void emit_report(const MetricsReport& r, const std::filesystem::path& dir);

std::string metrics_csv(const MetricsReport& r);
std::string timeseries_csv(const MetricsReport& r);

}  // namespace vruco
