// Tick-synchronous simulation engine.
#pragma once

#include "vruco/coop_fusion.hpp"
#include "vruco/metrics.hpp"
#include "vruco/params.hpp"
#include "vruco/scenario.hpp"

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace vruco {

struct RunConfig {
    std::uint64_t seed = 0;
    bool coop = true;
    std::optional<StrategyKind> strategy;  // overrides the scenario's network block
    bool type_a = true;
    bool type_b = true;
    bool naive_tracks = false;
    DecisionMode decision_mode = DecisionMode::Pooling;
    std::optional<std::vector<double>> horizons;
    bool trace = false;

    /// Throws MalformedInput when cooperation is on with both fusion types off.
    void validate() const;
};

enum class Stage {
    TruthAdvance,
    Membership,
    Perception,
    Intention,
    KnowledgeAcquisition,
    Strategy,
    Network,
    EgoFusion,
    Metrics,
};
std::string_view to_string(Stage s);

struct StageRecord {
    std::size_t tick;
    Stage stage;
};

struct RunOutput {
    MetricsReport report;
    std::vector<StageRecord> trace;  // filled when RunConfig::trace is set
};

RunOutput run(const Scenario& scenario, const RunConfig& config);

}  // namespace vruco
