// Plain parameter records shared between the scenario loader, perception
// and the network model.
#pragma once

#include "vruco/core.hpp"

#include <array>
#include <optional>

namespace vruco {

/// Camera/laser style sensor, or a smart device carried by a VRU.
struct SensorParams {
    bool smart_device = false;
    double fov_half_angle = 0.7;     // rad
    double range_m = 60.0;
    double sigma_m = 0.2;            // isotropic position noise
    double p_detect = 0.95;
    double false_positives = 0.0;    // Poisson mean per frame
    double frame_hz = 25.0;
    // smart-device only
    std::optional<VruId> carrier;
    double confusion_rate = 0.1;
};

struct LinkModel {
    double latency_s = 0.05;
    double jitter_s = 0.02;          // uniform in [-jitter, +jitter]
    double loss = 0.05;              // in [0, 1)
    double range_m = 150.0;
};

enum class StrategyKind { BroadcastAll, RequestOnly, AdaptivePriority };

std::string_view to_string(StrategyKind s);
std::optional<StrategyKind> parse_strategy(std::string_view s);

struct PriorityWeights {
    double urgency = 1.0;
    double novelty = 0.5;
    double uncertainty = 0.5;
};

struct NetworkParams {
    StrategyKind strategy = StrategyKind::AdaptivePriority;
    double threshold = 0.3;
    PriorityWeights weights;
    int budget_units = 8;            // per agent per tick
    double max_queue_age_s = 1.0;    // deferred messages older than this expire
    double request_staleness_s = 0.5;
};

}  // namespace vruco
