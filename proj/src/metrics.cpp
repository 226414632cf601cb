#include "vruco/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace vruco {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Forecast error

double percentile(std::vector<double> values, double q) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
    return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

void ForecastErrorAccumulator::add(const ForecastTrajectory& f, const TruthFn& truth) {
    for (std::size_t k = 0; k < f.size(); ++k) {
        const double h = f.horizons()[k];
        const auto p = truth(f.origin() + h);
        if (!p) {
            ++skipped_;
            continue;
        }
        errors_[h].push_back((f.means()[k] - *p).norm());
    }
}

ForecastErrorStats ForecastErrorAccumulator::finish() const {
    ForecastErrorStats out;
    out.skipped = skipped_;
    for (const auto& [h, errs] : errors_) {
        HorizonError e;
        e.horizon = h;
        e.count = errs.size();
        double sum = 0.0;
        for (double v : errs) sum += v;
        e.mean = errs.empty() ? 0.0 : sum / static_cast<double>(errs.size());
        e.p95 = percentile(errs, 0.95);
        out.per_horizon.push_back(e);
    }
    return out;
}

ForecastErrorStats metric_forecast_error(std::span<const ForecastTrajectory> forecasts, const TruthFn& truth) {
    ForecastErrorAccumulator acc;
    for (const auto& f : forecasts) acc.add(f, truth);
    return acc.finish();
}

// ---------------------------------------------------------------------------
// Warning lead and transitions

std::optional<double> metric_warning_lead(std::optional<double> alert_time, double conflict_time) {
    if (!alert_time || *alert_time >= conflict_time) return std::nullopt;
    return conflict_time - *alert_time;
}

TransitionLatencyStats metric_transition_latency(std::span<const TransitionEvent> events,
                                                 std::span<const Transition> truth, double window) {
    std::vector<TransitionEvent> evs(events.begin(), events.end());
    std::stable_sort(evs.begin(), evs.end(),
                     [](const TransitionEvent& a, const TransitionEvent& b) { return a.time < b.time; });
    std::vector<Transition> tr(truth.begin(), truth.end());
    std::stable_sort(tr.begin(), tr.end(), [](const Transition& a, const Transition& b) { return a.time < b.time; });

    std::vector<bool> used(evs.size(), false);
    TransitionLatencyStats out;
    for (const auto& t : tr) {
        TransitionMatch m{t.time, t.from, t.to, std::nullopt};
        for (std::size_t i = 0; i < evs.size(); ++i) {
            if (used[i] || std::abs(evs[i].time - t.time) > window) continue;
            used[i] = true;
            m.latency = evs[i].time - t.time;
            break;
        }
        out.matches.push_back(m);
    }
    out.false_alarms = static_cast<std::size_t>(std::count(used.begin(), used.end(), false));
    return out;
}

// ---------------------------------------------------------------------------
// Report

std::optional<double> CoverageReport::fraction() const {
    if (hidden_ticks == 0) return std::nullopt;
    return static_cast<double>(covered_ticks) / static_cast<double>(hidden_ticks);
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json counters_json(const NetworkCounters& c) {
    return {{"sent", c.sent},
            {"delivered", c.delivered},
            {"dropped_loss", c.dropped_loss},
            {"dropped_expired", c.dropped_expired},
            {"dropped_departed", c.dropped_departed},
            {"in_flight", c.in_flight},
            {"queued", c.queued},
            {"messages", c.messages},
            {"units_transmitted", c.units_transmitted}};
}

json fusion_json(const FusionCounters& c) {
    return {{"map_updates", c.map_updates},
            {"ci_calls", c.ci_calls},
            {"naive_calls", c.naive_calls},
            {"feature_fusions", c.feature_fusions},
            {"decision_fusions", c.decision_fusions},
            {"forecast_fusions", c.forecast_fusions},
            {"entries_created", c.entries_created},
            {"entries_dropped", c.entries_dropped},
            {"samples_in", c.samples_in},
            {"samples_inserted", c.samples_inserted},
            {"samples_orphaned", c.samples_orphaned},
            {"samples_stale", c.samples_stale},
            {"messages_orphaned", c.messages_orphaned}};
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error("cannot open " + p.string() + " for writing");
    f << content;
    if (!f) throw Error("failed writing " + p.string());
}

}  // namespace

json to_json(const MetricsReport& r) {
    json j;
    j["scenario"] = r.scenario;
    j["seed"] = r.seed;
    j["coop"] = r.coop;
    j["strategy"] = std::string(to_string(r.strategy));
    j["fusion"] = {{"type_a", r.type_a}, {"type_b", r.type_b}, {"naive_tracks", r.naive_tracks}};
    j["ticks"] = r.ticks;

    json trans = json::array();
    for (const auto& v : r.transitions) {
        json ms = json::array();
        for (const auto& m : v.stats.matches) {
            ms.push_back({{"truth_time", m.truth_time},
                          {"from", std::string(to_string(m.from))},
                          {"to", std::string(to_string(m.to))},
                          {"latency", opt(m.latency)},
                          {"missed", !m.latency.has_value()}});
        }
        trans.push_back({{"vru", v.vru.value}, {"transitions", ms}, {"false_alarms", v.stats.false_alarms}});
    }
    j["transition_detection"] = {{"per_vru", trans}, {"unmatched_events", r.unmatched_events}};

    json fe = json::array();
    for (const auto& h : r.forecast_error.per_horizon) {
        fe.push_back({{"horizon", h.horizon}, {"count", h.count}, {"mean", h.mean}, {"p95", h.p95}});
    }
    j["forecast_error"] = {{"per_horizon", fe},
                           {"skipped_pairs", r.forecast_error.skipped},
                           {"forecasts_emitted", r.forecasts_emitted},
                           {"forecasts_monotone", r.forecasts_monotone}};

    j["warning"] = {{"conflict_time", opt(r.conflict_time)},
                    {"alert_time", opt(r.alert_time)},
                    {"lead", opt(r.warning_lead)},
                    {"missed", !r.warning_lead.has_value()},
                    {"unmatched_alerts", r.unmatched_alerts}};

    json cov = json::array();
    for (const auto& c : r.coverage) {
        cov.push_back({{"vru", c.vru.value},
                       {"hidden_ticks", c.hidden_ticks},
                       {"covered_ticks", c.covered_ticks},
                       {"fraction", opt(c.fraction())}});
    }
    j["coverage"] = {{"occlusion_coverage", opt(r.occlusion_coverage)}, {"per_vru", cov}};
    j["network"] = counters_json(r.network);
    j["network"]["conservation_held"] = r.conservation_held;
    j["network"]["max_units_per_tick"] = r.max_units_per_tick;
    j["fusion_calls"] = fusion_json(r.fusion);
    return j;
}

std::string metrics_csv(const MetricsReport& r) {
    std::ostringstream os;
    os << "metric,horizon,value\n";
    for (const auto& h : r.forecast_error.per_horizon) {
        os << "forecast_error," << fmt(h.horizon) << ',' << fmt(h.mean) << '\n';
    }
    for (const auto& h : r.forecast_error.per_horizon) {
        os << "forecast_error_p95," << fmt(h.horizon) << ',' << fmt(h.p95) << '\n';
    }
    if (r.ticks == 0) return os.str();
    os << "warning_lead,," << fmt(r.warning_lead) << '\n';
    os << "occlusion_coverage,," << fmt(r.occlusion_coverage) << '\n';
    for (const auto& v : r.transitions) {
        for (const auto& m : v.stats.matches) {
            os << "transition_latency_vru" << v.vru.value << ",," << fmt(m.latency) << '\n';
        }
    }
    os << "messages_sent,," << r.network.sent << '\n';
    os << "messages_delivered,," << r.network.delivered << '\n';
    os << "dropped_loss,," << r.network.dropped_loss << '\n';
    os << "dropped_expired,," << r.network.dropped_expired << '\n';
    os << "dropped_departed,," << r.network.dropped_departed << '\n';
    return os.str();
}

std::string timeseries_csv(const MetricsReport& r) {
    std::ostringstream os;
    os << "time,map_entries,coverage,queue_depth,error_1s\n";
    for (const auto& row : r.timeseries) {
        os << fmt(row.time) << ',' << row.map_entries << ',' << fmt(row.coverage) << ',' << row.queue_depth << ','
           << fmt(row.error_1s) << '\n';
    }
    return os.str();
}

void emit_report(const MetricsReport& r, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
    write_file(dir / "report.json", to_json(r).dump(2) + "\n");
    write_file(dir / "metrics.csv", metrics_csv(r));
    write_file(dir / "timeseries.csv", timeseries_csv(r));
}

}  // namespace vruco
