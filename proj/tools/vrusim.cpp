// Command-line driver: run, sweep, validate.
#include "vruco/engine.hpp"
#include "vruco/metrics.hpp"
#include "vruco/scenario.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace {

using namespace vruco;

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitSchema = 2;
constexpr int kExitConsistency = 3;

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) {
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

bool parse_on_off(const std::string& v) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw MalformedInput("expected on|off, got '" + v + "'");
}

// "a", "b", "a,b" or "a+b"
void apply_fusion(RunConfig& cfg, std::string list) {
    std::replace(list.begin(), list.end(), '+', ',');
    cfg.type_a = false;
    cfg.type_b = false;
    for (const auto& t : split(list, ',')) {
        if (t == "a") cfg.type_a = true;
        else if (t == "b") cfg.type_b = true;
        else if (t == "none") continue;
        else throw MalformedInput("unknown fusion type '" + t + "'");
    }
}

StrategyKind strategy_or_throw(const std::string& s) {
    const auto k = parse_strategy(s);
    if (!k) throw MalformedInput("unknown strategy '" + s + "'");
    return *k;
}

/// Applies one sweep grid value. Parameters touch either the run config or
/// a copy of the scenario.
void apply_param(Scenario& sc, RunConfig& cfg, const std::string& name, const std::string& value) {
    auto num = [&] {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw MalformedInput("bad number '" + value + "' for " + name);
        return v;
    };
    if (name == "coop") cfg.coop = parse_on_off(value);
    else if (name == "strategy") cfg.strategy = strategy_or_throw(value);
    else if (name == "fusion") apply_fusion(cfg, value);
    else if (name == "naive_tracks") cfg.naive_tracks = parse_on_off(value);
    else if (name == "threshold") sc.network.threshold = num();
    else if (name == "budget_units") sc.network.budget_units = static_cast<int>(num());
    else if (name == "loss") for (auto& a : sc.agents) a.link.loss = num();
    else if (name == "latency_s") for (auto& a : sc.agents) a.link.latency_s = num();
    else if (name == "jitter_s") for (auto& a : sc.agents) a.link.jitter_s = num();
    else if (name == "false_positives") for (auto& a : sc.agents) a.sensor.false_positives = num();
    else throw MalformedInput("unknown sweep parameter '" + name + "'");
}

void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error("cannot open " + p.string());
    f << s;
}

void write_trace(const std::filesystem::path& p, const Scenario& sc, const std::vector<StageRecord>& trace) {
    std::ostringstream os;
    os << "tick,time,stage\n";
    for (const auto& r : trace) os << r.tick << ',' << sc.tick_time(r.tick) << ',' << to_string(r.stage) << '\n';
    write_text(p, os.str());
}

struct GridAxis {
    std::string name;
    std::vector<std::string> values;
};

GridAxis parse_axis(const std::string& s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw MalformedInput("grid entry must be param=v1,v2: '" + s + "'");
    GridAxis g{s.substr(0, eq), split(s.substr(eq + 1), ',')};
    if (g.values.empty()) throw MalformedInput("grid entry has no values: '" + s + "'");
    return g;
}

std::string opt_str(const std::optional<double>& v) {
    if (!v) return "";
    std::ostringstream os;
    os.precision(17);
    os << *v;
    return os.str();
}

int cmd_run(const std::string& scenario_path, std::uint64_t seed, const std::string& coop,
            const std::optional<std::string>& strategy, const std::string& fusion, const std::string& out, bool trace) {
    const Scenario sc = load_scenario(scenario_path);
    RunConfig cfg;
    cfg.seed = seed;
    cfg.coop = parse_on_off(coop);
    if (strategy) cfg.strategy = strategy_or_throw(*strategy);
    apply_fusion(cfg, fusion);
    cfg.trace = trace;
    cfg.validate();

    const auto t0 = std::chrono::steady_clock::now();
    const auto result = run(sc, cfg);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    emit_report(result.report, out);
    write_text(std::filesystem::path(out) / "timing.json", nlohmann::json{{"wall_clock_s", wall}}.dump(2) + "\n");
    if (trace) write_trace(std::filesystem::path(out) / "trace.csv", sc, result.trace);

    const auto& r = result.report;
    std::cout << "lead=" << (r.warning_lead ? opt_str(r.warning_lead) : "missed")
              << " coverage=" << (r.occlusion_coverage ? opt_str(r.occlusion_coverage) : "n/a")
              << " sent=" << r.network.sent << " delivered=" << r.network.delivered << " wall=" << wall << "s\n";
    return kExitOk;
}

int cmd_sweep(const std::string& scenario_path, std::uint64_t seeds, const std::vector<std::string>& grid_args,
              const std::string& out, unsigned jobs) {
    const Scenario base = load_scenario(scenario_path);
    std::vector<GridAxis> axes;
    for (const auto& g : grid_args) axes.push_back(parse_axis(g));

    struct Job {
        std::map<std::string, std::string> params;
        std::uint64_t seed;
        std::string dir;
    };
    std::vector<std::map<std::string, std::string>> combos{{}};
    for (const auto& ax : axes) {
        std::vector<std::map<std::string, std::string>> next;
        for (const auto& c : combos) {
            for (const auto& v : ax.values) {
                auto m = c;
                m[ax.name] = v;
                next.push_back(std::move(m));
            }
        }
        combos = std::move(next);
    }
    std::vector<Job> work;
    for (std::size_t ci = 0; ci < combos.size(); ++ci) {
        for (std::uint64_t s = 0; s < seeds; ++s) {
            std::ostringstream dir;
            dir << "run" << ci << "_seed" << s;
            work.push_back({combos[ci], s, dir.str()});
        }
    }
    // Surface bad grid values before spawning threads.
    for (const auto& c : combos) {
        Scenario sc = base;
        RunConfig cfg;
        for (const auto& [k, v] : c) apply_param(sc, cfg, k, v);
        cfg.validate();
    }

    std::vector<std::string> rows(work.size());
    std::atomic<std::size_t> next{0};
    std::atomic<int> failure{kExitOk};
    std::mutex err_mu;
    auto worker = [&] {
        for (std::size_t i = next++; i < work.size(); i = next++) {
            const auto& job = work[i];
            try {
                Scenario sc = base;
                RunConfig cfg;
                cfg.seed = job.seed;
                for (const auto& [k, v] : job.params) apply_param(sc, cfg, k, v);
                const auto t0 = std::chrono::steady_clock::now();
                const auto res = run(sc, cfg);
                const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                const auto dir = std::filesystem::path(out) / job.dir;
                emit_report(res.report, dir);
                write_text(dir / "timing.json", nlohmann::json{{"wall_clock_s", wall}}.dump(2) + "\n");

                std::ostringstream row;
                row << job.dir << ',' << job.seed;
                for (const auto& ax : axes) row << ',' << job.params.at(ax.name);
                const auto& r = res.report;
                row << ',' << opt_str(r.warning_lead) << ',' << opt_str(r.occlusion_coverage) << ','
                    << r.network.sent << ',' << r.network.delivered << ',' << wall;
                rows[i] = row.str();
            } catch (const InternalConsistencyError& e) {
                std::lock_guard lk(err_mu);
                std::cerr << job.dir << ": " << e.what() << '\n';
                failure = kExitConsistency;
            } catch (const std::exception& e) {
                std::lock_guard lk(err_mu);
                std::cerr << job.dir << ": " << e.what() << '\n';
                int expected = kExitOk;
                failure.compare_exchange_strong(expected, kExitOther);
            }
        }
    };
    const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(work.size())));
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    std::filesystem::create_directories(out);
    std::ostringstream csv;
    csv << "run,seed";
    for (const auto& ax : axes) csv << ',' << ax.name;
    csv << ",warning_lead,occlusion_coverage,messages_sent,messages_delivered,wall_clock_s\n";
    for (const auto& r : rows) {
        if (!r.empty()) csv << r << '\n';
    }
    write_text(std::filesystem::path(out) / "summary.csv", csv.str());
    std::cout << work.size() << " runs written to " << out << '\n';
    return failure.load();
}

int cmd_validate(const std::string& scenario_path) {
    const Scenario sc = load_scenario(scenario_path);
    std::cout << sc.name << ": ok (" << sc.vrus.size() << " VRUs, " << sc.agents.size() << " agents, "
              << sc.tick_count() << " ticks)\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cooperative VRU intention-detection simulator"};
    app.require_subcommand(1);

    std::string scenario;
    std::uint64_t seed = 0;
    std::string coop = "on";
    std::optional<std::string> strategy;
    std::string fusion = "a,b";
    std::string out = "out";
    bool trace = false;
    auto* run_cmd = app.add_subcommand("run", "Run one simulation");
    run_cmd->add_option("--scenario", scenario, "Scenario JSON")->required();
    run_cmd->add_option("--seed", seed, "Master seed");
    run_cmd->add_option("--coop", coop, "on|off");
    run_cmd->add_option("--strategy", strategy, "broadcast|request|adaptive");
    run_cmd->add_option("--fusion", fusion, "Comma list of fusion types: a, b");
    run_cmd->add_option("--out", out, "Output directory");
    run_cmd->add_flag("--trace", trace, "Write trace.csv with stage entries per tick");

    std::uint64_t seeds = 1;
    std::vector<std::string> grid;
    unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
    auto* sweep_cmd = app.add_subcommand("sweep", "Run a seed x parameter grid in parallel");
    sweep_cmd->add_option("--scenario", scenario, "Scenario JSON")->required();
    sweep_cmd->add_option("--seeds", seeds, "Seeds 0..n-1");
    sweep_cmd->add_option("--grid", grid, "param=v1,v2 (repeatable)");
    sweep_cmd->add_option("--out", out, "Output directory");
    sweep_cmd->add_option("--jobs", jobs, "Worker threads");

    auto* validate_cmd = app.add_subcommand("validate", "Check a scenario file");
    validate_cmd->add_option("--scenario", scenario, "Scenario JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*run_cmd) return cmd_run(scenario, seed, coop, strategy, fusion, out, trace);
        if (*sweep_cmd) return cmd_sweep(scenario, seeds, grid, out, jobs);
        if (*validate_cmd) return cmd_validate(scenario);
    } catch (const ScenarioError& e) {
        std::cerr << "scenario error: " << e.what() << '\n';
        return kExitSchema;
    } catch (const InternalConsistencyError& e) {
        std::cerr << "internal consistency: " << e.what() << '\n';
        return kExitConsistency;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitOther;
    }
    return kExitOther;
}
