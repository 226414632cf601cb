#include "vruco/scenario.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

namespace vruco {

using nlohmann::json;

std::string_view to_string(StrategyKind s) {
    switch (s) {
    case StrategyKind::BroadcastAll: return "broadcast";
    case StrategyKind::RequestOnly: return "request";
    case StrategyKind::AdaptivePriority: return "adaptive";
    }
    return "?";
}

std::optional<StrategyKind> parse_strategy(std::string_view s) {
    if (s == "broadcast" || s == "broadcast-all") return StrategyKind::BroadcastAll;
    if (s == "request" || s == "request-only") return StrategyKind::RequestOnly;
    if (s == "adaptive" || s == "adaptive-priority") return StrategyKind::AdaptivePriority;
    return std::nullopt;
}

double default_vmax(VruKind kind) { return kind == VruKind::Pedestrian ? 1.5 : 4.0; }
double default_tau(VruKind kind) { return kind == VruKind::Pedestrian ? 1.0 : 1.5; }

// ---------------------------------------------------------------------------
// Strict JSON access

namespace {

class Obj {
public:
    Obj(const json& j, std::string path, std::initializer_list<const char*> allowed)
        : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ScenarioError(path_, "expected an object");
        std::set<std::string> ok(allowed.begin(), allowed.end());
        for (const auto& [key, value] : j_.items()) {
            if (!ok.contains(key)) throw ScenarioError(at(key), "unknown key");
        }
    }

    std::string at(const std::string& key) const {
        return path_.empty() ? key : path_ + "." + key;
    }
    bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }
    const json& raw(const char* key) const {
        if (!has(key)) throw ScenarioError(at(key), "missing required field");
        return j_.at(key);
    }

    double number(const char* key) const {
        const auto& v = raw(key);
        if (!v.is_number()) throw ScenarioError(at(key), "expected a number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) throw ScenarioError(at(key), "must be finite");
        return d;
    }
    double number(const char* key, double fallback) const { return has(key) ? number(key) : fallback; }
    std::optional<double> opt_number(const char* key) const {
        return has(key) ? std::optional<double>(number(key)) : std::nullopt;
    }

    std::uint32_t id(const char* key) const {
        const auto& v = raw(key);
        if (!v.is_number_unsigned()) throw ScenarioError(at(key), "expected a non-negative integer");
        return v.get<std::uint32_t>();
    }

    std::string string(const char* key) const {
        const auto& v = raw(key);
        if (!v.is_string()) throw ScenarioError(at(key), "expected a string");
        return v.get<std::string>();
    }
    std::string string(const char* key, std::string fallback) const {
        return has(key) ? string(key) : fallback;
    }

    bool boolean(const char* key, bool fallback) const {
        if (!has(key)) return fallback;
        const auto& v = j_.at(key);
        if (!v.is_boolean()) throw ScenarioError(at(key), "expected a boolean");
        return v.get<bool>();
    }

    Vec2 vec2(const char* key) const { return to_vec2(raw(key), at(key)); }
    Vec2 vec2(const char* key, Vec2 fallback) const { return has(key) ? vec2(key) : fallback; }

    const json& array(const char* key) const {
        const auto& v = raw(key);
        if (!v.is_array()) throw ScenarioError(at(key), "expected an array");
        return v;
    }

    static Vec2 to_vec2(const json& v, const std::string& path) {
        if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
            throw ScenarioError(path, "expected [x, y]");
        }
        Vec2 out(v[0].get<double>(), v[1].get<double>());
        if (!out.allFinite()) throw ScenarioError(path, "must be finite");
        return out;
    }

private:
    const json& j_;
    std::string path_;
};

std::string idx(const std::string& base, std::size_t i) {
    return base + "[" + std::to_string(i) + "]";
}

void require(bool cond, const std::string& path, const std::string& msg) {
    if (!cond) throw ScenarioError(path, msg);
}

bool is_lag_primitive(MovementPrimitive p) {
    using enum MovementPrimitive;
    return p == Starting || p == Walking || p == Pedaling || p == Acceleration || p == Deceleration;
}

Phase parse_phase(const json& j, const std::string& path, VruKind kind) {
    Obj o(j, path, {"primitive", "start_s", "v_max", "tau", "omega", "gesture"});
    Phase ph;
    const auto name = o.string("primitive");
    auto prim = parse_primitive(name);
    require(prim.has_value(), o.at("primitive"), "unknown primitive '" + name + "'");
    require(primitive_index(kind, *prim).has_value(), o.at("primitive"),
            "primitive '" + name + "' is not defined for " + std::string(to_string(kind)));
    ph.primitive = *prim;
    ph.start_s = o.number("start_s");
    ph.v_max = o.opt_number("v_max");
    ph.tau = o.number("tau", default_tau(kind));
    ph.omega = o.number("omega", 0.0);
    ph.gesture = o.boolean("gesture", false);

    using enum MovementPrimitive;
    if ((ph.primitive == Starting || ph.primitive == Walking || ph.primitive == Pedaling) && !ph.v_max) {
        ph.v_max = default_vmax(kind);
    }
    if (ph.primitive == Acceleration || ph.primitive == Deceleration) {
        require(ph.v_max.has_value(), o.at("v_max"), "target speed required");
    }
    if (ph.v_max) require(*ph.v_max > 0.0, o.at("v_max"), "must be > 0");
    require(ph.tau > 0.0, o.at("tau"), "must be > 0");
    if (ph.primitive == Turning) require(ph.omega != 0.0, o.at("omega"), "turning needs omega != 0");
    return ph;
}

SensorParams parse_sensor(const json& j, const std::string& path, AgentKind kind) {
    SensorParams s;
    if (kind == AgentKind::SmartDevice) {
        Obj o(j, path, {"vru_id", "sigma_m", "p_detect", "frame_hz", "confusion_rate"});
        s.smart_device = true;
        s.carrier = VruId{o.id("vru_id")};
        s.sigma_m = o.number("sigma_m", 3.0);
        s.p_detect = o.number("p_detect", 1.0);
        s.frame_hz = o.number("frame_hz", 5.0);
        s.confusion_rate = o.number("confusion_rate", 0.1);
        require(s.confusion_rate >= 0.0 && s.confusion_rate <= 1.0, o.at("confusion_rate"),
                "must be in [0, 1]");
    } else {
        Obj o(j, path,
              {"fov_half_angle", "range_m", "sigma_m", "p_detect", "false_positives", "frame_hz"});
        s.fov_half_angle = o.number("fov_half_angle", s.fov_half_angle);
        s.range_m = o.number("range_m", s.range_m);
        s.sigma_m = o.number("sigma_m", s.sigma_m);
        s.p_detect = o.number("p_detect", s.p_detect);
        s.false_positives = o.number("false_positives", s.false_positives);
        s.frame_hz = o.number("frame_hz", s.frame_hz);
        require(s.fov_half_angle > 0.0, o.at("fov_half_angle"), "must be > 0");
        require(s.range_m > 0.0, o.at("range_m"), "must be > 0");
        require(s.false_positives >= 0.0, o.at("false_positives"), "must be >= 0");
    }
    require(s.sigma_m > 0.0, path + ".sigma_m", "must be > 0");
    require(s.p_detect > 0.0 && s.p_detect <= 1.0, path + ".p_detect", "must be in (0, 1]");
    require(s.frame_hz > 0.0, path + ".frame_hz", "must be > 0");
    return s;
}

LinkModel parse_link(const json& j, const std::string& path) {
    Obj o(j, path, {"latency_s", "jitter_s", "loss", "range_m"});
    LinkModel l;
    l.latency_s = o.number("latency_s", l.latency_s);
    l.jitter_s = o.number("jitter_s", l.jitter_s);
    l.loss = o.number("loss", l.loss);
    l.range_m = o.number("range_m", l.range_m);
    require(l.latency_s > 0.0, o.at("latency_s"), "must be > 0");
    require(l.jitter_s >= 0.0, o.at("jitter_s"), "must be >= 0");
    require(l.loss >= 0.0 && l.loss < 1.0 + 1e-12, o.at("loss"), "must be in [0, 1]");
    require(l.range_m > 0.0, o.at("range_m"), "must be > 0");
    return l;
}

NetworkParams parse_network(const json& j, const std::string& path) {
    Obj o(j, path,
          {"strategy", "threshold", "weights", "budget_units", "max_queue_age_s",
           "request_staleness_s"});
    NetworkParams n;
    if (o.has("strategy")) {
        auto s = parse_strategy(o.string("strategy"));
        require(s.has_value(), o.at("strategy"), "unknown strategy");
        n.strategy = *s;
    }
    n.threshold = o.number("threshold", n.threshold);
    if (o.has("weights")) {
        const auto& w = o.array("weights");
        require(w.size() == 3, o.at("weights"), "expected [urgency, novelty, uncertainty]");
        for (const auto& v : w) require(v.is_number() && v.get<double>() >= 0.0, o.at("weights"), "weights must be >= 0");
        n.weights = {w[0].get<double>(), w[1].get<double>(), w[2].get<double>()};
    }
    if (o.has("budget_units")) {
        const auto& b = o.raw("budget_units");
        require(b.is_number_integer() && b.get<int>() > 0, o.at("budget_units"), "must be a positive integer");
        n.budget_units = b.get<int>();
    }
    n.max_queue_age_s = o.number("max_queue_age_s", n.max_queue_age_s);
    n.request_staleness_s = o.number("request_staleness_s", n.request_staleness_s);
    require(n.max_queue_age_s > 0.0, o.at("max_queue_age_s"), "must be > 0");
    return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// Closed-form phase kinematics

namespace {

struct PhaseMotion {
    double speed;
    double distance;  // along-track distance since phase start (straight phases)
    double accel;     // tangential
};

// Speed/distance for the non-turning forms after `dt` seconds in the phase.
PhaseMotion straight_motion(const Phase& ph, double entry_speed, double dt) {
    using enum MovementPrimitive;
    switch (ph.primitive) {
    case Waiting: return {0.0, 0.0, 0.0};
    case Stopping: {
        if (entry_speed <= kStopSpeed) return {0.0, 0.0, 0.0};
        const double t_stop = ph.tau * std::log(entry_speed / kStopSpeed);
        const double te = std::min(dt, t_stop);
        const double decay = std::exp(-te / ph.tau);
        const double dist = entry_speed * ph.tau * (1.0 - decay);
        if (dt >= t_stop) return {0.0, dist, 0.0};
        return {entry_speed * decay, dist, -entry_speed * decay / ph.tau};
    }
    case Turning: return {entry_speed, entry_speed * dt, 0.0};
    default: {
        // first-order lag toward the target speed
        const double target = ph.v_max.value_or(entry_speed);
        const double decay = std::exp(-dt / ph.tau);
        const double gap = entry_speed - target;
        return {target + gap * decay, target * dt + gap * ph.tau * (1.0 - decay),
                -gap * decay / ph.tau};
    }
    }
}

KinematicState phase_state(const Phase& ph, const PhaseEntry& e, double dt) {
    KinematicState k;
    const auto m = straight_motion(ph, e.speed, dt);
    if (ph.primitive == MovementPrimitive::Turning) {
        const double v = e.speed;
        const double th = e.heading + ph.omega * dt;
        k.position = e.position +
                     (v / ph.omega) * Vec2(std::sin(th) - std::sin(e.heading),
                                           -std::cos(th) + std::cos(e.heading));
        const Vec2 dir(std::cos(th), std::sin(th));
        k.velocity = v * dir;
        k.acceleration = v * ph.omega * Vec2(-dir.y(), dir.x());
        k.heading = wrap_angle(th);
        return k;
    }
    const Vec2 dir(std::cos(e.heading), std::sin(e.heading));
    k.position = e.position + m.distance * dir;
    k.velocity = m.speed * dir;
    k.acceleration = m.accel * dir;
    k.heading = wrap_angle(e.heading);
    return k;
}

}  // namespace

std::size_t PhasePlan::phase_index_at(double t) const {
    std::size_t i = 0;
    while (i + 1 < phases.size() && phases[i + 1].start_s <= t) ++i;
    return i;
}

void finalize_plan(PhasePlan& plan, const Vec2& position, double heading, double initial_speed,
                   const std::string& where) {
    require(!plan.phases.empty(), where, "phase plan is empty");
    require(plan.phases.front().start_s == 0.0, where + "[0].start_s", "first phase must start at t=0");
    for (std::size_t i = 1; i < plan.phases.size(); ++i) {
        require(plan.phases[i].start_s > plan.phases[i - 1].start_s, idx(where, i) + ".start_s",
                "phase start times must be strictly increasing");
    }
    for (std::size_t i = 0; i < plan.phases.size(); ++i) {
        require(plan.phases[i].start_s <= plan.duration_s, idx(where, i) + ".start_s",
                "phase plan exceeds duration");
    }

    plan.entries.clear();
    PhaseEntry e{position, heading, initial_speed};
    for (std::size_t i = 0; i < plan.phases.size(); ++i) {
        const auto& ph = plan.phases[i];
        if (ph.primitive == MovementPrimitive::Waiting) {
            require(e.speed == 0.0, idx(where, i), "waiting phase entered while moving");
        }
        plan.entries.push_back(e);
        if (i + 1 < plan.phases.size()) {
            const double dt = plan.phases[i + 1].start_s - ph.start_s;
            const auto k = phase_state(ph, e, dt);
            e.position = k.position;
            // keep the unwrapped heading so turning arcs stay continuous
            e.heading = ph.primitive == MovementPrimitive::Turning ? e.heading + ph.omega * dt
                                                                   : e.heading;
            e.speed = straight_motion(ph, e.speed, dt).speed;
        }
    }
}

double speed_profile(const PhasePlan& plan, double t) {
    if (!(t >= 0.0) || t > plan.duration_s) throw OutOfRange("time outside scenario");
    const auto i = plan.phase_index_at(t);
    return straight_motion(plan.phases[i], plan.entries[i].speed, t - plan.phases[i].start_s).speed;
}

KinematicState kinematics_at(const PhasePlan& plan, double t) {
    if (!(t >= 0.0) || t > plan.duration_s) throw OutOfRange("time outside scenario");
    const auto i = plan.phase_index_at(t);
    return phase_state(plan.phases[i], plan.entries[i], t - plan.phases[i].start_s);
}

std::vector<GroundTruthState> ground_truth_at(const Scenario& scenario, double t) {
    if (!(t >= 0.0) || t > scenario.duration_s) throw OutOfRange("time outside scenario");
    std::vector<GroundTruthState> out;
    out.reserve(scenario.vrus.size());
    for (const auto& v : scenario.vrus) {
        const auto i = v.plan.phase_index_at(t);
        GroundTruthState g;
        g.vru = v.id;
        g.kind = v.kind;
        g.time = t;
        g.kin = kinematics_at(v.plan, t);
        g.primitive = v.plan.phases[i].primitive;
        g.gesture = v.plan.phases[i].gesture;
        g.extent_m = v.extent_m;
        out.push_back(g);
    }
    return out;
}

std::vector<Transition> transition_times(const Scenario& scenario, VruId vru) {
    const auto& plan = scenario.vru(vru).plan;
    std::vector<Transition> out;
    for (std::size_t i = 1; i < plan.phases.size(); ++i) {
        out.push_back({plan.phases[i].start_s, plan.phases[i - 1].primitive, plan.phases[i].primitive});
    }
    return out;
}

// ---------------------------------------------------------------------------

std::size_t Scenario::tick_count() const {
    return static_cast<std::size_t>(std::floor(duration_s * tick_hz + 1e-9)) + 1;
}

const VruSpec& Scenario::vru(VruId id) const {
    for (const auto& v : vrus) {
        if (v.id == id) return v;
    }
    throw OutOfRange("unknown vru id " + std::to_string(id.value));
}

const AgentSpec& Scenario::agent(AgentId id) const {
    for (const auto& a : agents) {
        if (a.id == id) return a;
    }
    throw OutOfRange("unknown agent id " + std::to_string(id.value));
}

std::optional<AgentId> Scenario::ego() const {
    for (const auto& a : agents) {
        if (a.kind == AgentKind::EgoVehicle) return a.id;
    }
    return std::nullopt;
}

Pose agent_pose(const Scenario& scenario, const AgentSpec& agent, double t) {
    if (agent.sensor.smart_device && agent.sensor.carrier) {
        const auto k = kinematics_at(scenario.vru(*agent.sensor.carrier).plan,
                                     std::clamp(t, 0.0, scenario.duration_s));
        return {k.position, k.heading};
    }
    return {agent.position + agent.velocity * t, agent.heading};
}

std::optional<double> conflict_time(const Scenario& scenario) {
    if (!scenario.conflict || !scenario.conflict->vru) return std::nullopt;
    const auto& c = *scenario.conflict;
    const auto& plan = scenario.vru(*c.vru).plan;
    for (std::size_t k = 0; k < scenario.tick_count(); ++k) {
        const double t = scenario.tick_time(k);
        if ((kinematics_at(plan, t).position - c.point).norm() <= c.radius_m) return t;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------

Scenario build_scenario(const json& doc) {
    Obj root(doc, "",
             {"name", "duration_s", "tick_hz", "vrus", "agents", "obstacles", "conflict", "network",
              "metrics"});
    Scenario sc;
    sc.name = root.string("name", "scenario");
    sc.duration_s = root.number("duration_s");
    require(sc.duration_s > 0.0, "duration_s", "must be > 0");
    sc.tick_hz = root.number("tick_hz", 25.0);
    require(sc.tick_hz > 0.0, "tick_hz", "must be > 0");

    std::set<std::uint32_t> vru_ids;
    const auto& vrus = root.array("vrus");
    for (std::size_t i = 0; i < vrus.size(); ++i) {
        const auto path = idx("vrus", i);
        Obj o(vrus[i], path, {"id", "kind", "position", "heading", "initial_speed", "extent_m", "phases"});
        VruSpec v;
        v.id = VruId{o.id("id")};
        require(vru_ids.insert(v.id.value).second, o.at("id"),
                "duplicate vru id " + std::to_string(v.id.value));
        auto kind = parse_vru_kind(o.string("kind"));
        require(kind.has_value(), o.at("kind"), "expected pedestrian or cyclist");
        v.kind = *kind;
        v.position = o.vec2("position");
        v.heading = wrap_angle(o.number("heading", 0.0));
        v.extent_m = o.number("extent_m", v.kind == VruKind::Pedestrian ? 0.3 : 0.9);
        require(v.extent_m > 0.0, o.at("extent_m"), "must be > 0");

        const auto& phases = o.array("phases");
        for (std::size_t p = 0; p < phases.size(); ++p) {
            v.plan.phases.push_back(parse_phase(phases[p], idx(o.at("phases"), p), v.kind));
        }
        v.plan.duration_s = sc.duration_s;
        double v0 = 0.0;
        if (!v.plan.phases.empty()) {
            const auto& first = v.plan.phases.front();
            if (is_lag_primitive(first.primitive) && first.primitive != MovementPrimitive::Starting) {
                v0 = first.v_max.value_or(0.0);
            }
        }
        v0 = o.number("initial_speed", v0);
        require(v0 >= 0.0, o.at("initial_speed"), "must be >= 0");
        finalize_plan(v.plan, v.position, v.heading, v0, o.at("phases"));
        sc.vrus.push_back(std::move(v));
    }

    std::set<std::uint32_t> agent_ids;
    const auto& agents = root.array("agents");
    for (std::size_t i = 0; i < agents.size(); ++i) {
        const auto path = idx("agents", i);
        Obj o(agents[i], path,
              {"id", "kind", "position", "heading", "velocity", "join_s", "leave_s", "sensor", "network"});
        AgentSpec a;
        a.id = AgentId{o.id("id")};
        require(agent_ids.insert(a.id.value).second, o.at("id"),
                "duplicate agent id " + std::to_string(a.id.value));
        auto kind = parse_agent_kind(o.string("kind"));
        require(kind.has_value(), o.at("kind"), "unknown agent kind");
        a.kind = *kind;
        if (a.kind != AgentKind::SmartDevice) a.position = o.vec2("position");
        a.heading = wrap_angle(o.number("heading", 0.0));
        a.velocity = o.vec2("velocity", Vec2::Zero());
        a.join_s = o.number("join_s", 0.0);
        a.leave_s = o.opt_number("leave_s");
        require(a.join_s >= 0.0, o.at("join_s"), "must be >= 0");
        if (a.leave_s) require(*a.leave_s > a.join_s, o.at("leave_s"), "must be after join_s");
        a.sensor = o.has("sensor") ? parse_sensor(o.raw("sensor"), o.at("sensor"), a.kind)
                                   : SensorParams{};
        if (a.kind == AgentKind::SmartDevice) {
            require(o.has("sensor"), o.at("sensor"), "smart devices need a carrier VRU");
            require(vru_ids.contains(a.sensor.carrier->value), o.at("sensor.vru_id"), "unknown vru");
        }
        if (o.has("network")) a.link = parse_link(o.raw("network"), o.at("network"));
        sc.agents.push_back(a);
    }
    int egos = 0;
    for (const auto& a : sc.agents) egos += a.kind == AgentKind::EgoVehicle ? 1 : 0;
    require(egos <= 1, "agents", "at most one ego-vehicle");

    if (root.has("obstacles")) {
        const auto& obs = root.array("obstacles");
        for (std::size_t i = 0; i < obs.size(); ++i) {
            const auto path = idx("obstacles", i);
            Obj o(obs[i], path, {"label", "rect", "segment"});
            Obstacle ob;
            ob.label = o.string("label", "obstacle");
            require(o.has("rect") != o.has("segment"), path, "exactly one of rect or segment");
            if (o.has("rect")) {
                const auto& r = o.raw("rect");
                require(r.is_array() && r.size() == 4, o.at("rect"), "expected [xmin, ymin, xmax, ymax]");
                for (const auto& c : r) require(c.is_number(), o.at("rect"), "expected numbers");
                ob.shape = Obstacle::Shape::Rect;
                ob.a = Vec2(r[0].get<double>(), r[1].get<double>());
                ob.b = Vec2(r[2].get<double>(), r[3].get<double>());
                require(ob.b.x() > ob.a.x() && ob.b.y() > ob.a.y(), o.at("rect"), "degenerate rectangle");
            } else {
                const auto& s = o.raw("segment");
                require(s.is_array() && s.size() == 2, o.at("segment"), "expected [[x, y], [x, y]]");
                ob.shape = Obstacle::Shape::Segment;
                ob.a = Obj::to_vec2(s[0], o.at("segment"));
                ob.b = Obj::to_vec2(s[1], o.at("segment"));
                require((ob.b - ob.a).norm() > 0.0, o.at("segment"), "degenerate segment");
            }
            sc.obstacles.push_back(ob);
        }
    }

    if (root.has("conflict")) {
        Obj o(root.raw("conflict"), "conflict", {"point", "vru_id", "radius_m", "corridor_m", "alert_ttc_s"});
        ConflictSpec c;
        c.point = o.vec2("point");
        if (o.has("vru_id")) {
            c.vru = VruId{o.id("vru_id")};
            require(vru_ids.contains(c.vru->value), o.at("vru_id"), "unknown vru");
        }
        c.radius_m = o.number("radius_m", c.radius_m);
        c.corridor_m = o.number("corridor_m", c.corridor_m);
        c.alert_ttc_s = o.number("alert_ttc_s", c.alert_ttc_s);
        require(c.radius_m > 0.0, o.at("radius_m"), "must be > 0");
        sc.conflict = c;
    }

    if (root.has("network")) sc.network = parse_network(root.raw("network"), "network");

    if (root.has("metrics")) {
        Obj o(root.raw("metrics"), "metrics", {"warmup_s"});
        sc.warmup_s = o.number("warmup_s", sc.warmup_s);
    }
    return sc;
}

Scenario load_scenario(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ScenarioError(file.string(), "cannot open scenario file");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ScenarioError(file.string(), std::string("parse error: ") + e.what());
    }
    return build_scenario(doc);
}

}  // namespace vruco
