#include "vruco/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

namespace vruco {

std::string_view to_string(AgentKind k) {
    switch (k) {
    case AgentKind::EgoVehicle: return "ego-vehicle";
    case AgentKind::Vehicle: return "vehicle";
    case AgentKind::Infrastructure: return "infrastructure";
    case AgentKind::SmartDevice: return "smart-device";
    }
    return "?";
}

std::string_view to_string(VruKind k) {
    return k == VruKind::Pedestrian ? "pedestrian" : "cyclist";
}

std::optional<AgentKind> parse_agent_kind(std::string_view s) {
    for (auto k : {AgentKind::EgoVehicle, AgentKind::Vehicle, AgentKind::Infrastructure,
                   AgentKind::SmartDevice}) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

std::optional<VruKind> parse_vru_kind(std::string_view s) {
    if (s == "pedestrian") return VruKind::Pedestrian;
    if (s == "cyclist") return VruKind::Cyclist;
    return std::nullopt;
}

Timestamp::Timestamp(double seconds) : t_(seconds) {
    if (!std::isfinite(seconds) || seconds < 0.0) {
        throw MalformedInput("timestamp must be finite and non-negative");
    }
}

double wrap_angle(double a) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    a = std::fmod(a, two_pi);
    if (a <= -std::numbers::pi) a += two_pi;
    if (a > std::numbers::pi) a -= two_pi;
    return a;
}

// ---------------------------------------------------------------------------

std::string_view to_string(MovementPrimitive p) {
    switch (p) {
    case MovementPrimitive::Waiting: return "waiting";
    case MovementPrimitive::Starting: return "starting";
    case MovementPrimitive::Walking: return "walking";
    case MovementPrimitive::Pedaling: return "pedaling";
    case MovementPrimitive::Stopping: return "stopping";
    case MovementPrimitive::Acceleration: return "acceleration";
    case MovementPrimitive::Deceleration: return "deceleration";
    case MovementPrimitive::Turning: return "turning";
    }
    return "?";
}

std::optional<MovementPrimitive> parse_primitive(std::string_view s) {
    using enum MovementPrimitive;
    for (auto p : {Waiting, Starting, Walking, Pedaling, Stopping, Acceleration, Deceleration,
                   Turning}) {
        if (to_string(p) == s) return p;
    }
    // "bending" is treated as a direction change
    if (s == "bending") return Turning;
    return std::nullopt;
}

namespace {
using enum MovementPrimitive;
constexpr std::array kCyclistSet{Waiting,      Starting,     Stopping, Pedaling,
                                 Acceleration, Deceleration, Turning};
constexpr std::array kPedestrianSet{Waiting, Starting, Walking, Stopping, Turning};
}  // namespace

std::span<const MovementPrimitive> primitive_set(VruKind kind) {
    if (kind == VruKind::Cyclist) return kCyclistSet;
    return kPedestrianSet;
}

std::optional<std::size_t> primitive_index(VruKind kind, MovementPrimitive p) {
    auto set = primitive_set(kind);
    auto it = std::find(set.begin(), set.end(), p);
    if (it == set.end()) return std::nullopt;
    return static_cast<std::size_t>(it - set.begin());
}

bool is_moving(MovementPrimitive p) {
    return p != MovementPrimitive::Waiting && p != MovementPrimitive::Stopping;
}

// ---------------------------------------------------------------------------

SecondOrderDistribution::SecondOrderDistribution(VruKind kind, std::vector<double> p,
                                                 double evidence)
    : kind_(kind), p_(std::move(p)), s_(evidence) {
    if (p_.size() != primitive_set(kind_).size()) {
        throw MalformedInput("distribution size does not match the primitive set");
    }
    double sum = 0.0;
    for (double v : p_) {
        if (!std::isfinite(v) || v < 0.0) throw MalformedInput("negative or non-finite probability");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw MalformedInput("probabilities do not sum to 1");
    if (!std::isfinite(s_) || s_ <= 0.0) throw MalformedInput("evidence mass must be > 0");
}

SecondOrderDistribution SecondOrderDistribution::uniform(VruKind kind, double evidence) {
    const auto k = primitive_set(kind).size();
    return {kind, std::vector<double>(k, 1.0 / static_cast<double>(k)), evidence};
}

double SecondOrderDistribution::prob(MovementPrimitive prim) const {
    auto idx = primitive_index(kind_, prim);
    return idx ? p_[*idx] : 0.0;
}

MovementPrimitive SecondOrderDistribution::argmax() const {
    auto it = std::max_element(p_.begin(), p_.end());
    return primitive_set(kind_)[static_cast<std::size_t>(it - p_.begin())];
}

MeanAndUncertainty second_order_mean_and_uncertainty(const SecondOrderDistribution& d) {
    const double k = static_cast<double>(d.size());
    return {d.p(), k / (d.evidence() + k)};
}

std::vector<double> normalize_distribution(std::span<const double> w) {
    double sum = 0.0;
    for (double v : w) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw DegenerateWeights("negative or non-finite weight");
        sum += v;
    }
    if (sum <= 0.0) throw DegenerateWeights("weights sum to zero");
    std::vector<double> out(w.begin(), w.end());
    for (double& v : out) v /= sum;
    // pin the largest entry so the sum is 1 to within rounding of one term
    auto it = std::max_element(out.begin(), out.end());
    double rest = 0.0;
    for (auto j = out.begin(); j != out.end(); ++j) {
        if (j != it) rest += *j;
    }
    *it = 1.0 - rest;
    return out;
}

// ---------------------------------------------------------------------------

std::optional<std::string> validate_covariance(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols() || m.rows() == 0) throw MalformedInput("covariance must be square");
    if (!m.allFinite()) throw MalformedInput("covariance has non-finite entries");

    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) return "not symmetric";

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    const double floor = -1e-9 * std::abs(m.trace());
    if (es.eigenvalues().minCoeff() < floor) return "not PSD";
    return std::nullopt;
}

void require_covariance(const Eigen::MatrixXd& m, std::string_view what) {
    std::optional<std::string> v;
    try {
        v = validate_covariance(m);
    } catch (const MalformedInput& e) {
        v = e.what();
    }
    if (v) throw InternalConsistencyError(std::string(what) + ": " + *v);
}

}  // namespace vruco
