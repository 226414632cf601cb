// Shared value types, errors and probability helpers.
#pragma once

#include <Eigen/Dense>

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vruco {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MalformedInput : public Error {
public:
    using Error::Error;
};

class DegenerateWeights : public Error {
public:
    using Error::Error;
};

class OutOfRange : public Error {
public:
    using Error::Error;
};

/// Raised when a filter or fusion step produces a state that violates its
/// own invariants. Aborts a run.
class InternalConsistencyError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Identifiers and kinds

struct AgentId {
    std::uint32_t value = 0;
    auto operator<=>(const AgentId&) const = default;
};

struct VruId {
    std::uint32_t value = 0;
    auto operator<=>(const VruId&) const = default;
};

enum class AgentKind { EgoVehicle, Vehicle, Infrastructure, SmartDevice };
enum class VruKind { Pedestrian, Cyclist };

std::string_view to_string(AgentKind k);
std::string_view to_string(VruKind k);
std::optional<AgentKind> parse_agent_kind(std::string_view s);
std::optional<VruKind> parse_vru_kind(std::string_view s);

/// Simulation clock value in seconds; always finite and non-negative.
class Timestamp {
public:
    Timestamp() = default;
    explicit Timestamp(double seconds);
    double seconds() const { return t_; }
    auto operator<=>(const Timestamp&) const = default;

private:
    double t_ = 0.0;
};

// ---------------------------------------------------------------------------
// Kinematics

struct KinematicState {
    Vec2 position = Vec2::Zero();
    Vec2 velocity = Vec2::Zero();
    Vec2 acceleration = Vec2::Zero();
    double heading = 0.0;  // (-pi, pi]
};

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

// ---------------------------------------------------------------------------
// Movement primitives

enum class MovementPrimitive {
    Waiting,
    Starting,
    Walking,
    Pedaling,
    Stopping,
    Acceleration,
    Deceleration,
    Turning,
};

std::string_view to_string(MovementPrimitive p);
std::optional<MovementPrimitive> parse_primitive(std::string_view s);

/// Ordered primitive set for a VRU kind. Distributions index into this.
std::span<const MovementPrimitive> primitive_set(VruKind kind);
std::optional<std::size_t> primitive_index(VruKind kind, MovementPrimitive p);
bool is_moving(MovementPrimitive p);

// ---------------------------------------------------------------------------
// Second-order distribution

/// Probability vector over a kind's primitive set plus an evidence mass.
/// Read as Dirichlet(alpha = s * p).
class SecondOrderDistribution {
public:
    SecondOrderDistribution(VruKind kind, std::vector<double> p, double evidence);

    static SecondOrderDistribution uniform(VruKind kind, double evidence);

    VruKind kind() const { return kind_; }
    const std::vector<double>& p() const { return p_; }
    double evidence() const { return s_; }
    std::size_t size() const { return p_.size(); }
    double prob(MovementPrimitive prim) const;
    MovementPrimitive argmax() const;

    /// Evidence vectors this distribution was pooled from; empty for a direct
    /// classifier output.
    const std::vector<std::vector<double>>& pooled_terms() const { return terms_; }
    void set_pooled_terms(std::vector<std::vector<double>> terms) { terms_ = std::move(terms); }

private:
    VruKind kind_;
    std::vector<double> p_;
    double s_;
    std::vector<std::vector<double>> terms_;
};

struct MeanAndUncertainty {
    std::vector<double> mean;
    double uncertainty;  // in (0, 1]
};

/// u = K / (s + K); tends to 1 without evidence and to 0 with unbounded evidence.
MeanAndUncertainty second_order_mean_and_uncertainty(const SecondOrderDistribution& d);

/// w / sum(w). Throws DegenerateWeights on negative entries or zero sum.
std::vector<double> normalize_distribution(std::span<const double> w);

// ---------------------------------------------------------------------------
// Covariance checks

/// Returns the violated check ("not symmetric" / "not PSD"), or nullopt when
/// the matrix is a valid covariance. Throws MalformedInput for non-square or
/// non-finite input.
std::optional<std::string> validate_covariance(const Eigen::MatrixXd& m);

/// Throws InternalConsistencyError if `m` is not a valid covariance.
void require_covariance(const Eigen::MatrixXd& m, std::string_view what);

template <typename Derived>
Eigen::Matrix<double, Derived::RowsAtCompileTime, Derived::ColsAtCompileTime>
symmetrized(const Eigen::MatrixBase<Derived>& m) {
    return 0.5 * (m + m.transpose());
}

}  // namespace vruco
