// Independent reference computations used by the unit and acceptance tests.
// Nothing here shares code with the library implementations it checks.
#pragma once

#include "vruco/core.hpp"
#include "vruco/poly_approx.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace oracle {

/// Weighted least squares by direct normal-equation solve, in extended
/// precision, in raw monomials
/// of (t - center). Returns coefficients c with P(t) = sum c_k (t - center)^k.
inline Eigen::VectorXd batch_wls(const std::vector<vruco::Sample>& samples, int degree, double center,
                                 double t_ref, double half_life) {
    using LD = long double;
    using MatL = Eigen::Matrix<LD, Eigen::Dynamic, Eigen::Dynamic>;
    using VecL = Eigen::Matrix<LD, Eigen::Dynamic, 1>;
    const int n = degree + 1;
    MatL A = MatL::Zero(n, n);
    VecL b = VecL::Zero(n);
    for (const auto& s : samples) {
        const LD w = static_cast<LD>(s.weight) * std::pow(2.0L, -(static_cast<LD>(t_ref) - s.time) / half_life);
        VecL phi(n);
        for (int k = 0; k < n; ++k) phi(k) = std::pow(static_cast<LD>(s.time) - center, k);
        A += w * phi * phi.transpose();
        b += w * static_cast<LD>(s.value) * phi;
    }
    const VecL x = A.colPivHouseholderQr().solve(b);
    return x.cast<double>();
}

/// Coefficients of a fitted polynomial about `center` in units of `scale`:
/// a_k = P^(k)(center) * scale^k / k!.
inline Eigen::VectorXd canonical(const vruco::PolyFit& f, int degree, double center, double scale) {
    Eigen::VectorXd a(degree + 1);
    double fact = 1.0;
    for (int k = 0; k <= degree; ++k) {
        if (k > 0) fact *= k;
        a(k) = f.evaluate(center, k) * std::pow(scale, k) / fact;
    }
    return a;
}

/// Oracle coefficients re-expressed in the same units as canonical().
inline Eigen::VectorXd scaled(const Eigen::VectorXd& c, double scale) {
    Eigen::VectorXd a = c;
    for (int k = 0; k < c.size(); ++k) a(k) *= std::pow(scale, k);
    return a;
}

/// Normwise relative difference.
inline double rel_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double den = std::max({a.norm(), b.norm(), 1e-300});
    return (a - b).norm() / den;
}

inline double eval_poly(const Eigen::VectorXd& c, double center, double t) {
    double v = 0.0;
    for (int k = static_cast<int>(c.size()) - 1; k >= 0; --k) v = v * (t - center) + c(k);
    return v;
}

/// Trapezoidal integral of f over [a, b] with step h.
inline double trapezoid(const std::function<double(double)>& f, double a, double b, double h) {
    const int n = static_cast<int>(std::ceil((b - a) / h));
    const double dh = (b - a) / n;
    double s = 0.5 * (f(a) + f(b));
    for (int i = 1; i < n; ++i) s += f(a + i * dh);
    return s * dh;
}

/// Trace of P(omega) = (omega Pa^-1 + (1 - omega) Pb^-1)^-1.
template <typename M>
double ci_trace(const M& Pa, const M& Pb, double omega) {
    const M info = omega * Pa.inverse() + (1.0 - omega) * Pb.inverse();
    return info.inverse().trace();
}

/// Minimum of ci_trace over a uniform omega grid.
template <typename M>
double ci_trace_sweep(const M& Pa, const M& Pb, double step = 1e-3) {
    double best = std::numeric_limits<double>::infinity();
    const int n = static_cast<int>(std::round(1.0 / step));
    for (int i = 0; i <= n; ++i) best = std::min(best, ci_trace(Pa, Pb, i * step));
    return best;
}

/// Random symmetric positive definite matrix with eigenvalues in [lo, hi].
template <int N, typename Gen>
Eigen::Matrix<double, N, N> random_spd(Gen& gen, double lo = 0.05, double hi = 10.0) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> ev(lo, hi);
    Eigen::Matrix<double, N, N> A;
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) A(i, j) = u(gen);
    Eigen::HouseholderQR<Eigen::Matrix<double, N, N>> qr(A);
    const Eigen::Matrix<double, N, N> Q = qr.householderQ();
    Eigen::Matrix<double, N, 1> d;
    for (int i = 0; i < N; ++i) d(i) = ev(gen);
    Eigen::Matrix<double, N, N> S = Q * d.asDiagonal() * Q.transpose();
    return 0.5 * (S + S.transpose());
}

inline bool rel_close(double a, double b, double rel, double abs_floor = 1e-12) {
    return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
}

}  // namespace oracle
