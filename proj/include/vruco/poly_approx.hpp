// Sliding-window weighted polynomial least squares.
//
// Samples are kept in time order; in-order inserts and evictions are O(1).
// The fit is built lazily from the stored samples with a three-term
// recurrence for the weighted discrete orthogonal polynomials in scaled time
// u = (t - latest) / span, and cached until the window changes. It depends
// only on the stored multiset, never on arrival order.
#pragma once

#include "vruco/core.hpp"

#include <cstddef>
#include <deque>
#include <optional>
#include <vector>

namespace vruco {

struct Sample {
    double time = 0.0;
    double value = 0.0;
    double weight = 1.0;
    AgentId source;
};

struct WindowParams {
    int degree = 2;
    double span_s = 2.0;
    double half_life_s = 1.0;
};

/// Raised when fewer than degree+1 distinct sample times carry positive weight
/// or the weighted design is rank deficient.
class UnderdeterminedWindow : public Error {
public:
    using Error::Error;
};

struct PolyFit {
    double anchor = 0.0;  // u = (t - anchor) / scale
    double scale = 1.0;
    std::vector<double> orthogonal;        // coefficients in the orthogonal basis
    std::vector<std::vector<double>> basis;  // basis[k] = monomial coefficients (in u) of phi_k
    std::vector<double> monomial;          // sum_k orthogonal[k] * basis[k]
    double residual_rms = 0.0;
    double first_time = 0.0;
    double last_time = 0.0;

    /// Polynomial (order 0) or its time derivatives (orders 1, 2, ...) at t.
    double evaluate(double t, int order = 0) const;
};

struct Evaluation {
    double value = 0.0;
    bool extrapolated = false;
};

class ApproxWindow {
public:
    explicit ApproxWindow(WindowParams params = {});

    /// Places the sample by timestamp. Samples at or before latest - span are
    /// discarded and counted; zero-weight samples are counted and dropped.
    void insert(const Sample& s);

    const WindowParams& params() const { return params_; }
    const std::deque<Sample>& samples() const { return samples_; }
    std::size_t size() const { return samples_.size(); }
    bool empty() const { return samples_.empty(); }
    std::optional<double> latest_time() const;

    std::size_t inserted() const { return inserted_; }
    std::size_t stale_discards() const { return stale_; }
    std::size_t evicted() const { return evicted_; }
    /// Inserts that landed before the latest stored sample.
    std::size_t out_of_order() const { return out_of_order_; }

    /// Number of distinct sample times with positive weight.
    std::size_t distinct_times() const;
    bool well_posed() const;
    /// Time covered by the stored samples as a fraction of the span.
    double fill() const;

    /// Fit minimizing sum w_i * 2^-((t_ref - t_i)/h) * (y_i - P(t_i))^2. The
    /// reference time only rescales all weights by a common factor, so it does
    /// not change the coefficients; it defaults to the latest sample time.
    PolyFit fit(std::optional<double> reference_time = std::nullopt) const;

    /// Evaluates the current fit. Throws UnderdeterminedWindow.
    Evaluation evaluate(double t, int order = 0) const;

    /// Effective weight of a sample of age `age` seconds.
    static double decay(double age, double half_life);

private:
    void evict_before(double cutoff);

    WindowParams params_;
    std::deque<Sample> samples_;
    std::size_t inserted_ = 0;
    std::size_t stale_ = 0;
    std::size_t evicted_ = 0;
    std::size_t out_of_order_ = 0;
    mutable std::optional<PolyFit> cache_;
};

}  // namespace vruco
