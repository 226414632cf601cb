#include "vruco/poly_approx.hpp"

#include <algorithm>
#include <cmath>

namespace vruco {

double PolyFit::evaluate(double t, int order) const {
    if (order < 0) throw MalformedInput("derivative order must be >= 0");
    const double u = (t - anchor) / scale;
    const int n = static_cast<int>(monomial.size());
    double acc = 0.0;
    // Horner on the differentiated polynomial
    for (int k = n - 1; k >= order; --k) {
        double falling = 1.0;
        for (int j = 0; j < order; ++j) falling *= static_cast<double>(k - j);
        acc = acc * u + monomial[static_cast<std::size_t>(k)] * falling;
    }
    return acc / std::pow(scale, order);
}

double ApproxWindow::decay(double age, double half_life) { return std::exp2(-age / half_life); }

ApproxWindow::ApproxWindow(WindowParams params) : params_(params) {
    if (params_.degree < 0) throw MalformedInput("window degree must be >= 0");
    if (!(params_.span_s > 0.0)) throw MalformedInput("window span must be > 0");
    if (!(params_.half_life_s > 0.0)) throw MalformedInput("window half-life must be > 0");
}

std::optional<double> ApproxWindow::latest_time() const {
    if (samples_.empty()) return std::nullopt;
    return samples_.back().time;
}

void ApproxWindow::evict_before(double cutoff) {
    while (!samples_.empty() && samples_.front().time <= cutoff) {
        samples_.pop_front();
        ++evicted_;
    }
}

void ApproxWindow::insert(const Sample& s) {
    if (!std::isfinite(s.time) || !std::isfinite(s.value) || !std::isfinite(s.weight)) {
        throw MalformedInput("sample must be finite");
    }
    if (s.weight < 0.0) throw MalformedInput("sample weight must be >= 0");

    if (!samples_.empty() && s.time <= samples_.back().time - params_.span_s) {
        ++stale_;
        return;
    }
    ++inserted_;
    if (s.weight == 0.0) return;
    cache_.reset();

    if (samples_.empty() || s.time >= samples_.back().time) {
        samples_.push_back(s);
        evict_before(s.time - params_.span_s);
        return;
    }
    ++out_of_order_;
    const auto pos = std::upper_bound(samples_.begin(), samples_.end(), s.time,
                                      [](double t, const Sample& x) { return t < x.time; });
    samples_.insert(pos, s);
}

std::size_t ApproxWindow::distinct_times() const {
    std::size_t n = 0;
    double last = 0.0;
    bool any = false;
    for (const auto& s : samples_) {
        if (s.weight <= 0.0) continue;
        if (!any || s.time != last) ++n;
        last = s.time;
        any = true;
    }
    return n;
}

bool ApproxWindow::well_posed() const {
    return distinct_times() >= static_cast<std::size_t>(params_.degree) + 1;
}

double ApproxWindow::fill() const {
    if (samples_.empty()) return 0.0;
    return std::min(1.0, (samples_.back().time - samples_.front().time) / params_.span_s);
}

PolyFit ApproxWindow::fit(std::optional<double> /*reference_time*/) const {
    if (cache_) return *cache_;
    if (!well_posed()) throw UnderdeterminedWindow("fewer distinct weighted sample times than degree + 1");

    const std::size_t n = static_cast<std::size_t>(params_.degree) + 1;
    const std::size_t m = samples_.size();
    PolyFit f;
    f.anchor = samples_.back().time;
    f.scale = params_.span_s;
    f.first_time = samples_.front().time;
    f.last_time = samples_.back().time;

    std::vector<double> u(m), e(m), y(m);
    for (std::size_t i = 0; i < m; ++i) {
        const auto& s = samples_[i];
        u[i] = (s.time - f.anchor) / f.scale;
        e[i] = s.weight * decay(f.anchor - s.time, params_.half_life_s);
        y[i] = s.value;
    }

    // phi_{k+1} = (u - a_k) phi_k - b_k phi_{k-1}, tracked both as values at
    // the samples and as monomial coefficients in u.
    std::vector<double> prev(m, 0.0), cur(m, 1.0), next(m);
    std::vector<double> prev_c(n, 0.0), cur_c(n, 0.0);
    cur_c[0] = 1.0;
    double prev_norm = 1.0;
    std::vector<double> resid = y;
    f.monomial.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        double norm = 0.0, proj = 0.0, moment = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double ep = e[i] * cur[i];
            norm += ep * cur[i];
            proj += ep * resid[i];
            moment += ep * cur[i] * u[i];
        }
        if (!(norm > 0.0) || !std::isfinite(norm)) throw UnderdeterminedWindow("rank-deficient window");
        const double c = proj / norm;
        for (std::size_t i = 0; i < m; ++i) resid[i] -= c * cur[i];
        f.orthogonal.push_back(c);
        f.basis.push_back(cur_c);
        for (std::size_t j = 0; j < n; ++j) f.monomial[j] += c * cur_c[j];
        if (k + 1 == n) break;

        const double a = moment / norm;
        const double b = k == 0 ? 0.0 : norm / prev_norm;
        for (std::size_t i = 0; i < m; ++i) next[i] = (u[i] - a) * cur[i] - b * prev[i];
        std::vector<double> next_c(n, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            next_c[j] = -a * cur_c[j] - b * prev_c[j] + (j > 0 ? cur_c[j - 1] : 0.0);
        }
        prev.swap(cur);
        cur.swap(next);
        prev_c = std::move(cur_c);
        cur_c = std::move(next_c);
        prev_norm = norm;
    }

    double wsum = 0.0;
    double rsum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double r = y[i] - f.evaluate(samples_[i].time, 0);
        wsum += e[i];
        rsum += e[i] * r * r;
    }
    f.residual_rms = wsum > 0.0 ? std::sqrt(rsum / wsum) : 0.0;
    cache_ = f;
    return f;
}

Evaluation ApproxWindow::evaluate(double t, int order) const {
    if (order < 0 || order > params_.degree) throw MalformedInput("derivative order out of range");
    const auto& f = fit();
    const bool outside = t > f.last_time || t < f.first_time;
    return {f.evaluate(t, order), outside};
}

}  // namespace vruco
