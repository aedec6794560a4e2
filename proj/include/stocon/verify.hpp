#pragma once

// Monte-Carlo estimation of incremental moment decay.
//
// A decay estimate drives two trajectories per initial pair with ONE shared
// noise path (incremental stability compares solutions under a common
// realization), averages the pth power of their distance over paths, and fits
// log E[d^p] against the step index by least squares.  The fitted per-step
// factor of the pth moment is exp(slope); the reported rate is its pth root.
//
// Estimates are normalized by the initial separation, so the fitted prefactor
// is directly comparable across pairs of different scales.  Observer-error
// estimation reports the raw mean squared error instead; a zero initial error
// is a valid input there and yields an all-zero report.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "matrix.hpp"
#include "process.hpp"
#include "synth.hpp"
#include "sysmodel.hpp"

namespace stocon {

struct VerificationReport {
    int p = 2;
    bool metric_distance = false;  // constant-metric norm instead of Euclidean
    int horizon = 0;
    std::size_t n_pairs = 0;
    std::size_t n_paths = 0;
    std::uint64_t seed = 0;
    int fit_start = 2;  // transient steps excluded from the regression

    std::vector<double> estimates;  // mean d^p at k = 0..horizon
    std::vector<double> stderrs;    // batch-means standard errors
    std::vector<int> fit_steps;     // steps that entered the regression

    bool fit_resolved = false;  // at least two steps rose above the noise floor
    double lambda_hat = 0.0;    // exp(slope / p)
    double a_hat = 0.0;         // exp(intercept / p)
    double moment_rate = 0.0;   // exp(slope), per-step factor of the pth moment
    double moment_rate_se = 0.0;
};

namespace detail {

/// Block size for batch-means standard errors.  Runs shorter than two blocks
/// fall back to per-path means.
inline constexpr std::size_t batch_block = 100;

struct DistanceFn {
    std::optional<Mat> weight;  // Cholesky factor L^T of the metric

    explicit DistanceFn(const std::optional<SymMatrix>& metric, std::size_t dim) {
        if (!metric) return;
        if (metric->dim() != dim)
            throw DimensionMismatch("decay estimate: metric dimension mismatch");
        auto l = chol(*metric, 1e-12);
        if (!l) throw NotPositiveDefinite("decay estimate: metric not positive definite");
        weight = l->T();
    }

    [[nodiscard]] double operator()(const Vec& a, const Vec& b) const {
        Vec diff(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
        if (weight) diff = *weight * diff;
        double s = 0.0;
        for (double v : diff) s += v * v;
        return std::sqrt(s);
    }
};

/// Mean, per-k, of per-path observations laid out as obs[path][k], plus
/// batch-means standard errors.
struct MomentCurve {
    std::vector<double> mean;
    std::vector<double> se;
};

inline MomentCurve batch_mean_curve(const std::vector<std::vector<double>>& obs) {
    const std::size_t n = obs.size();
    const std::size_t len = obs.front().size();
    MomentCurve curve;
    curve.mean.assign(len, 0.0);
    curve.se.assign(len, 0.0);
    for (const auto& row : obs)
        for (std::size_t k = 0; k < len; ++k) curve.mean[k] += row[k];
    for (double& v : curve.mean) v /= double(n);

    const std::size_t block = n >= 2 * batch_block ? batch_block : 1;
    const std::size_t nb = n / block;
    if (nb < 2) return curve;
    for (std::size_t k = 0; k < len; ++k) {
        double var = 0.0;
        for (std::size_t b = 0; b < nb; ++b) {
            double m = 0.0;
            for (std::size_t r = b * block; r < (b + 1) * block; ++r) m += obs[r][k];
            m /= double(block);
            const double dev = m - curve.mean[k];
            var += dev * dev;
        }
        curve.se[k] = std::sqrt(var / (double(nb) * double(nb - 1)));
    }
    return curve;
}

struct LineFit {
    double slope = 0.0, intercept = 0.0;
    bool ok = false;
};

inline LineFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys) {
    LineFit f;
    const std::size_t m = xs.size();
    if (m < 2) return f;
    double sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        sx += xs[i];
        sy += ys[i];
    }
    const double mx = sx / double(m), my = sy / double(m);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if (sxx == 0.0) return f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.ok = true;
    return f;
}

/// Fill the regression part of a report from its estimate curve.  The fit
/// skips the first fit_start steps and uses only steps whose estimate clears
/// ten standard errors.  The rate uncertainty comes from refitting per batch
/// when enough full batches exist, else from the residual scatter.
inline void fit_report(VerificationReport& rep,
                       const std::vector<std::vector<double>>& obs) {
    rep.fit_steps.clear();
    for (int k = rep.fit_start; k <= rep.horizon; ++k) {
        const double est = rep.estimates[std::size_t(k)];
        if (est > 0.0 && est > 10.0 * rep.stderrs[std::size_t(k)])
            rep.fit_steps.push_back(k);
    }
    std::vector<double> xs, ys;
    for (int k : rep.fit_steps) {
        xs.push_back(double(k));
        ys.push_back(std::log(rep.estimates[std::size_t(k)]));
    }
    LineFit fit = fit_line(xs, ys);
    if (!fit.ok) return;
    rep.fit_resolved = true;
    rep.lambda_hat = std::exp(fit.slope / double(rep.p));
    rep.a_hat = std::exp(fit.intercept / double(rep.p));
    rep.moment_rate = std::exp(fit.slope);

    const std::size_t n = obs.size();
    const std::size_t block = n >= 2 * batch_block ? batch_block : 1;
    const std::size_t nb = n / block;
    std::vector<double> batch_rates;
    for (std::size_t b = 0; b < nb && block > 1; ++b) {
        std::vector<double> bys;
        std::vector<double> bxs;
        for (std::size_t i = 0; i < rep.fit_steps.size(); ++i) {
            const std::size_t k = std::size_t(rep.fit_steps[i]);
            double m = 0.0;
            for (std::size_t r = b * block; r < (b + 1) * block; ++r) m += obs[r][k];
            m /= double(block);
            if (m <= 0.0) continue;
            bxs.push_back(double(rep.fit_steps[i]));
            bys.push_back(std::log(m));
        }
        LineFit bf = fit_line(bxs, bys);
        if (bf.ok) batch_rates.push_back(std::exp(bf.slope));
    }
    if (batch_rates.size() >= 2) {
        double m = 0.0;
        for (double r : batch_rates) m += r;
        m /= double(batch_rates.size());
        double var = 0.0;
        for (double r : batch_rates) var += (r - m) * (r - m);
        var /= double(batch_rates.size() - 1);
        rep.moment_rate_se = std::sqrt(var / double(batch_rates.size()));
    } else if (xs.size() > 2) {
        double rss = 0.0, sxx = 0.0, mx = 0.0;
        for (double x : xs) mx += x;
        mx /= double(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double r = ys[i] - fit.intercept - fit.slope * xs[i];
            rss += r * r;
            sxx += (xs[i] - mx) * (xs[i] - mx);
        }
        const double slope_se = std::sqrt(rss / double(xs.size() - 2) / sxx);
        rep.moment_rate_se = rep.moment_rate * slope_se;
    }
}

} // namespace detail

/// Estimate the decay rate of E[d^p(x'_k, x''_k)] under common noise paths.
/// Estimates are normalized per pair by the initial distance; pairs that start
/// at distance zero stay zero under a shared path and are excluded.
inline VerificationReport estimate_decay(const SystemModel& sys, const ProcessModel& proc,
                                         const std::vector<std::pair<Vec, Vec>>& pairs,
                                         int p, const std::optional<SymMatrix>& metric,
                                         int horizon, std::size_t n_paths,
                                         std::uint64_t seed,
                                         std::optional<int> initial_mode = std::nullopt) {
    if (p != 1 && p != 2) throw ShapeError("estimate_decay: moment order must be 1 or 2");
    if (horizon < 5) throw ShapeError("estimate_decay: horizon must be at least 5");
    if (pairs.empty()) throw ShapeError("estimate_decay: no initial pairs");
    if (n_paths < 1) throw ShapeError("estimate_decay: need at least one path");
    for (const auto& [a, b] : pairs)
        if (a.size() != sys.dim || b.size() != sys.dim)
            throw DimensionMismatch("estimate_decay: pair dimension mismatch");

    detail::DistanceFn dist(metric, sys.dim);

    std::vector<std::size_t> live;
    for (std::size_t i = 0; i < pairs.size(); ++i)
        if (dist(pairs[i].first, pairs[i].second) > 0.0) live.push_back(i);
    if (live.empty())
        throw DegeneratePairs("estimate_decay: every pair starts at distance zero");

    std::vector<std::vector<double>> obs(n_paths);
    for (std::size_t r = 0; r < n_paths; ++r) {
        ProcessPath path =
            sample_path(proc, 0, std::size_t(horizon), seed, r, initial_mode);
        std::vector<double> acc(std::size_t(horizon) + 1, 0.0);
        for (std::size_t i : live) {
            Trajectory one = simulate(sys, pairs[i].first, path);
            Trajectory two = simulate(sys, pairs[i].second, path);
            const double d0 = dist(one.states[0], two.states[0]);
            const double scale = std::pow(d0, double(p));
            for (int k = 0; k <= horizon; ++k) {
                const double d = dist(one.states[std::size_t(k)], two.states[std::size_t(k)]);
                acc[std::size_t(k)] += std::pow(d, double(p)) / scale;
            }
        }
        for (double& v : acc) v /= double(live.size());
        obs[r] = std::move(acc);
    }

    VerificationReport rep;
    rep.p = p;
    rep.metric_distance = metric.has_value();
    rep.horizon = horizon;
    rep.n_pairs = live.size();
    rep.n_paths = n_paths;
    rep.seed = seed;
    auto curve = detail::batch_mean_curve(obs);
    rep.estimates = std::move(curve.mean);
    rep.stderrs = std::move(curve.se);
    detail::fit_report(rep, obs);
    return rep;
}

/// Estimate the decay of the raw mean squared observer error on common mode
/// paths.  The observer propagates the plant model at its own state and
/// corrects with the innovation against the measured plant output.
inline VerificationReport estimate_observer_error(const SystemModel& sys,
                                                  const FiniteMarkov& chain,
                                                  const Mat& c_row,
                                                  const ObserverDesign& observer,
                                                  const Vec& x0, const Vec& xhat0,
                                                  int horizon, std::size_t n_paths,
                                                  std::uint64_t seed,
                                                  int initial_mode = 1) {
    if (horizon < 5) throw ShapeError("estimate_observer_error: horizon must be at least 5");
    if (n_paths < 1) throw ShapeError("estimate_observer_error: need at least one path");
    if (x0.size() != sys.dim || xhat0.size() != sys.dim)
        throw DimensionMismatch("estimate_observer_error: state dimension mismatch");
    if (c_row.rows != 1 || c_row.cols != sys.dim)
        throw DimensionMismatch("estimate_observer_error: output map dimension mismatch");
    if (observer.gains.empty() ||
        (!observer.common && observer.gains.size() != chain.modes))
        throw ModeMismatch("estimate_observer_error: one gain per mode required");
    for (const Vec& h : observer.gains)
        if (h.size() != sys.dim)
            throw DimensionMismatch("estimate_observer_error: gain dimension mismatch");

    auto gain = [&](int mode) -> const Vec& {
        return observer.common ? observer.gains[0] : observer.gains[std::size_t(mode - 1)];
    };

    std::vector<std::vector<double>> obs(n_paths);
    for (std::size_t r = 0; r < n_paths; ++r) {
        ProcessPath path =
            sample_path(chain, 0, std::size_t(horizon), seed, r, initial_mode);
        std::vector<double> acc(std::size_t(horizon) + 1, 0.0);
        Vec x = x0, xhat = xhat0;
        for (int k = 0; k <= horizon; ++k) {
            double e2 = 0.0;
            for (std::size_t i = 0; i < sys.dim; ++i)
                e2 += (xhat[i] - x[i]) * (xhat[i] - x[i]);
            acc[std::size_t(k)] = e2;
            if (k == horizon) break;
            const int mode = path.mode(std::size_t(k));
            double innov = 0.0;
            for (std::size_t i = 0; i < sys.dim; ++i)
                innov += c_row(0, i) * (xhat[i] - x[i]);
            Vec xn = sys.step(k, x, path.at(std::size_t(k)));
            Vec xhn = sys.step(k, xhat, path.at(std::size_t(k)));
            const Vec& h = gain(mode);
            for (std::size_t i = 0; i < sys.dim; ++i) xhn[i] += h[i] * innov;
            for (double v : xhn)
                if (!std::isfinite(v) || std::abs(v) > divergence_bound)
                    throw Diverged(k + 1, "observer diverged at step " + std::to_string(k + 1));
            x = std::move(xn);
            xhat = std::move(xhn);
        }
        obs[r] = std::move(acc);
    }

    VerificationReport rep;
    rep.p = 2;
    rep.horizon = horizon;
    rep.n_pairs = 1;
    rep.n_paths = n_paths;
    rep.seed = seed;
    auto curve = detail::batch_mean_curve(obs);
    rep.estimates = std::move(curve.mean);
    rep.stderrs = std::move(curve.se);
    detail::fit_report(rep, obs);
    return rep;
}

} // namespace stocon
