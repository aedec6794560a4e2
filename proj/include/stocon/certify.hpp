#pragma once

// Certificate checking for incremental exponential stability in expectation.
//
// A certificate carries a metric family (one matrix, one per mode, or a
// nearest-node table over states), bounds (c1, c2) tying the metric to a
// constant base metric, and a decay rate lambda.  The checkers evaluate the
// quadratic contraction inequality
//
//     E[ J(x,xi)^T P(next) J(x,xi) ]  <=  lambda^2 P(x)      (or P(x) - c^2 I)
//
// over a user-supplied state grid and report the worst eigenvalue margin.
// Expectations reduce exactly for finite-mode chains and affine-in-noise
// Jacobians; otherwise Gauss-Legendre or Monte Carlo quadrature applies.
// gramian_certificate builds the discounted variational Gramian along
// sampled trajectories and checks its one-step shift identity per path.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "matrix.hpp"
#include "process.hpp"
#include "rng.hpp"
#include "sysmodel.hpp"

namespace stocon {

// ---------------------------------------------------------------------------
// Metric families

struct ConstantMetric {
    SymMatrix p{1};
};

/// One matrix per mode; index 0 holds mode 1.
struct ModeDependentMetric {
    std::vector<SymMatrix> per_mode;
};

/// Piecewise-constant table: the metric at x is the matrix of the nearest
/// node, with no interpolation, so checked inequalities are literal at nodes.
struct StateGridMetric {
    std::vector<Vec> nodes;
    std::vector<SymMatrix> at_node;
};

using MetricFamily = std::variant<ConstantMetric, ModeDependentMetric, StateGridMetric>;

inline std::size_t metric_dim(const MetricFamily& m) {
    if (const auto* c = std::get_if<ConstantMetric>(&m)) return c->p.dim();
    if (const auto* md = std::get_if<ModeDependentMetric>(&m)) {
        if (md->per_mode.empty()) throw ShapeError("metric: no per-mode matrices");
        return md->per_mode.front().dim();
    }
    const auto& sg = std::get<StateGridMetric>(m);
    if (sg.at_node.empty()) throw ShapeError("metric: empty state table");
    return sg.at_node.front().dim();
}

/// Metric at a state; mode-dependent families have no state lookup.
inline const SymMatrix& metric_at(const MetricFamily& m, const Vec& x) {
    if (const auto* c = std::get_if<ConstantMetric>(&m)) return c->p;
    if (const auto* sg = std::get_if<StateGridMetric>(&m)) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < sg->nodes.size(); ++i) {
            const Vec& nd = sg->nodes[i];
            if (nd.size() != x.size()) throw DimensionMismatch("metric_at: node dimension");
            double d = 0.0;
            for (std::size_t j = 0; j < nd.size(); ++j) {
                double t = nd[j] - x[j];
                d += t * t;
            }
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        return sg->at_node[best];
    }
    throw ShapeError("metric_at: mode-dependent metric needs a mode, not a state");
}

inline const SymMatrix& metric_for_mode(const MetricFamily& m, int mode) {
    const auto* md = std::get_if<ModeDependentMetric>(&m);
    if (!md) throw ShapeError("metric_for_mode: metric is not mode-dependent");
    if (mode < 1 || std::size_t(mode) > md->per_mode.size())
        throw ModeOutOfRange("metric_for_mode: mode index");
    return md->per_mode[std::size_t(mode) - 1];
}

namespace detail {

inline void validate_metric_matrices(const MetricFamily& m) {
    auto check_one = [](const SymMatrix& p) {
        if (!p.full().finite()) throw InvalidMatrix("metric: non-finite entries");
        if (min_eig(p).value < 1e-10)
            throw NotPositiveDefinite("metric: matrix below the 1e-10 eigenvalue floor");
    };
    const std::size_t n = metric_dim(m);
    if (const auto* c = std::get_if<ConstantMetric>(&m)) {
        check_one(c->p);
    } else if (const auto* md = std::get_if<ModeDependentMetric>(&m)) {
        for (const auto& p : md->per_mode) {
            if (p.dim() != n) throw DimensionMismatch("metric: mixed matrix dimensions");
            check_one(p);
        }
    } else {
        const auto& sg = std::get<StateGridMetric>(m);
        if (sg.nodes.size() != sg.at_node.size())
            throw ShapeError("metric: node/matrix count mismatch");
        for (const auto& p : sg.at_node) {
            if (p.dim() != n) throw DimensionMismatch("metric: mixed matrix dimensions");
            check_one(p);
        }
        for (const auto& nd : sg.nodes)
            if (nd.size() != n) throw DimensionMismatch("metric: node dimension");
    }
}

inline void for_each_metric_matrix(const MetricFamily& m,
                                   const std::function<void(const SymMatrix&, std::size_t)>& f) {
    if (const auto* c = std::get_if<ConstantMetric>(&m)) {
        f(c->p, 0);
    } else if (const auto* md = std::get_if<ModeDependentMetric>(&m)) {
        for (std::size_t i = 0; i < md->per_mode.size(); ++i) f(md->per_mode[i], i);
    } else {
        const auto& sg = std::get<StateGridMetric>(m);
        for (std::size_t i = 0; i < sg.at_node.size(); ++i) f(sg.at_node[i], i);
    }
}

// Solve L Y = B with L lower triangular.
inline Mat tri_solve(const Mat& l, const Mat& b) {
    Mat y(b.rows, b.cols);
    for (std::size_t c = 0; c < b.cols; ++c)
        for (std::size_t i = 0; i < b.rows; ++i) {
            double s = b(i, c);
            for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y(k, c);
            y(i, c) = s / l(i, i);
        }
    return y;
}

/// Extreme generalized eigenvalues of (P, B), i.e. of B^{-1/2} P B^{-1/2}.
inline std::pair<double, double> gen_eig_range(const SymMatrix& p, const SymMatrix& base) {
    auto l = chol(base);
    if (!l) throw NotPositiveDefinite("gen_eig_range: base metric not positive definite");
    Mat a1 = tri_solve(*l, p.full());
    SymMatrix m(tri_solve(*l, a1.T()).T());
    EigenDecomp e = eigh(m);
    return {e.values.front(), e.values.back()};
}

} // namespace detail

// ---------------------------------------------------------------------------
// Certificates

/// Metric family with its decay rate and base-metric sandwich bounds
///   c1^2 * base <= P <= c2^2 * base   for every stored matrix P.
/// An absent base metric means the Euclidean one (identity).
struct Certificate {
    MetricFamily metric;
    double c1 = 1.0;
    double c2 = 1.0;
    double lambda = 0.5;
    std::optional<MetricFamily> base_metric;
};

inline void validate_certificate(const Certificate& cert) {
    if (!(cert.lambda > 0.0 && cert.lambda < 1.0))
        throw InvalidRate("certificate: lambda must lie in (0,1)");
    if (!(cert.c1 > 0.0)) throw ShapeError("certificate: c1 must be positive");
    if (!(cert.c2 >= cert.c1)) throw ShapeError("certificate: c2 must be at least c1");
    detail::validate_metric_matrices(cert.metric);

    const std::size_t n = metric_dim(cert.metric);
    if (cert.base_metric) {
        detail::validate_metric_matrices(*cert.base_metric);
        if (metric_dim(*cert.base_metric) != n)
            throw DimensionMismatch("certificate: base metric dimension");
        // The sandwich is only defined against a constant base; non-constant
        // bases are rejected by the checkers that need them.
        if (!std::holds_alternative<ConstantMetric>(*cert.base_metric)) return;
    }
    SymMatrix base = cert.base_metric
                         ? std::get<ConstantMetric>(*cert.base_metric).p
                         : SymMatrix(Mat::identity(n));
    const double tol = 1e-9 * (1.0 + base.full().frob());
    detail::for_each_metric_matrix(cert.metric, [&](const SymMatrix& p, std::size_t) {
        auto [lo, hi] = detail::gen_eig_range(p, base);
        if (lo < cert.c1 * cert.c1 - tol || hi > cert.c2 * cert.c2 + tol)
            throw ShapeError("certificate: metric violates the c1/c2 sandwich");
    });
}

/// Tightest (c1, c2) for which the sandwich holds, from the generalized
/// spectrum of the stored matrices against the base.
inline std::pair<double, double> derive_bounds(const MetricFamily& metric,
                                               const std::optional<MetricFamily>& base_metric = {}) {
    detail::validate_metric_matrices(metric);
    const std::size_t n = metric_dim(metric);
    SymMatrix base = SymMatrix(Mat::identity(n));
    if (base_metric) {
        if (!std::holds_alternative<ConstantMetric>(*base_metric))
            throw UnsupportedMetric("derive_bounds: base metric must be constant");
        base = std::get<ConstantMetric>(*base_metric).p;
    }
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    detail::for_each_metric_matrix(metric, [&](const SymMatrix& p, std::size_t) {
        auto [a, b] = detail::gen_eig_range(p, base);
        lo = std::min(lo, a);
        hi = std::max(hi, b);
    });
    // Backed off one part in 1e12 so the derived constants satisfy their own
    // non-strict sandwich under eigensolver rounding.
    double c1 = std::sqrt(std::max(lo, 1e-300)) * (1.0 - 1e-12);
    double c2 = std::max(std::sqrt(hi) * (1.0 + 1e-12), c1);
    return {c1, c2};
}

inline Certificate make_certificate(MetricFamily metric, double lambda,
                                    std::optional<MetricFamily> base_metric = {}) {
    Certificate cert;
    cert.metric = std::move(metric);
    cert.lambda = lambda;
    cert.base_metric = std::move(base_metric);
    auto [c1, c2] = derive_bounds(cert.metric, cert.base_metric);
    cert.c1 = c1;
    cert.c2 = c2;
    validate_certificate(cert);
    return cert;
}

// ---------------------------------------------------------------------------
// Grids and reports

/// Axis-aligned box grid: nodes at lo + i*step per dimension, with the upper
/// endpoint always included.
struct GridSpec {
    Vec lo, hi, step;
};

inline std::vector<Vec> make_grid(const GridSpec& spec) {
    const std::size_t n = spec.lo.size();
    if (n == 0 || spec.hi.size() != n || spec.step.size() != n)
        throw ShapeError("make_grid: lo/hi/step sizes disagree");
    std::vector<std::vector<double>> axes(n);
    for (std::size_t d = 0; d < n; ++d) {
        const double lo = spec.lo[d], hi = spec.hi[d], st = spec.step[d];
        if (!(hi >= lo)) throw ShapeError("make_grid: hi below lo");
        if (hi == lo) {
            axes[d] = {lo};
            continue;
        }
        if (!(st > 0.0)) throw ShapeError("make_grid: step must be positive");
        const double span = hi - lo;
        auto count = std::size_t(std::floor(span / st + 1e-9)) + 1;
        if (count > 4'000'000) throw ShapeError("make_grid: more than 4e6 nodes");
        axes[d].reserve(count + 1);
        for (std::size_t i = 0; i < count; ++i) axes[d].push_back(lo + double(i) * st);
        if (axes[d].back() < hi - 1e-12 * (1.0 + std::abs(hi))) axes[d].push_back(hi);
    }
    std::size_t total = 1;
    for (const auto& ax : axes) {
        total *= ax.size();
        if (total > 4'000'000) throw ShapeError("make_grid: more than 4e6 nodes");
    }
    std::vector<Vec> grid;
    grid.reserve(total);
    Vec x(n);
    std::vector<std::size_t> idx(n, 0);
    for (std::size_t count = 0; count < total; ++count) {
        for (std::size_t d = 0; d < n; ++d) x[d] = axes[d][idx[d]];
        grid.push_back(x);
        for (std::size_t d = n; d-- > 0;) {
            if (++idx[d] < axes[d].size()) break;
            idx[d] = 0;
        }
    }
    return grid;
}

/// Worst-case result of a grid check; passed exactly when the worst margin
/// is nonnegative.
struct CheckReport {
    bool passed = false;
    double worst_margin = 0.0;
    Vec worst_state;
    std::optional<int> worst_mode;
    std::size_t points_checked = 0;
    std::optional<double> stderr_estimate;  // Monte Carlo reductions only
};

// ---------------------------------------------------------------------------
// Quadrature

struct Quadrature {
    enum class Kind { Exact, GaussLegendre, MonteCarlo };
    Kind kind = Kind::Exact;
    int nodes = 16;           // Gauss-Legendre
    int samples = 4096;       // Monte Carlo
    std::uint64_t seed = 20260821;

    static Quadrature exact() { return {}; }
    static Quadrature gauss(int n = 16) {
        Quadrature q;
        q.kind = Kind::GaussLegendre;
        q.nodes = n;
        return q;
    }
    static Quadrature mc(int n, std::uint64_t seed = 20260821) {
        Quadrature q;
        q.kind = Kind::MonteCarlo;
        q.samples = n;
        q.seed = seed;
        return q;
    }
};

/// Nodes and weights on [-1, 1]; weights sum to 2.  Newton iteration on the
/// Legendre recurrence.
inline std::vector<std::pair<double, double>> gauss_legendre_rule(int n) {
    if (n < 1) throw ShapeError("gauss_legendre_rule: need at least one node");
    std::vector<std::pair<double, double>> rule(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double x = std::cos(M_PI * (double(i) + 0.75) / (double(n) + 0.5));
        double dp = 1.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int j = 2; j <= n; ++j) {
                double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / double(j);
                p0 = p1;
                p1 = p2;
            }
            double pn = (n == 1) ? x : p1;
            double pm = (n == 1) ? 1.0 : p0;
            dp = double(n) * (x * pn - pm) / (x * x - 1.0);
            double delta = pn / dp;
            x -= delta;
            if (std::abs(delta) < 1e-15) break;
        }
        rule[std::size_t(i)] = {x, 2.0 / ((1.0 - x * x) * dp * dp)};
    }
    return rule;
}

namespace detail {

/// J(x,xi)^T P(f(x,xi)) J(x,xi) for one noise value.
inline SymMatrix pullback(const SystemModel& sys, const MetricFamily& metric, int k,
                          const Vec& x, const NoiseSample& xi) {
    Mat j = sys.jac(k, x, xi);
    if (!j.finite()) throw InvalidMatrix("pullback: non-finite Jacobian");
    Vec next = sys.step(k, x, xi);
    if (!all_finite(next)) throw NonFiniteSample("pullback: non-finite successor state");
    const SymMatrix& p = std::holds_alternative<ModeDependentMetric>(metric)
                             ? metric_for_mode(metric, noise_mode(xi))
                             : metric_at(metric, next);
    return congruence(p, j);
}

/// E[J^T P(next) J] at x for an i.i.d. scalar process, honoring the requested
/// quadrature; fills samples_out (Monte Carlo only) when non-null.
inline SymMatrix iid_expected_pullback(const SystemModel& sys, const ProcessModel& proc,
                                       const MetricFamily& metric, const Vec& x,
                                       const Quadrature& quad, std::uint64_t stream,
                                       std::vector<SymMatrix>* samples_out) {
    switch (quad.kind) {
        case Quadrature::Kind::Exact: {
            if (!sys.affine_jac)
                throw QuadratureUnsupported(
                    "exact quadrature needs a Jacobian affine in the noise");
            if (!std::holds_alternative<ConstantMetric>(metric))
                throw QuadratureUnsupported(
                    "exact quadrature needs a constant metric (state lookup does not "
                    "factor through moments)");
            auto mom = moments(proc);
            if (!mom) throw QuadratureUnsupported("exact quadrature needs declared moments");
            auto [j0, j1] = sys.affine_jac(0, x);
            const SymMatrix& p = std::get<ConstantMetric>(metric).p;
            Mat jm = j0 + mom->mean * j1;
            Mat cm = congruence(p, jm).full() + mom->variance() * congruence(p, j1).full();
            return SymMatrix(cm);
        }
        case Quadrature::Kind::GaussLegendre: {
            const auto* u = std::get_if<IidScalarUniform>(&proc);
            if (!u)
                throw QuadratureUnsupported(
                    "Gauss-Legendre quadrature needs a uniform scalar process");
            auto rule = gauss_legendre_rule(quad.nodes);
            const double mid = 0.5 * (u->lo + u->hi), half = 0.5 * (u->hi - u->lo);
            Mat acc(sys.dim, sys.dim);
            for (auto [t, w] : rule) {
                // w/2 is the density-normalized weight on [lo, hi]
                acc = acc + (0.5 * w) * pullback(sys, metric, 0, x, mid + half * t).full();
            }
            return SymMatrix(acc);
        }
        case Quadrature::Kind::MonteCarlo: {
            if (!std::holds_alternative<IidScalarUniform>(proc) &&
                !std::holds_alternative<IidSampler>(proc))
                throw QuadratureUnsupported("Monte Carlo reduction needs an i.i.d. process");
            if (quad.samples < 2) throw ShapeError("Monte Carlo quadrature: need >= 2 samples");
            ProcessPath draws =
                sample_path(proc, 0, std::size_t(quad.samples), quad.seed, stream);
            Mat acc(sys.dim, sys.dim);
            for (std::size_t i = 0; i < draws.length(); ++i) {
                SymMatrix s = pullback(sys, metric, 0, x, draws.at(i));
                if (samples_out) samples_out->push_back(s);
                acc = acc + s.full();
            }
            return SymMatrix((1.0 / double(draws.length())) * acc);
        }
    }
    throw ShapeError("iid_expected_pullback: unknown quadrature kind");
}

struct RhsSpec {
    double alpha = 1.0;  // coefficient on P(x)
    double beta = 0.0;   // constant shift, rhs = alpha P - beta I
};

inline void require_grid(const std::vector<Vec>& grid, std::size_t dim) {
    if (grid.empty()) throw ShapeError("check: empty grid");
    for (const auto& x : grid)
        if (x.size() != dim) throw DimensionMismatch("check: grid state dimension");
}

/// Worst margin of alpha*P(x) - beta*I - E[J^T P J] over the grid for an
/// i.i.d. process.  Monte Carlo reductions re-sample the worst point for a
/// directional standard error.
inline CheckReport grid_check_iid(const SystemModel& sys, const ProcessModel& proc,
                                  const MetricFamily& metric, const std::vector<Vec>& grid,
                                  RhsSpec rhs, const Quadrature& quad) {
    require_grid(grid, sys.dim);
    if (metric_dim(metric) != sys.dim)
        throw DimensionMismatch("check: metric dimension vs system");
    CheckReport rep;
    rep.worst_margin = std::numeric_limits<double>::infinity();
    std::size_t worst_index = 0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const Vec& x = grid[g];
        SymMatrix lhs = iid_expected_pullback(sys, proc, metric, x, quad, g, nullptr);
        Mat d = rhs.alpha * metric_at(metric, x).full() - lhs.full();
        for (std::size_t i = 0; i < sys.dim; ++i) d(i, i) -= rhs.beta;
        double m = min_eig(SymMatrix(d)).value;
        if (m < rep.worst_margin) {
            rep.worst_margin = m;
            rep.worst_state = x;
            worst_index = g;
        }
    }
    rep.points_checked = grid.size();
    if (quad.kind == Quadrature::Kind::MonteCarlo) {
        // Directional delta-method error bar at the worst point: project the
        // per-sample pullbacks onto the worst eigenvector.
        std::vector<SymMatrix> samples;
        const Vec& x = grid[worst_index];
        SymMatrix lhs = iid_expected_pullback(sys, proc, metric, x, quad, worst_index, &samples);
        Mat d = rhs.alpha * metric_at(metric, x).full() - lhs.full();
        for (std::size_t i = 0; i < sys.dim; ++i) d(i, i) -= rhs.beta;
        MinEig me = min_eig(SymMatrix(d));
        double mean = 0.0, m2 = 0.0, count = 0.0;
        for (const auto& s : samples) {
            double v = quad_form(s, me.vector);
            count += 1.0;
            double delta = v - mean;
            mean += delta / count;
            m2 += delta * (v - mean);
        }
        rep.stderr_estimate = std::sqrt(m2 / (count - 1.0) / count);
    }
    rep.passed = rep.worst_margin >= 0.0;
    return rep;
}

/// Worst margin of alpha*P_i(x) - beta*I - sum_j pi(j,i) J_j^T P_j J_j over
/// (grid state, conditioning mode); the finite sum is exact.
inline CheckReport grid_check_markov(const SystemModel& sys, const FiniteMarkov& fm,
                                     const MetricFamily& metric, const std::vector<Vec>& grid,
                                     RhsSpec rhs) {
    require_grid(grid, sys.dim);
    if (fm.schedule)
        throw ShapeError("check: time-varying transition schedules are not certifiable");
    const auto* md = std::get_if<ModeDependentMetric>(&metric);
    if (!md) throw ShapeError("check: finite-mode chain needs a mode-dependent metric");
    if (md->per_mode.size() != fm.modes)
        throw ModeMismatch("check: metric mode count vs chain");
    if (metric_dim(metric) != sys.dim)
        throw DimensionMismatch("check: metric dimension vs system");

    CheckReport rep;
    rep.worst_margin = std::numeric_limits<double>::infinity();
    std::vector<Mat> q(fm.modes);
    for (const Vec& x : grid) {
        for (std::size_t j = 0; j < fm.modes; ++j)
            q[j] = pullback(sys, metric, 0, x, NoiseSample(int(j + 1))).full();
        for (std::size_t i = 0; i < fm.modes; ++i) {
            Mat lhs(sys.dim, sys.dim);
            for (std::size_t j = 0; j < fm.modes; ++j) {
                const double pji = fm.transition(j, i);
                if (pji != 0.0) lhs = lhs + pji * q[j];
            }
            Mat d = rhs.alpha * md->per_mode[i].full() - lhs;
            for (std::size_t r = 0; r < sys.dim; ++r) d(r, r) -= rhs.beta;
            double m = min_eig(SymMatrix(d)).value;
            if (m < rep.worst_margin) {
                rep.worst_margin = m;
                rep.worst_state = x;
                rep.worst_mode = int(i + 1);
            }
        }
    }
    rep.points_checked = grid.size() * fm.modes;
    rep.passed = rep.worst_margin >= 0.0;
    return rep;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Checkers

/// i.i.d. noise, Euclidean-base certificate (constant or state-table metric):
///   E[J^T P(next) J] <= lambda^2 P(x)  at every grid state.
inline CheckReport check_iid(const SystemModel& sys, const ProcessModel& proc,
                             const Certificate& cert, const std::vector<Vec>& grid,
                             double lambda, const Quadrature& quad = {}) {
    validate_certificate(cert);
    if (!(lambda > 0.0 && lambda < 1.0)) throw InvalidRate("check_iid: lambda");
    if (!std::holds_alternative<IidScalarUniform>(proc) &&
        !std::holds_alternative<IidSampler>(proc))
        throw ShapeError("check_iid: process is not i.i.d.");
    if (std::holds_alternative<ModeDependentMetric>(cert.metric))
        throw ShapeError("check_iid: mode-dependent metric needs the finite-mode checker");
    return detail::grid_check_iid(sys, proc, cert.metric, grid,
                                  {lambda * lambda, 0.0}, quad);
}

/// Finite-mode chain, mode-dependent certificate:
///   sum_j pi(j,i) J(x,j)^T P_j J(x,j) <= lambda^2 P_i(x)  per (state, mode i).
/// The mode sum is exact; verdicts carry no sampling randomness.
inline CheckReport check_finite_markov(const SystemModel& sys, const ProcessModel& proc,
                                       const Certificate& cert, const std::vector<Vec>& grid,
                                       double lambda) {
    validate_certificate(cert);
    if (!(lambda > 0.0 && lambda < 1.0)) throw InvalidRate("check_finite_markov: lambda");
    const auto* fm = std::get_if<FiniteMarkov>(&proc);
    if (!fm) throw ShapeError("check_finite_markov: process is not a finite-mode chain");
    return detail::grid_check_markov(sys, *fm, cert.metric, grid, {lambda * lambda, 0.0});
}

/// Rate-free variant: right-hand side P - c^2 I instead of lambda^2 P, with
/// the class-appropriate expectation reduction chosen from the process.
inline CheckReport check_lambda_free(const SystemModel& sys, const ProcessModel& proc,
                                     const Certificate& cert, const std::vector<Vec>& grid,
                                     double c, const Quadrature& quad = {}) {
    validate_certificate(cert);
    if (!(c > 0.0)) throw ShapeError("check_lambda_free: c must be positive");
    if (const auto* fm = std::get_if<FiniteMarkov>(&proc))
        return detail::grid_check_markov(sys, *fm, cert.metric, grid, {1.0, c * c});
    if (std::holds_alternative<ModeDependentMetric>(cert.metric))
        throw ShapeError("check_lambda_free: mode-dependent metric needs a finite-mode chain");
    return detail::grid_check_iid(sys, proc, cert.metric, grid, {1.0, c * c}, quad);
}

/// Two-sided first-moment check against a constant base metric: the c1/c2
/// sandwich on every stored matrix plus the contraction inequality.  The
/// combined margin is the minimum of both parts.
inline CheckReport check_first_moment_riemann(const SystemModel& sys, const ProcessModel& proc,
                                              const Certificate& cert,
                                              const std::vector<Vec>& grid, double lambda,
                                              const Quadrature& quad = {}) {
    validate_certificate(cert);
    if (!(lambda > 0.0 && lambda < 1.0)) throw InvalidRate("check_first_moment_riemann: lambda");
    if (cert.base_metric && !std::holds_alternative<ConstantMetric>(*cert.base_metric))
        throw UnsupportedMetric(
            "check_first_moment_riemann: only constant base metrics are supported");
    const std::size_t n = metric_dim(cert.metric);
    SymMatrix base = cert.base_metric
                         ? std::get<ConstantMetric>(*cert.base_metric).p
                         : SymMatrix(Mat::identity(n));

    double sandwich_margin = std::numeric_limits<double>::infinity();
    std::optional<int> sandwich_mode;
    std::size_t sandwich_count = 0;
    const bool modal = std::holds_alternative<ModeDependentMetric>(cert.metric);
    detail::for_each_metric_matrix(cert.metric, [&](const SymMatrix& p, std::size_t i) {
        double lo = min_eig(SymMatrix(p.full() - (cert.c1 * cert.c1) * base.full())).value;
        double hi = min_eig(SymMatrix((cert.c2 * cert.c2) * base.full() - p.full())).value;
        double m = std::min(lo, hi);
        ++sandwich_count;
        if (m < sandwich_margin) {
            sandwich_margin = m;
            sandwich_mode = modal ? std::optional<int>(int(i + 1)) : std::nullopt;
        }
    });

    CheckReport contraction;
    if (const auto* fm = std::get_if<FiniteMarkov>(&proc)) {
        contraction =
            detail::grid_check_markov(sys, *fm, cert.metric, grid, {lambda * lambda, 0.0});
    } else {
        if (std::holds_alternative<ModeDependentMetric>(cert.metric))
            throw ShapeError(
                "check_first_moment_riemann: mode-dependent metric needs a finite-mode chain");
        contraction = detail::grid_check_iid(sys, proc, cert.metric, grid,
                                             {lambda * lambda, 0.0}, quad);
    }

    CheckReport rep = contraction;
    rep.points_checked = contraction.points_checked + sandwich_count;
    if (sandwich_margin < contraction.worst_margin) {
        rep.worst_margin = sandwich_margin;
        rep.worst_state = Vec{};
        rep.worst_mode = sandwich_mode;
        rep.stderr_estimate.reset();
    }
    rep.passed = rep.worst_margin >= 0.0;
    return rep;
}

/// Noise-free contraction check J(x)^T P(g(x)) J(x) <= lambda^2 P(x); the
/// map is evaluated with a zero noise placeholder it must ignore.
inline CheckReport check_deterministic(const SystemModel& sys, const MetricFamily& metric,
                                       const std::vector<Vec>& grid, double lambda) {
    if (!(lambda > 0.0 && lambda < 1.0)) throw InvalidRate("check_deterministic: lambda");
    detail::validate_metric_matrices(metric);
    if (std::holds_alternative<ModeDependentMetric>(metric))
        throw ShapeError("check_deterministic: metric must be constant or a state table");
    detail::require_grid(grid, sys.dim);
    if (metric_dim(metric) != sys.dim)
        throw DimensionMismatch("check_deterministic: metric dimension vs system");

    CheckReport rep;
    rep.worst_margin = std::numeric_limits<double>::infinity();
    for (const Vec& x : grid) {
        SymMatrix lhs = detail::pullback(sys, metric, 0, x, NoiseSample(0.0));
        Mat d = (lambda * lambda) * metric_at(metric, x).full() - lhs.full();
        double m = min_eig(SymMatrix(d)).value;
        if (m < rep.worst_margin) {
            rep.worst_margin = m;
            rep.worst_state = x;
        }
    }
    rep.points_checked = grid.size();
    rep.passed = rep.worst_margin >= 0.0;
    return rep;
}

// ---------------------------------------------------------------------------
// Trajectory Gramian

/// Discounted variational Gramian averaged over realizations, with the worst
/// per-path residual of the one-step shift identity
///   lambda1^2 P_K(k0, x) - J^T P_K(k0+1, f(x, xi_{k0})) J = I
/// recorded; both Gramians share the upper limit K and the same realization.
struct GramianEstimate {
    double lambda1 = 0.0;
    int k0 = 0;
    int horizon = 0;  // absolute upper limit K
    SymMatrix p_avg{1};
    std::size_t sample_count = 0;
    double max_identity_residual = 0.0;
};

inline GramianEstimate gramian_certificate(const SystemModel& sys, const ProcessModel& proc,
                                           double lambda1, int horizon, const Vec& x, int k0,
                                           std::size_t n_paths, std::uint64_t seed,
                                           std::optional<int> initial_mode = std::nullopt) {
    if (!(lambda1 > 0.0 && lambda1 < 1.0))
        throw InvalidRate("gramian_certificate: lambda1 must lie in (0,1)");
    if (horizon < k0) throw ShapeError("gramian_certificate: horizon below k0");
    if (n_paths < 1) throw ShapeError("gramian_certificate: need at least one path");
    if (x.size() != sys.dim) throw DimensionMismatch("gramian_certificate: state dimension");

    const double inv_l2 = 1.0 / (lambda1 * lambda1);
    GramianEstimate est;
    est.lambda1 = lambda1;
    est.k0 = k0;
    est.horizon = horizon;
    est.sample_count = n_paths;
    est.p_avg = SymMatrix(sys.dim);

    // Discounted sum of Phi_k^T Phi_k along one realization.
    auto discounted = [&](const std::vector<Mat>& phis) {
        Mat acc(sys.dim, sys.dim);
        double w = inv_l2;
        for (const auto& phi : phis) {
            acc = acc + w * (phi.T() * phi);
            w *= inv_l2;
        }
        return acc;
    };

    Mat sum(sys.dim, sys.dim);
    for (std::size_t p = 0; p < n_paths; ++p) {
        if (horizon == k0) {
            // Single-term sum; the shifted Gramian is empty and the identity
            // is exact by construction.
            sum = sum + Mat::identity(sys.dim, inv_l2);
            continue;
        }
        ProcessPath path =
            sample_path(proc, k0, std::size_t(horizon - k0), seed, p, initial_mode);
        Trajectory tr = simulate(sys, x, path);
        Mat p1 = discounted(variational(sys, tr));

        Mat p2(sys.dim, sys.dim);
        if (horizon > k0 + 1) {
            ProcessPath shifted;
            shifted.k0 = k0 + 1;
            shifted.modal = path.modal;
            shifted.values.assign(path.values.begin() + 1, path.values.end());
            Trajectory tr2 = simulate(sys, tr.states[1], shifted);
            p2 = discounted(variational(sys, tr2));
        }
        Mat j = sys.jac(k0, x, path.at(0));
        Mat residual = (lambda1 * lambda1) * p1 - j.T() * p2 * j - Mat::identity(sys.dim);
        est.max_identity_residual = std::max(est.max_identity_residual, residual.frob());
        sum = sum + p1;
    }
    est.p_avg = SymMatrix((1.0 / double(n_paths)) * sum);
    return est;
}

} // namespace stocon
