#pragma once

// Small dense max-margin semidefinite feasibility solver.
//
// Problems are posed as a list of affine symmetric matrix constraints
// G_l(y) >= 0 in scalarized decision variables y (symmetric and rectangular
// matrix variables).  The solver maximizes the joint margin t subject to
// G_l(y) >= t I for all l, by damped-Newton log-det barrier path following,
// and the verdict compares the post-hoc margin (recomputed independently from
// the returned assignment) against the feasibility threshold.
//
// Homogeneous problems (every constraint linear in the variables, no constant
// block) have a scaling ray; they are normalized by pinning the trace of the
// first symmetric variable to its dimension before solving.
//
// The barrier additionally walls every scalar into |y_i| <= 1e6.  Redundantly
// parametrized constraint families can have recession rays along which the
// log-det potential is unbounded; the walls keep every analytic center finite.
// Walls never enter the post-hoc verdict margin.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "matrix.hpp"

namespace stocon {

/// Affine matrix-valued expression: constant + sum_i y_i * coeff_i.
/// Only affine operations are offered, so anything assembled from variables
/// stays affine by construction.
struct AffineMat {
    std::size_t rows = 0, cols = 0;
    Mat constant;
    std::map<std::size_t, Mat> terms;  // scalar variable index -> coefficient

    AffineMat() = default;
    AffineMat(std::size_t r, std::size_t c) : rows(r), cols(c), constant(r, c) {}

    static AffineMat from_const(Mat m) {
        AffineMat e(m.rows, m.cols);
        e.constant = std::move(m);
        return e;
    }

    [[nodiscard]] AffineMat T() const {
        AffineMat e(cols, rows);
        e.constant = constant.T();
        for (const auto& [i, m] : terms) e.terms[i] = m.T();
        return e;
    }

    [[nodiscard]] Mat eval(const Vec& y) const {
        Mat m = constant;
        for (const auto& [i, c] : terms) m = m + y[i] * c;
        return m;
    }

    [[nodiscard]] bool homogeneous() const { return constant.frob() == 0.0; }
};

inline AffineMat operator+(const AffineMat& a, const AffineMat& b) {
    if (a.rows != b.rows || a.cols != b.cols) throw DimensionMismatch("AffineMat +");
    AffineMat e(a.rows, a.cols);
    e.constant = a.constant + b.constant;
    e.terms = a.terms;
    for (const auto& [i, m] : b.terms) {
        auto it = e.terms.find(i);
        if (it == e.terms.end())
            e.terms[i] = m;
        else
            it->second = it->second + m;
    }
    return e;
}

inline AffineMat operator-(const AffineMat& a, const AffineMat& b) {
    AffineMat neg = b;
    neg.constant = -1.0 * neg.constant;
    for (auto& [i, m] : neg.terms) m = -1.0 * m;
    return a + neg;
}

inline AffineMat operator*(double s, const AffineMat& a) {
    AffineMat e = a;
    e.constant = s * e.constant;
    for (auto& [i, m] : e.terms) m = s * m;
    return e;
}

inline AffineMat operator*(const Mat& l, const AffineMat& a) {
    if (l.cols != a.rows) throw DimensionMismatch("Mat * AffineMat");
    AffineMat e(l.rows, a.cols);
    e.constant = l * a.constant;
    for (const auto& [i, m] : a.terms) e.terms[i] = l * m;
    return e;
}

inline AffineMat operator*(const AffineMat& a, const Mat& r) {
    if (a.cols != r.rows) throw DimensionMismatch("AffineMat * Mat");
    AffineMat e(a.rows, r.cols);
    e.constant = a.constant * r;
    for (const auto& [i, m] : a.terms) e.terms[i] = m * r;
    return e;
}

/// Assemble a symmetric block matrix from its lower triangle
/// (row i of `lower` holds blocks (i,0) .. (i,i)); upper blocks mirror.
inline AffineMat sym_block(const std::vector<std::vector<AffineMat>>& lower) {
    const std::size_t nb = lower.size();
    std::vector<std::size_t> sizes(nb);
    for (std::size_t i = 0; i < nb; ++i) {
        if (lower[i].size() != i + 1) throw ShapeError("sym_block: ragged lower triangle");
        sizes[i] = lower[i][i].rows;
        if (lower[i][i].cols != sizes[i]) throw ShapeError("sym_block: diagonal not square");
    }
    std::vector<std::size_t> off(nb + 1, 0);
    for (std::size_t i = 0; i < nb; ++i) off[i + 1] = off[i] + sizes[i];

    AffineMat g(off[nb], off[nb]);
    auto place = [&](const AffineMat& blk, std::size_t bi, std::size_t bj) {
        if (blk.rows != sizes[bi] || blk.cols != sizes[bj])
            throw ShapeError("sym_block: block shape mismatch");
        auto emplace = [&](Mat& dst, const Mat& src) {
            for (std::size_t r = 0; r < src.rows; ++r)
                for (std::size_t c = 0; c < src.cols; ++c)
                    dst(off[bi] + r, off[bj] + c) += src(r, c);
        };
        emplace(g.constant, blk.constant);
        for (const auto& [i, m] : blk.terms) {
            auto it = g.terms.find(i);
            if (it == g.terms.end()) it = g.terms.emplace(i, Mat(g.rows, g.cols)).first;
            emplace(it->second, m);
        }
    };
    for (std::size_t i = 0; i < nb; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
            place(lower[i][j], i, j);
            if (i != j) place(lower[i][j].T(), j, i);
        }
    return g;
}

struct VarRef {
    std::size_t id = 0;
};

struct LmiVariable {
    enum class Kind { Symmetric, Rect };
    Kind kind = Kind::Symmetric;
    std::string name;
    std::size_t rows = 0, cols = 0;
    std::size_t offset = 0;  // first scalar index
    std::size_t count = 0;
};

class LmiProblem {
public:
    VarRef add_symmetric(std::string name, std::size_t n) {
        LmiVariable v;
        v.kind = LmiVariable::Kind::Symmetric;
        v.name = std::move(name);
        v.rows = v.cols = n;
        v.offset = scalar_count_;
        v.count = n * (n + 1) / 2;
        scalar_count_ += v.count;
        vars_.push_back(v);
        return {vars_.size() - 1};
    }

    VarRef add_rect(std::string name, std::size_t r, std::size_t c) {
        LmiVariable v;
        v.kind = LmiVariable::Kind::Rect;
        v.name = std::move(name);
        v.rows = r;
        v.cols = c;
        v.offset = scalar_count_;
        v.count = r * c;
        scalar_count_ += v.count;
        vars_.push_back(v);
        return {vars_.size() - 1};
    }

    /// Affine expression standing for the matrix variable itself.
    [[nodiscard]] AffineMat var(VarRef ref) const {
        const LmiVariable& v = vars_.at(ref.id);
        AffineMat e(v.rows, v.cols);
        if (v.kind == LmiVariable::Kind::Symmetric) {
            std::size_t idx = v.offset;
            for (std::size_t a = 0; a < v.rows; ++a)
                for (std::size_t b = 0; b <= a; ++b, ++idx) {
                    Mat basis(v.rows, v.cols);
                    basis(a, b) = 1.0;
                    if (a != b) basis(b, a) = 1.0;
                    e.terms[idx] = basis;
                }
        } else {
            std::size_t idx = v.offset;
            for (std::size_t r = 0; r < v.rows; ++r)
                for (std::size_t c = 0; c < v.cols; ++c, ++idx) {
                    Mat basis(v.rows, v.cols);
                    basis(r, c) = 1.0;
                    e.terms[idx] = basis;
                }
        }
        return e;
    }

    /// Add the constraint G(y) >= 0 (as a margin constraint G >= t I when
    /// solved).  G must be square; it is symmetrized on entry.
    void require_psd(const AffineMat& g) {
        if (g.rows != g.cols) throw ShapeError("require_psd: constraint not square");
        AffineMat s(g.rows, g.cols);
        s.constant = SymMatrix(g.constant).full();
        for (const auto& [i, m] : g.terms) {
            Mat sym = SymMatrix(m).full();
            if (sym.frob() > 0.0) s.terms[i] = sym;
        }
        constraints_.push_back(std::move(s));
    }

    [[nodiscard]] const std::vector<LmiVariable>& variables() const { return vars_; }
    [[nodiscard]] const std::vector<AffineMat>& constraints() const { return constraints_; }
    [[nodiscard]] std::size_t scalar_count() const { return scalar_count_; }

    [[nodiscard]] bool homogeneous() const {
        for (const auto& c : constraints_)
            if (!c.homogeneous()) return false;
        return !constraints_.empty();
    }

private:
    std::vector<LmiVariable> vars_;
    std::vector<AffineMat> constraints_;
    std::size_t scalar_count_ = 0;
};

struct LmiOptions {
    double eps = 1e-6;  // Feasible iff post-hoc margin >= eps
    double tol = 1e-9;
    int max_iter = 200;  // damped Newton step budget
};

enum class LmiStatus { Feasible, Infeasible, MaxIterations };

struct LmiSolution {
    LmiStatus status = LmiStatus::Infeasible;
    double margin = 0.0;  // min over constraints of min_eig(G_l(y)), recomputed post hoc
    Vec scalars;
    int iterations = 0;
    bool normalized = false;  // trace pin applied to remove the scaling ray

    [[nodiscard]] SymMatrix sym_value(const LmiProblem& p, VarRef ref) const {
        const LmiVariable& v = p.variables().at(ref.id);
        if (v.kind != LmiVariable::Kind::Symmetric)
            throw ShapeError("sym_value: variable is rectangular");
        SymMatrix m(v.rows);
        std::size_t idx = v.offset;
        for (std::size_t a = 0; a < v.rows; ++a)
            for (std::size_t b = 0; b <= a; ++b, ++idx) m.set(a, b, scalars[idx]);
        return m;
    }

    [[nodiscard]] Mat rect_value(const LmiProblem& p, VarRef ref) const {
        const LmiVariable& v = p.variables().at(ref.id);
        if (v.kind != LmiVariable::Kind::Rect)
            throw ShapeError("rect_value: variable is symmetric");
        Mat m(v.rows, v.cols);
        std::size_t idx = v.offset;
        for (std::size_t r = 0; r < v.rows; ++r)
            for (std::size_t c = 0; c < v.cols; ++c, ++idx) m(r, c) = scalars[idx];
        return m;
    }
};

namespace detail {

// Solve L Y = B with L lower triangular.
inline Mat forward_solve(const Mat& l, const Mat& b) {
    Mat y(b.rows, b.cols);
    for (std::size_t c = 0; c < b.cols; ++c)
        for (std::size_t i = 0; i < b.rows; ++i) {
            double s = b(i, c);
            for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y(k, c);
            y(i, c) = s / l(i, i);
        }
    return y;
}

struct BarrierConstraint {
    Mat a0;
    std::vector<std::pair<std::size_t, Mat>> terms;  // reduced-index coefficients
    std::size_t n = 0;

    [[nodiscard]] Mat eval(const Vec& y, double t) const {
        Mat m = a0;
        for (const auto& [i, c] : terms) m = m + y[i] * c;
        for (std::size_t d = 0; d < n; ++d) m(d, d) -= t;
        return m;
    }
};

} // namespace detail

/// Maximize the joint margin t with G_l(y) >= t I.  See file comment.
inline LmiSolution solve_max_margin(const LmiProblem& prob, const LmiOptions& opt = {}) {
    if (prob.constraints().empty()) throw ShapeError("solve_max_margin: no constraints");
    if (prob.scalar_count() > 200)
        throw ShapeError("solve_max_margin: more than 200 scalar decision variables");

    // ---- optional trace pin on homogeneous problems -------------------------
    // Substitute the last diagonal scalar of the first symmetric variable:
    //   y_pin = dim - sum(other diagonal scalars of that variable).
    const bool pinned = prob.homogeneous();
    std::size_t pin_index = SIZE_MAX;
    std::vector<std::size_t> pin_diag;  // other diagonal indices of the pinned var
    double pin_value_const = 0.0;
    if (pinned) {
        const LmiVariable* first_sym = nullptr;
        for (const auto& v : prob.variables())
            if (v.kind == LmiVariable::Kind::Symmetric) {
                first_sym = &v;
                break;
            }
        if (!first_sym)
            throw ShapeError("solve_max_margin: homogeneous problem without a symmetric variable");
        std::size_t idx = first_sym->offset;
        std::vector<std::size_t> diag;
        for (std::size_t a = 0; a < first_sym->rows; ++a)
            for (std::size_t b = 0; b <= a; ++b, ++idx)
                if (a == b) diag.push_back(idx);
        pin_index = diag.back();
        diag.pop_back();
        pin_diag = diag;
        pin_value_const = double(first_sym->rows);
    }

    // Map full scalar indices to reduced ones (the pinned index is dropped).
    const std::size_t full_d = prob.scalar_count();
    std::vector<std::size_t> to_reduced(full_d, SIZE_MAX);
    std::size_t d = 0;
    for (std::size_t i = 0; i < full_d; ++i)
        if (i != pin_index) to_reduced[i] = d++;

    std::vector<detail::BarrierConstraint> cons;
    cons.reserve(prob.constraints().size());
    std::size_t total_rows = 0;
    for (const auto& g : prob.constraints()) {
        detail::BarrierConstraint c;
        c.n = g.rows;
        total_rows += g.rows;
        c.a0 = g.constant;
        const Mat* pin_coeff = nullptr;
        if (pinned) {
            auto it = g.terms.find(pin_index);
            if (it != g.terms.end()) pin_coeff = &it->second;
        }
        if (pin_coeff) c.a0 = c.a0 + pin_value_const * (*pin_coeff);
        std::map<std::size_t, Mat> acc;
        for (const auto& [i, m] : g.terms) {
            if (i == pin_index) continue;
            acc[to_reduced[i]] = m;
        }
        if (pin_coeff)
            for (std::size_t di : pin_diag) {
                auto [it, fresh] = acc.try_emplace(to_reduced[di], Mat(g.rows, g.cols));
                it->second = it->second - *pin_coeff;
                (void)fresh;
            }
        for (auto& [i, m] : acc)
            if (m.frob() > 0.0) c.terms.emplace_back(i, std::move(m));
        cons.push_back(std::move(c));
    }

    // Compactification walls, see file comment.  They join the barrier (and
    // the accuracy budget via total_rows) but not the verdict margin.
    const double wall = 1e6;
    for (std::size_t i = 0; i < d; ++i)
        for (double sgn : {1.0, -1.0}) {
            detail::BarrierConstraint c;
            c.n = 1;
            c.a0 = Mat{{wall}};
            c.terms.emplace_back(i, Mat{{-sgn}});
            cons.push_back(std::move(c));
            total_rows += 1;
        }

    // ---- strictly feasible start -------------------------------------------
    Vec y(d, 0.0);
    double t0 = std::numeric_limits<double>::infinity();
    for (const auto& c : cons)
        t0 = std::min(t0, min_eig(SymMatrix(c.eval(y, 0.0))).value);
    double t = t0 - std::max(1.0, 0.1 * std::abs(t0));

    const double t_cap = 1e8;
    const double y_cap = 1e10;
    double theta = 1.0 / std::max(1.0, std::abs(t));
    const double theta_max =
        std::max(1e10, 10.0 * double(total_rows) / std::max(opt.tol, 1e-12));

    auto potential = [&](const Vec& yy, double tt, bool& ok) {
        double val = -theta * tt;
        ok = true;
        for (const auto& c : cons) {
            auto l = chol(SymMatrix(c.eval(yy, tt)), 1e-300);
            if (!l) {
                ok = false;
                return 0.0;
            }
            double logdet = 0.0;
            for (std::size_t i = 0; i < c.n; ++i) logdet += std::log((*l)(i, i));
            val -= 2.0 * logdet;
        }
        return val;
    };

    int iters = 0;
    bool budget_hit = false;
    bool breakdown = false;
    bool final_stage = false;
    bool capped = false;
    bool stalled_big = false;  // line search died while far from centered

    while (true) {
        final_stage = theta >= theta_max;

        // Damped Newton to approximate centrality at this theta.
        int stall = 0;
        while (true) {
            if (iters >= opt.max_iter) {
                budget_hit = true;
                break;
            }
            // Assemble gradient and Hessian over (y, t).
            Vec g(d + 1, 0.0);
            Mat h(d + 1, d + 1);
            g[d] = -theta;
            bool assembled = true;
            for (const auto& c : cons) {
                auto l = chol(SymMatrix(c.eval(y, t)), 1e-300);
                if (!l) {
                    assembled = false;
                    break;
                }
                const std::size_t m = c.terms.size();
                std::vector<Mat> w(m + 1);
                for (std::size_t a = 0; a < m; ++a) {
                    Mat fy = detail::forward_solve(*l, c.terms[a].second);
                    w[a] = detail::forward_solve(*l, fy.T());
                }
                {
                    Mat fy = detail::forward_solve(*l, Mat::identity(c.n, -1.0));
                    w[m] = detail::forward_solve(*l, fy.T());
                }
                auto gindex = [&](std::size_t a) {
                    return a < m ? c.terms[a].first : d;
                };
                for (std::size_t a = 0; a <= m; ++a) {
                    double tr = 0.0;
                    for (std::size_t i = 0; i < c.n; ++i) tr += w[a](i, i);
                    g[gindex(a)] -= tr;
                    for (std::size_t b = a; b <= m; ++b) {
                        double fr = 0.0;
                        for (std::size_t i = 0; i < w[a].a.size(); ++i)
                            fr += w[a].a[i] * w[b].a[i];
                        h(gindex(a), gindex(b)) += fr;
                        if (gindex(a) != gindex(b)) h(gindex(b), gindex(a)) += fr;
                    }
                }
            }
            if (!assembled) {
                breakdown = true;
                break;
            }

            // Newton direction with ridge fallback.
            Vec delta;
            {
                double ridge = 0.0;
                double htrace = 0.0;
                for (std::size_t i = 0; i <= d; ++i) htrace += std::abs(h(i, i));
                for (int attempt = 0; attempt < 4; ++attempt) {
                    Mat hr = h;
                    for (std::size_t i = 0; i <= d; ++i) hr(i, i) += ridge;
                    auto l = chol(SymMatrix(hr), 1e-300);
                    if (l) {
                        Vec rhs(d + 1);
                        for (std::size_t i = 0; i <= d; ++i) rhs[i] = -g[i];
                        delta = chol_solve(*l, rhs);
                        break;
                    }
                    ridge = (ridge == 0.0) ? 1e-12 * std::max(htrace, 1.0) : ridge * 100.0;
                }
                if (delta.empty()) {
                    breakdown = true;
                    break;
                }
            }

            double decrement2 = 0.0;
            for (std::size_t i = 0; i <= d; ++i) decrement2 -= g[i] * delta[i];
            // The potential carries the -theta*t term, so anything below its
            // floating-point granularity is noise, not progress.
            const double noise = 1e-14 * theta * std::max(1.0, std::abs(t));
            const double center_tol = std::max(final_stage ? 1e-10 : 1e-6, noise);
            if (decrement2 <= center_tol) break;

            // Backtracking line search keeping all blocks strictly PD.
            bool ok0 = false;
            const double psi0 = potential(y, t, ok0);
            if (!ok0) {
                breakdown = true;
                break;
            }
            double alpha = 1.0;
            bool moved = false;
            while (alpha > 1e-16) {
                Vec yn = y;
                for (std::size_t i = 0; i < d; ++i) yn[i] += alpha * delta[i];
                const double tn = t + alpha * delta[d];
                bool ok = false;
                const double psi = potential(yn, tn, ok);
                if (ok && psi <= psi0 - 0.01 * alpha * decrement2) {
                    y = yn;
                    t = tn;
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            ++iters;
            if (!moved) {
                if (decrement2 <= 100.0 * noise) break;  // stuck inside rounding noise
                if (++stall >= 2) {
                    stalled_big = decrement2 > 1e-3;
                    break;
                }
            } else {
                stall = 0;
            }

            double ymax = 0.0;
            for (double v : y) ymax = std::max(ymax, std::abs(v));
            if (t > t_cap || ymax > y_cap) {
                capped = true;
                break;
            }
        }

        if (budget_hit || breakdown || capped || final_stage) break;
        theta = std::min(theta * 20.0, theta_max);
    }

    // ---- post-hoc verdict ---------------------------------------------------
    // Reconstruct the full assignment and recompute the margin from scratch;
    // the verdict never trusts the solver's internal t.
    LmiSolution sol;
    sol.iterations = iters;
    sol.normalized = pinned;
    sol.scalars.assign(full_d, 0.0);
    for (std::size_t i = 0; i < full_d; ++i)
        if (i != pin_index) sol.scalars[i] = y[to_reduced[i]];
    if (pinned) {
        double rest = 0.0;
        for (std::size_t di : pin_diag) rest += sol.scalars[di];
        sol.scalars[pin_index] = pin_value_const - rest;
    }

    double margin = std::numeric_limits<double>::infinity();
    for (const auto& g : prob.constraints())
        margin = std::min(margin, min_eig(SymMatrix(g.eval(sol.scalars))).value);
    sol.margin = margin;

    if (margin >= opt.eps) {
        sol.status = LmiStatus::Feasible;
    } else if (breakdown || stalled_big) {
        throw SolverBreakdown("max-margin solve: Newton iteration failed");
    } else if (budget_hit || capped) {
        sol.status = LmiStatus::MaxIterations;
    } else {
        sol.status = LmiStatus::Infeasible;
    }
    return sol;
}

} // namespace stocon
