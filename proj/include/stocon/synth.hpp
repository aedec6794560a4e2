#pragma once

// Gain synthesis for the two bundled design templates: a state-feedback gain
// for a linear plant with one scalar state nonlinearity entering through a
// random coefficient, and per-mode (or common) observer gains for a
// finite-mode jump system observed through a fixed row C.
//
// Both follow the same recipe: enclose the varying Jacobian entry in an
// interval, take the endpoint vertex matrices, pose the quadratic
// contraction condition as a Schur-complement block LMI per vertex, solve
// the max-margin program, and invert the transformed variables back to
// gains.  Feasibility at the vertices certifies the whole interval because
// each family is affine in the enclosed entry.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "lmi.hpp"
#include "matrix.hpp"
#include "process.hpp"
#include "sysmodel.hpp"

namespace stocon {

// ---------------------------------------------------------------------------
// Interval enclosure of a Jacobian family

/// Vertex matrices realizing the endpoint values of the one varying entry
/// per mode.  Modes with a frozen Jacobian carry a single vertex.
struct PolytopicRelaxation {
    std::vector<std::vector<Mat>> vertices;
    std::vector<std::optional<std::pair<std::size_t, std::size_t>>> varying;

    [[nodiscard]] std::size_t modes() const { return vertices.size(); }

    [[nodiscard]] std::size_t max_vertex_count() const {
        std::size_t m = 0;
        for (const auto& v : vertices) m = std::max(m, v.size());
        return m;
    }

    /// Vertex `which` of a 1-based mode, clamped for single-vertex modes.
    [[nodiscard]] const Mat& vertex(int mode, std::size_t which) const {
        if (mode < 1 || std::size_t(mode) > vertices.size())
            throw ModeOutOfRange("relaxation: mode index");
        const auto& v = vertices[std::size_t(mode - 1)];
        return v[std::min(which, v.size() - 1)];
    }
};

/// Build the vertex list from per-mode entrywise bounds [lo, hi].  At most
/// one entry per mode may vary; everything else must agree exactly.
inline PolytopicRelaxation relax_jacobian(
    const std::vector<std::pair<Mat, Mat>>& bounds) {
    if (bounds.empty()) throw ShapeError("relax_jacobian: no modes");
    PolytopicRelaxation rel;
    for (const auto& [lo, hi] : bounds) {
        if (lo.rows != hi.rows || lo.cols != hi.cols)
            throw DimensionMismatch("relax_jacobian: lo/hi shapes disagree");
        if (!lo.finite() || !hi.finite())
            throw InvalidMatrix("relax_jacobian: non-finite bound");
        std::optional<std::pair<std::size_t, std::size_t>> entry;
        for (std::size_t r = 0; r < lo.rows; ++r)
            for (std::size_t c = 0; c < lo.cols; ++c) {
                if (hi(r, c) < lo(r, c))
                    throw ShapeError("relax_jacobian: upper bound below lower");
                if (hi(r, c) > lo(r, c)) {
                    if (entry)
                        throw UnsupportedStructure(
                            "relax_jacobian: more than one varying entry in a mode");
                    entry = {r, c};
                }
            }
        if (entry)
            rel.vertices.push_back({lo, hi});
        else
            rel.vertices.push_back({lo});
        rel.varying.push_back(entry);
    }
    return rel;
}

/// Express a sampled Jacobian as the convex combination of a mode's
/// vertices.  The weight follows from the varying entry by 1-D
/// interpolation; the reconstruction must then match entrywise.
inline Vec recover_weights(const PolytopicRelaxation& rel, int mode, const Mat& j,
                           double tol = 1e-9) {
    if (mode < 1 || std::size_t(mode) > rel.modes())
        throw ModeOutOfRange("recover_weights: mode index");
    const auto& verts = rel.vertices[std::size_t(mode - 1)];
    const double scale = 1.0 + j.frob();
    if (verts.size() == 1) {
        if ((j - verts[0]).frob() > tol * scale)
            throw UnsupportedStructure("recover_weights: sample off the frozen vertex");
        return {1.0};
    }
    const auto [r, c] = *rel.varying[std::size_t(mode - 1)];
    const double lo = verts[0](r, c), hi = verts[1](r, c);
    double t = (j(r, c) - lo) / (hi - lo);
    if (t < -tol || t > 1.0 + tol)
        throw UnsupportedStructure("recover_weights: entry outside its interval");
    t = std::min(std::max(t, 0.0), 1.0);
    Mat rebuilt = (1.0 - t) * verts[0] + t * verts[1];
    if ((j - rebuilt).frob() > tol * scale)
        throw UnsupportedStructure("recover_weights: sample not in the vertex hull");
    return {1.0 - t, t};
}

/// How vertex choices combine across modes in a block family.  PerFamily
/// pairs the same vertex index at every mode (two LMIs per conditioning
/// mode); FullProduct enumerates every cross-mode assignment.
enum class VertexCoupling { PerFamily, FullProduct };

namespace detail {

inline std::vector<std::vector<std::size_t>> vertex_picks(
    const PolytopicRelaxation& relax, VertexCoupling coupling) {
    const std::size_t modes = relax.modes();
    std::vector<std::vector<std::size_t>> picks;
    if (coupling == VertexCoupling::PerFamily) {
        for (std::size_t l = 0; l < relax.max_vertex_count(); ++l)
            picks.emplace_back(modes, l);
        return picks;
    }
    picks.emplace_back(modes, 0);
    for (std::size_t j = 0; j < modes; ++j) {
        const std::size_t opts = relax.vertices[j].size();
        const std::size_t base = picks.size();
        for (std::size_t w = 1; w < opts; ++w)
            for (std::size_t b = 0; b < base; ++b) {
                auto sel = picks[b];
                sel[j] = w;
                picks.push_back(std::move(sel));
            }
    }
    return picks;
}

} // namespace detail

// ---------------------------------------------------------------------------
// State-feedback synthesis

struct ControllerDesign {
    Vec gain;            // feedback row K, u = K x
    SymMatrix p_tilde{1};  // solved inverse-metric variable
    SymMatrix p_hat{1};    // recovered metric, p_tilde^{-1}
    double lambda = 0.0;
    double solver_margin = 0.0;
    double metric_condition = 0.0;  // extreme-eigenvalue ratio of p_tilde
    bool ill_conditioned = false;   // condition above 1e8
};

/// Drift, input column, and the moments of the scalar coefficient on the
/// enclosed Jacobian part.
struct ControlPlant {
    Mat a;
    Mat b;
};

/// Solve for K making x -> (A + xi F(x))x + B K x contract at the given
/// rate in some constant quadratic metric, where F(x) ranges over the
/// relaxation hull and xi has the process's declared moments.  Blocks per
/// vertex F:
///
///   [ l^2 Pt                 *    *  ]
///   [ (A + E[xi] F) Pt + B Kt  Pt   *  ]   >= 0,   Pt > 0
///   [ sd(xi) F Pt              0    Pt ]
///
/// with Pt the inverse metric and Kt = K Pt.
inline ControllerDesign synth_controller(const ControlPlant& plant,
                                         const ProcessModel& proc, double lambda,
                                         const PolytopicRelaxation& relax) {
    if (!(lambda > 0.0) || !(lambda < 1.0))
        throw InvalidRate("synth_controller: rate must lie in (0, 1)");
    const std::size_t n = plant.a.rows;
    if (plant.a.cols != n) throw ShapeError("synth_controller: drift not square");
    if (plant.b.rows != n || plant.b.cols != 1)
        throw ShapeError("synth_controller: input must be a column");
    if (relax.modes() != 1)
        throw ModeMismatch("synth_controller: relaxation must have exactly one mode");
    auto mom = moments(proc);
    if (!mom) throw QuadratureUnsupported("synth_controller: process moments unavailable");
    const double mean = mom->mean;
    const double sd = std::sqrt(std::max(mom->variance(), 0.0));

    LmiProblem prob;
    VarRef pt = prob.add_symmetric("Pt", n);
    VarRef kt = prob.add_rect("Kt", 1, n);
    prob.require_psd(prob.var(pt));
    const Mat zero(n, n);
    for (const Mat& f : relax.vertices[0]) {
        if (f.rows != n || f.cols != n)
            throw DimensionMismatch("synth_controller: vertex dimension");
        AffineMat m11 = (lambda * lambda) * prob.var(pt);
        AffineMat m21 = (plant.a + mean * f) * prob.var(pt) + plant.b * prob.var(kt);
        AffineMat m31 = (sd * f) * prob.var(pt);
        prob.require_psd(sym_block({{m11},
                                    {m21, prob.var(pt)},
                                    {m31, AffineMat::from_const(zero), prob.var(pt)}}));
    }

    LmiSolution sol = solve_max_margin(prob);
    if (sol.status == LmiStatus::MaxIterations)
        throw SolverStalled("synth_controller: solver hit its iteration cap");
    if (sol.status != LmiStatus::Feasible)
        throw SynthesisInfeasible(lambda * lambda,
                                  "synth_controller: family infeasible at this rate");

    ControllerDesign d;
    d.lambda = lambda;
    d.solver_margin = sol.margin;
    d.p_tilde = sol.sym_value(prob, pt);
    d.p_hat = inverse_spd(d.p_tilde);
    d.metric_condition = cond_spd(d.p_tilde);
    d.ill_conditioned = d.metric_condition > 1e8;
    Mat k = sol.rect_value(prob, kt) * d.p_hat.full();
    if (!k.finite()) throw InvalidMatrix("synth_controller: recovered gain not finite");
    d.gain.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) d.gain[i] = k(0, i);
    return d;
}

// ---------------------------------------------------------------------------
// Finite-mode observer synthesis

struct ObserverDesign {
    std::vector<Vec> gains;          // one per mode, or a single common gain
    std::vector<SymMatrix> metrics;  // matching p-hat family
    bool common = false;
    double lambda = 0.0;
    double solver_margin = 0.0;
    double metric_condition = 0.0;  // worst extreme-eigenvalue ratio
    bool ill_conditioned = false;
};

/// Solve for gains H_j making the family J_j(x) + H_j C contract at the
/// given rate under the chain's mixture condition, with J_j(x) ranging over
/// mode j's vertex hull.  Blocks per conditioning mode i and vertex choice:
///
///   [ l^2 P_i                      *    .    .  ]
///   [ sqrt(pi_{j,i}) (P_j A_j + H'_j C)  P_j  .  ]  >= 0,   P_j > 0
///
/// with H'_j = P_j H_j.  A common design ties all modes to one (P, H').
inline ObserverDesign synth_observer(const Mat& c_row, const FiniteMarkov& chain,
                                     double lambda, const PolytopicRelaxation& relax,
                                     bool common_gain,
                                     VertexCoupling coupling = VertexCoupling::PerFamily) {
    if (!(lambda > 0.0) || !(lambda < 1.0))
        throw InvalidRate("synth_observer: rate must lie in (0, 1)");
    const std::size_t modes = chain.modes;
    if (relax.modes() != modes)
        throw ModeMismatch("synth_observer: relaxation modes vs chain");
    if (chain.schedule)
        throw ShapeError("synth_observer: time-varying chains are not supported");
    const std::size_t n = relax.vertices[0][0].rows;
    if (relax.vertices[0][0].cols != n)
        throw ShapeError("synth_observer: vertices must be square");
    if (c_row.cols != n || c_row.rows < 1)
        throw DimensionMismatch("synth_observer: C row width vs state dimension");
    const std::size_t p = c_row.rows;

    LmiProblem prob;
    std::vector<VarRef> pv, hv;
    const std::size_t groups = common_gain ? 1 : modes;
    for (std::size_t j = 0; j < groups; ++j) {
        pv.push_back(prob.add_symmetric("P" + std::to_string(j + 1), n));
        hv.push_back(prob.add_rect("H" + std::to_string(j + 1), n, p));
    }
    auto pvar = [&](std::size_t j) { return prob.var(pv[common_gain ? 0 : j]); };
    auto hvar = [&](std::size_t j) { return prob.var(hv[common_gain ? 0 : j]); };
    for (std::size_t j = 0; j < groups; ++j) prob.require_psd(prob.var(pv[j]));

    const auto picks = detail::vertex_picks(relax, coupling);
    const Mat zero(n, n);
    for (std::size_t i = 0; i < modes; ++i) {
        for (const auto& sel : picks) {
            std::vector<std::vector<AffineMat>> rows;
            rows.push_back({(lambda * lambda) * pvar(i)});
            for (std::size_t j = 0; j < modes; ++j) {
                const Mat& aj = relax.vertex(int(j + 1), sel[j]);
                const double w = std::sqrt(chain.transition(j, i));
                std::vector<AffineMat> row;
                row.push_back(w * (pvar(j) * aj + hvar(j) * c_row));
                for (std::size_t q = 0; q < j; ++q)
                    row.push_back(AffineMat::from_const(zero));
                row.push_back(pvar(j));
                rows.push_back(std::move(row));
            }
            prob.require_psd(sym_block(rows));
        }
    }

    LmiSolution sol = solve_max_margin(prob);
    if (sol.status == LmiStatus::MaxIterations)
        throw SolverStalled("synth_observer: solver hit its iteration cap");
    if (sol.status != LmiStatus::Feasible)
        throw SynthesisInfeasible(lambda * lambda,
                                  "synth_observer: family infeasible at this rate");

    ObserverDesign d;
    d.common = common_gain;
    d.lambda = lambda;
    d.solver_margin = sol.margin;
    for (std::size_t j = 0; j < groups; ++j) {
        SymMatrix pj = sol.sym_value(prob, pv[j]);
        Mat hj = inverse_spd(pj).full() * sol.rect_value(prob, hv[j]);
        if (!hj.finite())
            throw InvalidMatrix("synth_observer: recovered gain not finite");
        d.metrics.push_back(pj);
        Vec g(n);
        for (std::size_t i = 0; i < n; ++i) g[i] = hj(i, 0);
        d.gains.push_back(std::move(g));
        d.metric_condition = std::max(d.metric_condition, cond_spd(pj));
    }
    d.ill_conditioned = d.metric_condition > 1e8;
    return d;
}

/// Mode-dependent metric for a finite-mode family, no gain variables:
/// P_j with sum_j pi(j,i) A_j^T P_j A_j <= l^2 P_i over the vertex hull.
/// Returns the metrics when feasible at the given rate, nothing when
/// infeasible.  Exact matrices enter as single-vertex relaxations.
inline std::optional<std::vector<SymMatrix>> markov_contraction_metric(
    const PolytopicRelaxation& relax, const Mat& transition, double lambda,
    VertexCoupling coupling = VertexCoupling::PerFamily) {
    if (!(lambda > 0.0) || !(lambda < 1.0))
        throw InvalidRate("markov_contraction_metric: rate must lie in (0, 1)");
    const std::size_t modes = relax.modes();
    validate_transition(transition, modes);
    const std::size_t n = relax.vertices[0][0].rows;

    LmiProblem prob;
    std::vector<VarRef> pv;
    for (std::size_t j = 0; j < modes; ++j) {
        if (relax.vertices[j][0].rows != n || relax.vertices[j][0].cols != n)
            throw DimensionMismatch("markov_contraction_metric: mode dimensions");
        pv.push_back(prob.add_symmetric("P" + std::to_string(j + 1), n));
        prob.require_psd(prob.var(pv[j]));
    }
    const Mat zero(n, n);
    for (std::size_t i = 0; i < modes; ++i) {
        for (const auto& sel : detail::vertex_picks(relax, coupling)) {
            std::vector<std::vector<AffineMat>> rows;
            rows.push_back({(lambda * lambda) * prob.var(pv[i])});
            for (std::size_t j = 0; j < modes; ++j) {
                const Mat& aj = relax.vertex(int(j + 1), sel[j]);
                std::vector<AffineMat> row;
                row.push_back(std::sqrt(transition(j, i)) * (prob.var(pv[j]) * aj));
                for (std::size_t q = 0; q < j; ++q)
                    row.push_back(AffineMat::from_const(zero));
                row.push_back(prob.var(pv[j]));
                rows.push_back(std::move(row));
            }
            prob.require_psd(sym_block(rows));
        }
    }

    LmiSolution sol = solve_max_margin(prob);
    if (sol.status == LmiStatus::MaxIterations)
        throw SolverStalled("markov_contraction_metric: solver hit its iteration cap");
    if (sol.status != LmiStatus::Feasible) return std::nullopt;
    std::vector<SymMatrix> out;
    for (std::size_t j = 0; j < modes; ++j) out.push_back(sol.sym_value(prob, pv[j]));
    return out;
}

/// Single-vertex relaxation wrapping exact per-mode matrices.
inline PolytopicRelaxation exact_relaxation(const std::vector<Mat>& a_modes) {
    std::vector<std::pair<Mat, Mat>> bounds;
    bounds.reserve(a_modes.size());
    for (const Mat& a : a_modes) bounds.emplace_back(a, a);
    return relax_jacobian(bounds);
}

// ---------------------------------------------------------------------------
// Vertex-frozen error system and rate bisection

/// Linear stand-in whose mode-j map is z -> (A_j^{(sel_j)} + H_j C) z, for
/// checking a design at a chosen corner of the vertex hull.
inline SystemModel vertex_error_system(const PolytopicRelaxation& relax,
                                       const std::vector<Vec>& gains, const Mat& c_row,
                                       const std::vector<std::size_t>& selection) {
    const std::size_t modes = relax.modes();
    if (selection.size() != modes)
        throw ModeMismatch("vertex_error_system: selection length vs modes");
    const std::size_t n = relax.vertices[0][0].rows;
    std::vector<Mat> maps;
    for (std::size_t j = 0; j < modes; ++j) {
        Mat m = relax.vertex(int(j + 1), selection[j]);
        const Vec& h = gains.size() == 1 ? gains[0] : gains.at(j);
        if (h.size() != n) throw DimensionMismatch("vertex_error_system: gain length");
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) m(r, c) += h[r] * c_row(0, c);
        maps.push_back(std::move(m));
    }
    SystemModel sys;
    sys.dim = n;
    sys.name = "vertex-error";
    sys.step = [maps](int, const Vec& z, const NoiseSample& s) {
        return maps.at(std::size_t(noise_mode(s)) - 1) * z;
    };
    sys.jac = [maps](int, const Vec&, const NoiseSample& s) {
        return maps.at(std::size_t(noise_mode(s)) - 1);
    };
    return sys;
}

/// Smallest squared rate in (lo, hi) at which `feasible_at` holds, found by
/// halving; the upper end must be feasible for the search to tighten.
struct BisectResult {
    double lambda2 = 1.0;
    bool any_feasible = false;
};

inline BisectResult bisect_rate(const std::function<bool(double)>& feasible_at,
                                double lo = 0.0, double hi = 1.0, int steps = 8) {
    if (!(lo >= 0.0) || !(hi <= 1.0) || !(lo < hi))
        throw ShapeError("bisect_rate: need 0 <= lo < hi <= 1");
    if (steps < 1) throw ShapeError("bisect_rate: need at least one step");
    BisectResult res;
    for (int s = 0; s < steps; ++s) {
        const double mid = 0.5 * (lo + hi);
        if (feasible_at(mid)) {
            res.any_feasible = true;
            res.lambda2 = mid;
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return res;
}

} // namespace stocon
