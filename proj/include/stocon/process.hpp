#pragma once

// Noise process models driving the stochastic difference equations: i.i.d.
// scalar draws, per-step independent families, and finite-mode Markov chains
// with column-stochastic transition matrices.  Paths are reproducible from
// (seed, stream) and finite-mode conditional expectations are exact sums,
// never sampled.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "matrix.hpp"
#include "rng.hpp"

namespace stocon {

/// A single draw handed to system dynamics: a real value or a 1-based mode.
using NoiseSample = std::variant<double, int>;

inline double noise_value(const NoiseSample& s) {
    if (const double* v = std::get_if<double>(&s)) return *v;
    throw ModeMismatch("noise sample holds a mode, expected a real value");
}

inline int noise_mode(const NoiseSample& s) {
    if (const int* m = std::get_if<int>(&s)) return *m;
    throw ModeMismatch("noise sample holds a real value, expected a mode");
}

struct Moments {
    double mean = 0.0;
    double second_moment = 0.0;
    [[nodiscard]] double variance() const { return second_moment - mean * mean; }
};

/// xi ~ U[lo, hi], i.i.d. across steps.
struct IidScalarUniform {
    double lo = 0.0;
    double hi = 1.0;
};

/// i.i.d. draws from a user sampler, with moments declared when known.
struct IidSampler {
    std::function<double(SplitStream&)> sample;
    std::optional<Moments> moments;
};

/// Independent but step-indexed draws xi_k ~ sample(k, .).
struct IndependentFamily {
    std::function<double(int, SplitStream&)> sample;
};

/// Finite-mode Markov chain.  transition(j-1, i-1) = P(next = j | current = i),
/// i.e. columns are distributions; modes are 1-based.  An optional schedule
/// makes the matrix time-varying; every scheduled matrix must itself be
/// column-stochastic.
struct FiniteMarkov {
    std::size_t modes = 0;
    Mat transition;
    std::function<Mat(int)> schedule;  // if set, matrix used at time k

    [[nodiscard]] Mat matrix_at(int k) const {
        return schedule ? schedule(k) : transition;
    }
};

using ProcessModel =
    std::variant<IidScalarUniform, IidSampler, IndependentFamily, FiniteMarkov>;

inline bool is_modal(const ProcessModel& m) {
    return std::holds_alternative<FiniteMarkov>(m);
}

inline void validate_transition(const Mat& t, std::size_t modes) {
    if (t.rows != modes || t.cols != modes)
        throw ShapeError("transition matrix shape does not match mode count");
    for (std::size_t i = 0; i < modes; ++i) {
        double colsum = 0.0;
        for (std::size_t j = 0; j < modes; ++j) {
            if (t(j, i) < -1e-12 || !std::isfinite(t(j, i)))
                throw InvalidMatrix("transition entries must be nonnegative");
            colsum += t(j, i);
        }
        if (std::abs(colsum - 1.0) > 1e-9)
            throw InvalidMatrix("transition columns must each sum to 1");
    }
}

inline FiniteMarkov make_finite_markov(Mat transition,
                                       std::function<Mat(int)> schedule = nullptr) {
    FiniteMarkov fm;
    fm.modes = transition.rows;
    validate_transition(transition, fm.modes);
    fm.transition = std::move(transition);
    fm.schedule = std::move(schedule);
    return fm;
}

/// One realized noise path xi_{k0}, ..., xi_{k0+length-1}.
struct ProcessPath {
    int k0 = 0;
    bool modal = false;
    std::vector<double> values;

    [[nodiscard]] std::size_t length() const { return values.size(); }

    [[nodiscard]] NoiseSample at(std::size_t idx) const {
        if (modal) return NoiseSample(static_cast<int>(values[idx]));
        return NoiseSample(values[idx]);
    }

    [[nodiscard]] int mode(std::size_t idx) const {
        if (!modal) throw ModeMismatch("path carries real values, not modes");
        return static_cast<int>(values[idx]);
    }

    [[nodiscard]] double value(std::size_t idx) const {
        if (modal) throw ModeMismatch("path carries modes, not real values");
        return values[idx];
    }
};

namespace detail {

inline int draw_mode_from_column(const Mat& t, int current, SplitStream& rng) {
    const std::size_t m = t.rows;
    const double u = rng.next_unit();
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        acc += t(j, static_cast<std::size_t>(current - 1));
        if (u < acc) return static_cast<int>(j + 1);
    }
    return static_cast<int>(m);  // guard against rounding in the last column entry
}

} // namespace detail

/// Sample a path of `length` draws starting at time k0.  The same
/// (model, k0, length, seed, stream, initial_mode) always produces the same
/// path bit for bit.  For FiniteMarkov, initial_mode is the mode held at time
/// k0 - 1 and the draw of xi_k uses the transition matrix at time k - 1.
inline ProcessPath sample_path(const ProcessModel& model, int k0, std::size_t length,
                               std::uint64_t seed, std::uint64_t stream = 0,
                               std::optional<int> initial_mode = std::nullopt) {
    if (length < 1) throw ShapeError("sample_path: length must be >= 1");
    SplitStream rng(seed, stream);
    ProcessPath path;
    path.k0 = k0;
    path.values.reserve(length);

    if (const auto* u = std::get_if<IidScalarUniform>(&model)) {
        if (!(u->lo < u->hi)) throw ShapeError("IidScalarUniform requires lo < hi");
        for (std::size_t i = 0; i < length; ++i)
            path.values.push_back(rng.next_uniform(u->lo, u->hi));
        return path;
    }
    if (const auto* s = std::get_if<IidSampler>(&model)) {
        for (std::size_t i = 0; i < length; ++i) {
            double v = s->sample(rng);
            if (!std::isfinite(v)) throw NonFiniteSample("IidSampler produced a non-finite draw");
            path.values.push_back(v);
        }
        return path;
    }
    if (const auto* f = std::get_if<IndependentFamily>(&model)) {
        for (std::size_t i = 0; i < length; ++i) {
            double v = f->sample(k0 + static_cast<int>(i), rng);
            if (!std::isfinite(v))
                throw NonFiniteSample("IndependentFamily produced a non-finite draw");
            path.values.push_back(v);
        }
        return path;
    }

    const auto& fm = std::get<FiniteMarkov>(model);
    if (!initial_mode || *initial_mode < 1 ||
        *initial_mode > static_cast<int>(fm.modes))
        throw ModeOutOfRange("FiniteMarkov path needs initial_mode in [1, modes]");
    path.modal = true;
    int mode = *initial_mode;
    for (std::size_t i = 0; i < length; ++i) {
        Mat t = fm.matrix_at(k0 - 1 + static_cast<int>(i));
        validate_transition(t, fm.modes);
        mode = detail::draw_mode_from_column(t, mode, rng);
        path.values.push_back(static_cast<double>(mode));
    }
    return path;
}

/// First and second moments when available in closed form or declared.
inline std::optional<Moments> moments(const ProcessModel& model) {
    if (const auto* u = std::get_if<IidScalarUniform>(&model)) {
        Moments m;
        m.mean = 0.5 * (u->lo + u->hi);
        m.second_moment = (u->lo * u->lo + u->lo * u->hi + u->hi * u->hi) / 3.0;
        return m;
    }
    if (const auto* s = std::get_if<IidSampler>(&model)) return s->moments;
    return std::nullopt;
}

/// E[g(xi_k) | mode at k-1 = given_mode].  For FiniteMarkov this is the exact
/// weighted sum over modes; for continuous models it is a Monte Carlo average
/// over n_samples draws (given_mode is ignored).
inline SymMatrix conditional_expectation_mc(
    const ProcessModel& model, int k, std::optional<int> given_mode,
    const std::function<SymMatrix(const NoiseSample&)>& g, std::size_t n_samples,
    std::uint64_t seed) {
    if (const auto* fm = std::get_if<FiniteMarkov>(&model)) {
        if (!given_mode || *given_mode < 1 ||
            *given_mode > static_cast<int>(fm->modes))
            throw ModeOutOfRange("conditional expectation needs given_mode in [1, modes]");
        Mat t = fm->matrix_at(k - 1);
        validate_transition(t, fm->modes);
        SymMatrix acc;
        bool first = true;
        for (std::size_t j = 0; j < fm->modes; ++j) {
            const double w = t(j, static_cast<std::size_t>(*given_mode - 1));
            if (w == 0.0) continue;
            SymMatrix gj = g(NoiseSample(static_cast<int>(j + 1)));
            if (!gj.finite()) throw NonFiniteSample("conditional expectation: g not finite");
            acc = first ? w * gj : acc + w * gj;
            first = false;
        }
        if (first) throw InvalidMatrix("transition column has no mass");
        return acc;
    }

    if (n_samples < 1) throw ShapeError("conditional_expectation_mc: n_samples >= 1");
    // All draws are of xi at the fixed time k (matters for IndependentFamily).
    SplitStream rng(seed);
    SymMatrix acc;
    for (std::size_t i = 0; i < n_samples; ++i) {
        double v;
        if (const auto* u = std::get_if<IidScalarUniform>(&model)) {
            if (!(u->lo < u->hi)) throw ShapeError("IidScalarUniform requires lo < hi");
            v = rng.next_uniform(u->lo, u->hi);
        } else if (const auto* s = std::get_if<IidSampler>(&model)) {
            v = s->sample(rng);
        } else {
            v = std::get<IndependentFamily>(model).sample(k, rng);
        }
        if (!std::isfinite(v)) throw NonFiniteSample("conditional expectation: non-finite draw");
        SymMatrix gi = g(NoiseSample(v));
        if (!gi.finite()) throw NonFiniteSample("conditional expectation: g not finite");
        acc = (i == 0) ? gi : acc + gi;
    }
    return (1.0 / static_cast<double>(n_samples)) * acc;
}

} // namespace stocon
