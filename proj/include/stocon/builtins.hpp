#pragma once

// Bundled case studies: a discretized pendulum on a cart with multiplicative
// uniform noise, and a three-mode Markov jump system observed through the sum
// of its states.  Each bundle carries the pieces downstream stages need:
// dynamics, noise model, the one-varying-entry Jacobian structure with its
// vertex matrices, and published reference gains kept as comparison fixtures.

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "matrix.hpp"
#include "process.hpp"
#include "sysmodel.hpp"

namespace stocon {

// ----------------------------------------------------------------- pendulum

struct PendulumBundle {
    Mat A{{1.0, 1.0 / 20.0, 0.0},
          {0.0, 3.0 / 4.0, 1.0 / 10.0},
          {0.0, -1.0 / 10.0, 3.0 / 4.0}};
    Mat B{{0.0}, {0.0}, {0.5}};
    ProcessModel process = IidScalarUniform{1.0, 2.0};

    // The state-dependent Jacobian part xi * F(x) has a single varying entry
    // F(x)(1,0) = -cos(x_p)/20 in [-1/20, 1/20].
    std::size_t entry_row = 1, entry_col = 0;
    double entry_lo = -1.0 / 20.0, entry_hi = 1.0 / 20.0;

    Vec reference_gain{-20.6, -4.09, -1.75};

    [[nodiscard]] static Mat f_state_matrix(const Vec& x) {
        Mat f(3, 3);
        f(1, 0) = -std::cos(x[0]) / 20.0;
        return f;
    }

    [[nodiscard]] Mat vertex(int which) const {
        Mat f(3, 3);
        f(entry_row, entry_col) = (which == 0) ? entry_lo : entry_hi;
        return f;
    }

    /// u = 0 dynamics.
    [[nodiscard]] SystemModel open_loop() const { return closed_loop({}); }

    /// u = K x dynamics; empty gain means no input.
    [[nodiscard]] SystemModel closed_loop(const Vec& gain) const {
        if (!gain.empty() && gain.size() != 3)
            throw DimensionMismatch("pendulum gain must have 3 entries");
        Mat a_cl = A;
        if (!gain.empty())
            for (std::size_t j = 0; j < 3; ++j)
                for (std::size_t i = 0; i < 3; ++i)
                    a_cl(i, j) += B(i, 0) * gain[j];

        SystemModel sys;
        sys.dim = 3;
        sys.name = gain.empty() ? "pendulum" : "pendulum-cl";
        sys.step = [a_cl](int, const Vec& x, const NoiseSample& s) {
            const double xi = noise_value(s);
            Vec next = a_cl * x;
            next[1] += -xi * std::sin(x[0]) / 20.0;
            return next;
        };
        sys.jac = [a_cl](int, const Vec& x, const NoiseSample& s) {
            const double xi = noise_value(s);
            Mat j = a_cl;
            j(1, 0) += -xi * std::cos(x[0]) / 20.0;
            return j;
        };
        sys.affine_jac = [a_cl](int, const Vec& x) {
            return std::make_pair(a_cl, f_state_matrix(x));
        };
        return sys;
    }
};

inline const PendulumBundle& pendulum_bundle() {
    static const PendulumBundle b;
    return b;
}

// ------------------------------------------------- markov jump observer pair

struct MjsObserverBundle {
    std::size_t modes = 3;
    Mat transition{{0.1, 0.5, 0.3}, {0.8, 0.5, 0.1}, {0.1, 0.0, 0.6}};
    Mat c_row{{1.0, 1.0}};  // measurement y = x1 + x2

    // Per-mode slope intervals of the second state map, and the vertex
    // Jacobians [[1,1],[s,0]] with s at the interval ends.
    std::vector<std::pair<double, double>> slope_intervals{
        {-0.75, -0.25}, {-0.25, 0.25}, {0.25, 0.75}};

    std::vector<Vec> reference_gains{{-1.0, 0.824}, {-1.0, 0.338}, {-1.0, 0.00470}};
    Vec reference_common_gain{0.0751, -0.00214};

    [[nodiscard]] ProcessModel process() const {
        return make_finite_markov(transition);
    }

    [[nodiscard]] static double f2(double z, int mode) {
        switch (mode) {
            case 1: return std::cos(z) / 4.0 - z / 2.0;
            case 2: return std::sin(z) / 4.0;
            case 3: return std::cos(z) / 4.0 + z / 2.0;
            default: throw ModeOutOfRange("mjs mode must be 1, 2 or 3");
        }
    }

    [[nodiscard]] static double slope(double z, int mode) {
        switch (mode) {
            case 1: return -std::sin(z) / 4.0 - 0.5;
            case 2: return std::cos(z) / 4.0;
            case 3: return -std::sin(z) / 4.0 + 0.5;
            default: throw ModeOutOfRange("mjs mode must be 1, 2 or 3");
        }
    }

    [[nodiscard]] Mat vertex(int mode, int which) const {
        const auto [lo, hi] = slope_intervals.at(std::size_t(mode - 1));
        return Mat{{1.0, 1.0}, {which == 0 ? lo : hi, 0.0}};
    }

    [[nodiscard]] SystemModel plant() const {
        SystemModel sys;
        sys.dim = 2;
        sys.name = "mjs_observer_plant";
        sys.step = [](int, const Vec& x, const NoiseSample& s) {
            const int m = noise_mode(s);
            return Vec{x[0] + x[1], f2(x[0], m)};
        };
        sys.jac = [](int, const Vec& x, const NoiseSample& s) {
            const int m = noise_mode(s);
            return Mat{{1.0, 1.0}, {slope(x[0], m), 0.0}};
        };
        return sys;
    }

    [[nodiscard]] double measure(const Vec& x) const { return x[0] + x[1]; }

    /// Resolve a gain set: either one gain per mode or a single common gain.
    [[nodiscard]] const Vec& gain_for(const std::vector<Vec>& gains, int mode) const {
        if (gains.size() == 1) return gains[0];
        if (gains.size() != modes)
            throw DimensionMismatch("observer gains: need 1 or one per mode");
        return gains.at(std::size_t(mode - 1));
    }

    /// One filter update x^+ = f(x^, mode) + H_mode (C x^ - y).
    [[nodiscard]] Vec observer_update(const Vec& xhat, int mode, double y,
                                      const std::vector<Vec>& gains) const {
        const Vec& h = gain_for(gains, mode);
        const double innov = measure(xhat) - y;
        return Vec{xhat[0] + xhat[1] + h[0] * innov,
                   f2(xhat[0], mode) + h[1] * innov};
    }

    /// The autonomous map whose incremental contraction governs the filter's
    /// error decay: z -> f(z, mode) + H_mode C z.  The measurement input only
    /// shifts this map, so it drops out of the differential analysis.
    [[nodiscard]] SystemModel observer_contraction(std::vector<Vec> gains) const {
        if (gains.empty()) gains.assign(modes, Vec{0.0, 0.0});
        auto c = c_row;
        auto self = *this;
        SystemModel sys;
        sys.dim = 2;
        sys.name = "mjs_observer_error";
        sys.step = [self, gains](int, const Vec& z, const NoiseSample& s) {
            const int m = noise_mode(s);
            const Vec& h = self.gain_for(gains, m);
            const double cz = z[0] + z[1];
            return Vec{z[0] + z[1] + h[0] * cz, f2(z[0], m) + h[1] * cz};
        };
        sys.jac = [self, gains, c](int, const Vec& z, const NoiseSample& s) {
            const int m = noise_mode(s);
            const Vec& h = self.gain_for(gains, m);
            Mat j{{1.0, 1.0}, {slope(z[0], m), 0.0}};
            for (std::size_t r = 0; r < 2; ++r)
                for (std::size_t col = 0; col < 2; ++col)
                    j(r, col) += h[r] * c(0, col);
            return j;
        };
        return sys;
    }
};

inline const MjsObserverBundle& mjs_bundle() {
    static const MjsObserverBundle b;
    return b;
}

// ------------------------------------------------------------ name dispatch

struct BuiltinSystem {
    SystemModel sys;
    std::optional<ProcessModel> process;
};

inline BuiltinSystem builtin(const std::string& name) {
    if (name == "pendulum")
        return {pendulum_bundle().open_loop(), pendulum_bundle().process};
    if (name == "pendulum-cl")
        return {pendulum_bundle().closed_loop(pendulum_bundle().reference_gain),
                pendulum_bundle().process};
    if (name == "mjs_observer_plant")
        return {mjs_bundle().plant(), mjs_bundle().process()};
    if (name == "mjs_observer_error")
        return {mjs_bundle().observer_contraction({}), mjs_bundle().process()};
    throw UnknownSystem("unknown builtin system: " + name);
}

} // namespace stocon
