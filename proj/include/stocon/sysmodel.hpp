#pragma once

// Stochastic difference equations x_{k+1} = f(k, x_k, xi_k) with explicit
// Jacobians, trajectory simulation, and the variational (state transition)
// products used by contraction arguments.

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "matrix.hpp"
#include "process.hpp"

namespace stocon {

struct SystemModel {
    std::size_t dim = 0;
    std::string name;
    std::function<Vec(int, const Vec&, const NoiseSample&)> step;
    std::function<Mat(int, const Vec&, const NoiseSample&)> jac;
    /// When set: jac(k, x, xi) == first + value(xi) * second for every real xi.
    std::function<std::pair<Mat, Mat>(int, const Vec&)> affine_jac;
};

/// States x_{k0}, ..., x_{k0+N} produced by driving a system with an N-draw
/// noise path; keeps the path so the realization can be replayed.
struct Trajectory {
    int k0 = 0;
    std::vector<Vec> states;
    ProcessPath path;

    [[nodiscard]] std::size_t steps() const { return states.size() - 1; }

    /// State at absolute time k.
    [[nodiscard]] const Vec& at(int k) const {
        const long idx = long(k) - long(k0);
        if (idx < 0 || idx >= long(states.size()))
            throw ShapeError("Trajectory::at: time index out of range");
        return states[std::size_t(idx)];
    }
};

/// Bound beyond which a trajectory is declared numerically divergent.
inline constexpr double divergence_bound = 1e100;

inline Trajectory simulate(const SystemModel& sys, const Vec& x0,
                           const ProcessPath& path) {
    if (x0.size() != sys.dim) throw DimensionMismatch("simulate: x0 dimension");
    Trajectory tr;
    tr.k0 = path.k0;
    tr.path = path;
    tr.states.reserve(path.length() + 1);
    tr.states.push_back(x0);
    Vec x = x0;
    for (std::size_t i = 0; i < path.length(); ++i) {
        const int k = path.k0 + int(i);
        x = sys.step(k, x, path.at(i));
        for (double v : x)
            if (!std::isfinite(v) || std::abs(v) > divergence_bound)
                throw Diverged(k + 1, "trajectory diverged at step " + std::to_string(k + 1));
        tr.states.push_back(x);
    }
    return tr;
}

/// State transition products Phi_{k0} = I, Phi_{k+1} = J(k, x_k, xi_k) Phi_k
/// along a realized trajectory; returns Phi for k = k0 .. k0+N.
inline std::vector<Mat> variational(const SystemModel& sys, const Trajectory& tr) {
    std::vector<Mat> phi;
    phi.reserve(tr.states.size());
    phi.push_back(Mat::identity(sys.dim));
    for (std::size_t i = 0; i + 1 < tr.states.size(); ++i) {
        const int k = tr.k0 + int(i);
        Mat j = sys.jac(k, tr.states[i], tr.path.at(i));
        if (!j.finite()) throw InvalidMatrix("variational: non-finite Jacobian");
        phi.push_back(j * phi.back());
    }
    return phi;
}

} // namespace stocon
