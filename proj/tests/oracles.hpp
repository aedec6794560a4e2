#pragma once

// Independent test oracles.  Everything here deliberately avoids the library
// routines under test: eigenvalues come from shifted power iteration or closed
// forms, randomness from a local xorshift, spectral radii from plain power
// iteration on an explicitly assembled operator.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "stocon/matrix.hpp"

namespace oracle {

using stocon::Mat;
using stocon::SymMatrix;
using stocon::Vec;

// ---------------------------------------------------------------- randomness

/// xorshift64* generator, unrelated to the library's counter-based streams.
struct TestRng {
    std::uint64_t s;
    explicit TestRng(std::uint64_t seed) : s(seed ? seed : 0x9e3779b97f4a7c15ull) {}
    std::uint64_t next() {
        s ^= s >> 12;
        s ^= s << 25;
        s ^= s >> 27;
        return s * 0x2545f4914f6cdd1dull;
    }
    double unit() { return (next() >> 11) * 0x1.0p-53; }       // [0,1)
    double sym() { return 2.0 * unit() - 1.0; }                 // [-1,1)
};

inline Mat random_mat(TestRng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
    Mat m(r, c);
    for (double& v : m.a) v = scale * rng.sym();
    return m;
}

inline SymMatrix random_sym(TestRng& rng, std::size_t n, double scale = 1.0) {
    return SymMatrix(random_mat(rng, n, n, scale));
}

/// Random orthogonal matrix by modified Gram-Schmidt on a random square matrix.
inline Mat random_orthogonal(TestRng& rng, std::size_t n) {
    Mat a = random_mat(rng, n, n);
    for (std::size_t j = 0; j < n; ++j) {
        Vec v = a.col(j);
        for (std::size_t k = 0; k < j; ++k) {
            Vec q = a.col(k);
            double proj = stocon::dot(q, v);
            for (std::size_t i = 0; i < n; ++i) v[i] -= proj * q[i];
        }
        double nrm = stocon::norm2(v);
        if (nrm < 1e-8) {
            // Degenerate draw; replace by a unit basis vector and re-orthogonalize.
            std::fill(v.begin(), v.end(), 0.0);
            v[j] = 1.0;
            for (std::size_t k = 0; k < j; ++k) {
                Vec q = a.col(k);
                double proj = stocon::dot(q, v);
                for (std::size_t i = 0; i < n; ++i) v[i] -= proj * q[i];
            }
            nrm = stocon::norm2(v);
        }
        for (std::size_t i = 0; i < n; ++i) a(i, j) = v[i] / nrm;
    }
    return a;
}

/// Random symmetric matrix with a prescribed spectrum: Q diag(vals) Q^T.
inline SymMatrix sym_with_spectrum(TestRng& rng, const Vec& vals) {
    const std::size_t n = vals.size();
    Mat q = random_orthogonal(rng, n);
    Mat d(n, n);
    for (std::size_t i = 0; i < n; ++i) d(i, i) = vals[i];
    return SymMatrix(q * d * q.T());
}

// -------------------------------------------------------------- eigenvalues

/// Largest eigenvalue of a symmetric matrix by plain power iteration.
inline double power_max_eig(const SymMatrix& m, int iters = 20000) {
    const std::size_t n = m.dim();
    Vec v(n);
    TestRng rng(12345);
    for (double& x : v) x = rng.sym();
    double lam = 0.0;
    for (int it = 0; it < iters; ++it) {
        Vec w = m.full() * v;
        double nrm = stocon::norm2(w);
        if (nrm == 0.0) return 0.0;
        for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / nrm;
        double next = stocon::quad_form(m, v);
        if (it > 50 && std::abs(next - lam) <= 1e-15 * std::max(1.0, std::abs(next)))
            return next;
        lam = next;
    }
    return lam;
}

/// Smallest eigenvalue via shifted power iteration on (sigma I - M), with
/// sigma a Gershgorin upper bound on the spectrum.
inline double power_min_eig(const SymMatrix& m) {
    const std::size_t n = m.dim();
    double sigma = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = m(i, i);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) row += std::abs(m(i, j));
        sigma = std::max(sigma, row);
    }
    sigma += 1.0;
    Mat shifted = Mat::identity(n, sigma) - m.full();
    return sigma - power_max_eig(SymMatrix(shifted));
}

/// Eigenvalues of a symmetric 2x2 in ascending order (closed form).
inline std::pair<double, double> eig2x2(const SymMatrix& m) {
    const double a = m(0, 0), b = m(0, 1), d = m(1, 1);
    const double tr = a + d;
    const double disc = std::sqrt((a - d) * (a - d) + 4.0 * b * b);
    return {(tr - disc) / 2.0, (tr + disc) / 2.0};
}

// ------------------------------------------------------ finite differences

/// Central-difference Jacobian of f: R^n -> R^n at x.
inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x,
                       double h = 1e-6) {
    const std::size_t n = x.size();
    Vec fx = f(x);
    Mat j(fx.size(), n);
    for (std::size_t c = 0; c < n; ++c) {
        Vec xp = x, xm = x;
        xp[c] += h;
        xm[c] -= h;
        Vec fp = f(xp), fm = f(xm);
        for (std::size_t r = 0; r < fp.size(); ++r)
            j(r, c) = (fp[r] - fm[r]) / (2.0 * h);
    }
    return j;
}

// ----------------------------------------------- lifted second-moment operator

inline Mat kron(const Mat& x, const Mat& y) {
    Mat r(x.rows * y.rows, x.cols * y.cols);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < x.cols; ++j)
            for (std::size_t k = 0; k < y.rows; ++k)
                for (std::size_t l = 0; l < y.cols; ++l)
                    r(i * y.rows + k, j * y.cols + l) = x(i, j) * y(k, l);
    return r;
}

/// Lifted second-moment operator of a finite-mode Markov jump linear system
/// x_{k+1} = A_{mode} x_k, with transition[j][i] = P(next = j | current = i).
/// Block (j,i) = pi_{j,i} (A_i kron A_i), acting on stacked vec(M_i) where
/// M_i = E[x x^T 1{mode = i}].
inline Mat mjls_lifted_operator(const std::vector<Mat>& a, const Mat& transition) {
    const std::size_t modes = a.size();
    const std::size_t n = a[0].rows;
    const std::size_t blk = n * n;
    Mat l(modes * blk, modes * blk);
    for (std::size_t i = 0; i < modes; ++i) {
        Mat ki = kron(a[i], a[i]);
        for (std::size_t j = 0; j < modes; ++j) {
            const double p = transition(j, i);
            if (p == 0.0) continue;
            for (std::size_t r = 0; r < blk; ++r)
                for (std::size_t c = 0; c < blk; ++c)
                    l(j * blk + r, i * blk + c) = p * ki(r, c);
        }
    }
    return l;
}

/// Spectral radius of a nonnegative-cone-preserving operator by power
/// iteration from a strictly interior start (stacked identity blocks).
inline double spectral_radius_power(const Mat& l, int iters = 40000) {
    const std::size_t n = l.rows;
    Vec v(n, 0.0);
    // Start from stacked identities when n is a multiple of a square; fall
    // back to all-ones otherwise.
    std::size_t blk = 0;
    for (std::size_t b = 1; b * b <= n; ++b)
        if (n % (b * b) == 0) blk = b * b;
    if (blk > 0) {
        std::size_t side = static_cast<std::size_t>(std::llround(std::sqrt(double(blk))));
        for (std::size_t off = 0; off + blk <= n; off += blk)
            for (std::size_t d = 0; d < side; ++d) v[off + d * side + d] = 1.0;
    } else {
        std::fill(v.begin(), v.end(), 1.0);
    }
    double rho = 0.0;
    for (int it = 0; it < iters; ++it) {
        Vec w = l * v;
        double nrm = stocon::norm2(w);
        if (nrm == 0.0) return 0.0;
        double next = nrm / stocon::norm2(v);
        for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / nrm;
        if (it > 100 && std::abs(next - rho) <= 1e-13 * std::max(1.0, next)) return next;
        rho = next;
    }
    return rho;
}

} // namespace oracle
