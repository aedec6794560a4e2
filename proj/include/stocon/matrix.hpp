#pragma once

// Small dense matrix core: storage, symmetric eigenvalues via cyclic Jacobi
// rotations, Cholesky factorizations, PSD tests and Schur complements.
// Everything here targets the dimensions this library actually meets
// (n <= ~12 for metrics, ~9x9 LMI blocks); no attempt is made at large-n
// performance.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace stocon {

using Vec = std::vector<double>;

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline double dot(const Vec& x, const Vec& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

inline double norm2(const Vec& x) { return std::sqrt(dot(x, x)); }

inline Vec vsub(const Vec& x, const Vec& y) {
    Vec r(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] - y[i];
    return r;
}

inline Vec vadd(const Vec& x, const Vec& y) {
    Vec r(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] + y[i];
    return r;
}

inline Vec vscale(double a, const Vec& x) {
    Vec r(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) r[i] = a * x[i];
    return r;
}

/// Dense row-major matrix.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}
    Mat(std::size_t r, std::size_t c, std::vector<double> data)
        : rows(r), cols(c), a(std::move(data)) {
        if (a.size() != rows * cols) throw ShapeError("Mat: data size mismatch");
    }
    /// Row-of-rows constructor, e.g. Mat({{1,2},{3,4}}).
    Mat(std::initializer_list<std::initializer_list<double>> r) {
        rows = r.size();
        cols = rows ? r.begin()->size() : 0;
        a.reserve(rows * cols);
        for (const auto& row : r) {
            if (row.size() != cols) throw ShapeError("Mat: ragged rows");
            for (double v : row) a.push_back(v);
        }
    }

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    static Mat identity(std::size_t n, double scale = 1.0) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = scale;
        return m;
    }

    [[nodiscard]] Mat T() const {
        Mat m(cols, rows);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) m(j, i) = (*this)(i, j);
        return m;
    }

    [[nodiscard]] double frob() const {
        double s = 0.0;
        for (double x : a) s += x * x;
        return std::sqrt(s);
    }

    [[nodiscard]] bool finite() const {
        for (double x : a)
            if (!std::isfinite(x)) return false;
        return true;
    }

    [[nodiscard]] Vec col(std::size_t j) const {
        Vec v(rows);
        for (std::size_t i = 0; i < rows; ++i) v[i] = (*this)(i, j);
        return v;
    }
};

inline Mat operator+(const Mat& x, const Mat& y) {
    if (x.rows != y.rows || x.cols != y.cols) throw DimensionMismatch("Mat +");
    Mat r = x;
    for (std::size_t i = 0; i < r.a.size(); ++i) r.a[i] += y.a[i];
    return r;
}

inline Mat operator-(const Mat& x, const Mat& y) {
    if (x.rows != y.rows || x.cols != y.cols) throw DimensionMismatch("Mat -");
    Mat r = x;
    for (std::size_t i = 0; i < r.a.size(); ++i) r.a[i] -= y.a[i];
    return r;
}

inline Mat operator*(double s, const Mat& x) {
    Mat r = x;
    for (double& v : r.a) v *= s;
    return r;
}

inline Mat operator*(const Mat& x, const Mat& y) {
    if (x.cols != y.rows) throw DimensionMismatch("Mat *");
    Mat r(x.rows, y.cols);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t k = 0; k < x.cols; ++k) {
            const double xik = x(i, k);
            if (xik == 0.0) continue;
            for (std::size_t j = 0; j < y.cols; ++j) r(i, j) += xik * y(k, j);
        }
    return r;
}

inline Vec operator*(const Mat& m, const Vec& v) {
    if (m.cols != v.size()) throw DimensionMismatch("Mat * Vec");
    Vec r(m.rows, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) r[i] += m(i, j) * v[j];
    return r;
}

/// Symmetric matrix.  Construction from general square data symmetrizes
/// via (M + M^T)/2, so the stored entries are exactly symmetric.
class SymMatrix {
public:
    SymMatrix() = default;
    explicit SymMatrix(std::size_t n) : m_(n, n) {}
    explicit SymMatrix(const Mat& m) : m_(m.rows, m.cols) {
        if (m.rows != m.cols) throw InvalidMatrix("SymMatrix: not square");
        for (std::size_t i = 0; i < m.rows; ++i)
            for (std::size_t j = 0; j < m.cols; ++j)
                m_(i, j) = 0.5 * (m(i, j) + m(j, i));
    }
    SymMatrix(std::initializer_list<std::initializer_list<double>> r)
        : SymMatrix(Mat(r)) {}

    static SymMatrix identity(std::size_t n, double scale = 1.0) {
        return SymMatrix(Mat::identity(n, scale));
    }

    [[nodiscard]] std::size_t dim() const { return m_.rows; }
    double operator()(std::size_t i, std::size_t j) const { return m_(i, j); }
    void set(std::size_t i, std::size_t j, double v) {
        m_(i, j) = v;
        m_(j, i) = v;
    }
    [[nodiscard]] const Mat& full() const { return m_; }
    [[nodiscard]] bool finite() const { return m_.finite(); }

    [[nodiscard]] double trace() const {
        double t = 0.0;
        for (std::size_t i = 0; i < dim(); ++i) t += m_(i, i);
        return t;
    }

private:
    Mat m_;
};

inline SymMatrix operator+(const SymMatrix& x, const SymMatrix& y) {
    return SymMatrix(x.full() + y.full());
}
inline SymMatrix operator-(const SymMatrix& x, const SymMatrix& y) {
    return SymMatrix(x.full() - y.full());
}
inline SymMatrix operator*(double s, const SymMatrix& x) {
    return SymMatrix(s * x.full());
}

/// x^T M y without forming intermediates.
inline double quad_form(const SymMatrix& m, const Vec& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.dim(); ++i)
        for (std::size_t j = 0; j < m.dim(); ++j) s += x[i] * m(i, j) * x[j];
    return s;
}

/// J^T P J for rectangular J (P is dim(J.rows)).
inline SymMatrix congruence(const SymMatrix& p, const Mat& j) {
    if (p.dim() != j.rows) throw DimensionMismatch("congruence");
    return SymMatrix(j.T() * p.full() * j);
}

/// Absolute eigenvalue tolerance used by PSD verdicts.  Mutable knob so a
/// caller can tighten or relax all PSD checks at once.
inline double& psd_tolerance() {
    static double tol = 1e-10;
    return tol;
}

struct EigenDecomp {
    Vec values;   // ascending
    Mat vectors;  // column i pairs with values[i]; orthonormal
};

/// Full symmetric eigendecomposition by cyclic Jacobi rotations.
/// Dimensions of interest are tiny, so quadratic sweeps are fine; off-diagonal
/// mass is driven below 1e-14 * ||A||_F (absolute floor 1e-300).
inline EigenDecomp eigh(const SymMatrix& m) {
    if (!m.finite()) throw InvalidMatrix("eigh: non-finite entries");
    const std::size_t n = m.dim();
    if (n == 0) throw InvalidMatrix("eigh: empty matrix");
    Mat a = m.full();
    Mat v = Mat::identity(n);

    const double scale = std::max(a.frob(), 1e-300);
    for (int sweep = 0; sweep < 128; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (std::sqrt(off) <= 1e-14 * scale) break;

        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) <= 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0)
                                     ? 1.0 / (theta + std::sqrt(1.0 + theta * theta))
                                     : 1.0 / (theta - std::sqrt(1.0 + theta * theta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;

                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    EigenDecomp d;
    d.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) d.values[i] = a(i, i);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return d.values[x] < d.values[y]; });
    EigenDecomp out;
    out.values.resize(n);
    out.vectors = Mat(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        out.values[i] = d.values[order[i]];
        for (std::size_t k = 0; k < n; ++k) out.vectors(k, i) = v(k, order[i]);
    }
    return out;
}

struct MinEig {
    double value = 0.0;
    Vec vector;
};

inline MinEig min_eig(const SymMatrix& m) {
    EigenDecomp d = eigh(m);
    return {d.values.front(), d.vectors.col(0)};
}

struct PsdVerdict {
    bool is_psd = false;
    double min_eigenvalue = 0.0;
    Vec witness;  // populated iff !is_psd; v^T M v = min_eigenvalue
};

/// Is M >= margin * I, up to psd_tolerance() on the smallest eigenvalue?
inline PsdVerdict psd_check(const SymMatrix& m, double margin = 0.0) {
    MinEig me = min_eig(m);
    PsdVerdict v;
    v.min_eigenvalue = me.value;
    v.is_psd = me.value >= margin - psd_tolerance();
    if (!v.is_psd) v.witness = me.vector;
    return v;
}

/// Plain Cholesky M = L L^T.  Fails (nullopt) when a pivot drops below
/// rel_tol times the largest diagonal entry; no pivoting.
inline std::optional<Mat> chol(const SymMatrix& m, double rel_tol = 1e-13) {
    const std::size_t n = m.dim();
    double dmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) dmax = std::max(dmax, std::abs(m(i, i)));
    const double floor_val = std::max(dmax, 1.0) * rel_tol;

    Mat l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = m(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > floor_val)) return std::nullopt;
        l(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = m(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / l(j, j);
        }
    }
    return l;
}

inline Vec chol_solve(const Mat& l, const Vec& b) {
    const std::size_t n = l.rows;
    Vec y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
        y[i] = s / l(i, i);
    }
    Vec x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
        x[ii] = s / l(ii, ii);
    }
    return x;
}

inline Mat chol_solve_mat(const Mat& l, const Mat& b) {
    Mat x(b.rows, b.cols);
    for (std::size_t j = 0; j < b.cols; ++j) {
        Vec c = chol_solve(l, b.col(j));
        for (std::size_t i = 0; i < b.rows; ++i) x(i, j) = c[i];
    }
    return x;
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
inline SymMatrix inverse_spd(const SymMatrix& m) {
    auto l = chol(m);
    if (!l) throw NotPositiveDefinite("inverse_spd: Cholesky failed");
    return SymMatrix(chol_solve_mat(*l, Mat::identity(m.dim())));
}

/// Spectral condition number lambda_max / lambda_min (PD input assumed).
inline double cond_spd(const SymMatrix& m) {
    EigenDecomp d = eigh(m);
    if (d.values.front() <= 0.0) return std::numeric_limits<double>::infinity();
    return d.values.back() / d.values.front();
}

/// Diagonally pivoted Cholesky PSD test: succeeds iff M is positive
/// semidefinite up to `tol` on the pivots.
inline bool pivoted_cholesky_psd(const SymMatrix& m, double tol = 1e-10) {
    const std::size_t n = m.dim();
    Mat a = m.full();
    double dmax = 1.0;
    for (std::size_t i = 0; i < n; ++i) dmax = std::max(dmax, std::abs(a(i, i)));
    const double cut = tol * dmax;

    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;

    for (std::size_t k = 0; k < n; ++k) {
        std::size_t p = k;
        for (std::size_t j = k + 1; j < n; ++j)
            if (a(idx[j], idx[j]) > a(idx[p], idx[p])) p = j;
        std::swap(idx[k], idx[p]);
        const double piv = a(idx[k], idx[k]);
        if (piv <= cut) {
            // Remaining block is numerically zero or indefinite; PSD iff no
            // trailing diagonal entry is meaningfully negative.
            for (std::size_t j = k; j < n; ++j)
                if (a(idx[j], idx[j]) < -cut) return false;
            return true;
        }
        for (std::size_t i = k + 1; i < n; ++i) {
            const double lik = a(idx[i], idx[k]) / piv;
            for (std::size_t j = k + 1; j <= i; ++j) {
                const double upd = a(idx[i], idx[j]) - lik * a(idx[j], idx[k]);
                a(idx[i], idx[j]) = upd;
                a(idx[j], idx[i]) = upd;
            }
        }
    }
    return true;
}

/// Schur complement of the block matrix [[A, B^T], [B, C]]: A - B^T C^{-1} B.
/// C must be positive definite.
inline SymMatrix schur_reduce(const SymMatrix& a, const Mat& b, const SymMatrix& c) {
    if (b.cols != a.dim() || b.rows != c.dim())
        throw DimensionMismatch("schur_reduce: block shapes");
    auto l = chol(c);
    if (!l) throw NotPositiveDefinite("schur_reduce: C block not positive definite");
    Mat x = chol_solve_mat(*l, b);  // C^{-1} B
    return SymMatrix(a.full() - b.T() * x);
}

/// Assemble [[A, B^T], [B, C]] for checking both routes of a reduction.
inline SymMatrix schur_full_block(const SymMatrix& a, const Mat& b, const SymMatrix& c) {
    const std::size_t n = a.dim(), m = c.dim();
    Mat f(n + m, n + m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) f(i, j) = a(i, j);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) f(n + i, n + j) = c(i, j);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            f(n + i, j) = b(i, j);
            f(j, n + i) = b(i, j);
        }
    return SymMatrix(f);
}

inline std::string to_string(const Mat& m, int prec = 6) {
    std::ostringstream os;
    os.precision(prec);
    for (std::size_t i = 0; i < m.rows; ++i) {
        os << (i == 0 ? "[[" : " [");
        for (std::size_t j = 0; j < m.cols; ++j)
            os << m(i, j) << (j + 1 < m.cols ? ", " : "");
        os << (i + 1 < m.rows ? "],\n" : "]]");
    }
    return os.str();
}

inline std::string to_string(const SymMatrix& m, int prec = 6) {
    return to_string(m.full(), prec);
}

} // namespace stocon
