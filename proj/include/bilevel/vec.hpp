#pragma once

// Dense vector helpers and the small dense linear algebra used by problem
// construction, closed-form references and the exact-solve metrics. Desk-scale
// dimensions only; nothing here is tuned for large p or d.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace bilevel {

using Vec = std::vector<double>;

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline double sq_norm(const Vec& a) { return dot(a, a); }

inline double norm(const Vec& a) { return std::sqrt(sq_norm(a)); }

// y += alpha * x
inline void axpy(double alpha, const Vec& x, Vec& y) {
  for (std::size_t k = 0; k < x.size(); ++k) y[k] += alpha * x[k];
}

inline void scale(Vec& a, double alpha) {
  for (double& v : a) v *= alpha;
}

inline Vec scaled(const Vec& a, double alpha) {
  Vec r(a);
  scale(r, alpha);
  return r;
}

inline Vec add(const Vec& a, const Vec& b) {
  Vec r(a);
  axpy(1.0, b, r);
  return r;
}

inline Vec sub(const Vec& a, const Vec& b) {
  Vec r(a);
  axpy(-1.0, b, r);
  return r;
}

inline bool all_finite(const Vec& a) {
  for (double v : a) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

inline double max_abs(const Vec& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const {
    return data[i * cols + j];
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
};

inline Vec matvec(const Matrix& m, const Vec& x) {
  Vec y(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double s = 0.0;
    const double* row = &m.data[i * m.cols];
    for (std::size_t j = 0; j < m.cols; ++j) s += row[j] * x[j];
    y[i] = s;
  }
  return y;
}

// y = m^T x
inline Vec matvec_t(const Matrix& m, const Vec& x) {
  Vec y(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double* row = &m.data[i * m.cols];
    for (std::size_t j = 0; j < m.cols; ++j) y[j] += row[j] * x[i];
  }
  return y;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: shape mismatch");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

// In-place Cholesky factor L (lower) of an SPD matrix. Throws if a pivot is
// not positive.
inline Matrix cholesky(const Matrix& a) {
  if (a.rows != a.cols) throw std::invalid_argument("cholesky: not square");
  const std::size_t n = a.rows;
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (diag <= 0.0) throw std::runtime_error("cholesky: matrix not SPD");
    l(j, j) = std::sqrt(diag);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

inline bool is_spd(const Matrix& a) {
  try {
    (void)cholesky(a);
    return true;
  } catch (const std::runtime_error&) {
    return false;
  }
}

inline Vec cholesky_solve(const Matrix& l, const Vec& b) {
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

// Direct SPD solve, used for closed-form references.
inline Vec spd_solve(const Matrix& a, const Vec& b) {
  return cholesky_solve(cholesky(a), b);
}

// Smallest eigenvalue of an SPD matrix by inverse power iteration.
inline double smallest_eig_spd(const Matrix& a, std::size_t iters = 200) {
  const Matrix l = cholesky(a);
  Vec v(a.rows, 1.0);
  scale(v, 1.0 / norm(v));
  double lambda = 0.0;
  for (std::size_t it = 0; it < iters; ++it) {
    Vec w = cholesky_solve(l, v);
    const double wn = norm(w);
    scale(w, 1.0 / wn);
    lambda = dot(w, matvec(a, w));
    v = std::move(w);
  }
  return lambda;
}

// Largest eigenvalue of a symmetric PSD matrix by power iteration.
inline double largest_eig_spd(const Matrix& a, std::size_t iters = 200) {
  Vec v(a.rows, 1.0);
  scale(v, 1.0 / norm(v));
  double lambda = 0.0;
  for (std::size_t it = 0; it < iters; ++it) {
    Vec w = matvec(a, v);
    const double wn = norm(w);
    if (wn == 0.0) return 0.0;
    scale(w, 1.0 / wn);
    lambda = dot(w, matvec(a, w));
    v = std::move(w);
  }
  return lambda;
}

}  // namespace bilevel
