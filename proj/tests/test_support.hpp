#pragma once

// Shared test oracles, independent of the library's implementation paths:
// central finite differences, Gaussian-elimination solve, and enumeration
// helpers.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "bilevel/oracle.hpp"
#include "bilevel/rng.hpp"
#include "bilevel/vec.hpp"

namespace testsupport {

using bilevel::Vec;

inline constexpr double kFdStep = 1e-6;

inline double rel_err(double got, double want) {
  const double scale = std::max(std::abs(want), 1e-12);
  return std::abs(got - want) / scale;
}

inline double rel_err(const Vec& got, const Vec& want) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < got.size(); ++k) {
    num += (got[k] - want[k]) * (got[k] - want[k]);
    den += want[k] * want[k];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

inline double max_abs_diff(const Vec& a, const Vec& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

// central finite-difference gradient of a scalar function
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& at,
                       double eps = kFdStep) {
  Vec g(at.size());
  Vec probe = at;
  for (std::size_t k = 0; k < at.size(); ++k) {
    probe[k] = at[k] + eps;
    const double up = f(probe);
    probe[k] = at[k] - eps;
    const double dn = f(probe);
    probe[k] = at[k];
    g[k] = (up - dn) / (2.0 * eps);
  }
  return g;
}

// central finite difference of a vector function along direction u
inline Vec fd_directional(const std::function<Vec(const Vec&)>& f, const Vec& at,
                          const Vec& u, double eps = kFdStep) {
  Vec up_at = at, dn_at = at;
  bilevel::axpy(eps, u, up_at);
  bilevel::axpy(-eps, u, dn_at);
  const Vec up = f(up_at);
  const Vec dn = f(dn_at);
  Vec d(up.size());
  for (std::size_t k = 0; k < d.size(); ++k) d[k] = (up[k] - dn[k]) / (2.0 * eps);
  return d;
}

// directional derivative of a scalar function: <grad f, u>
inline double fd_scalar_directional(const std::function<double(const Vec&)>& f,
                                    const Vec& at, const Vec& u,
                                    double eps = kFdStep) {
  Vec up_at = at, dn_at = at;
  bilevel::axpy(eps, u, up_at);
  bilevel::axpy(-eps, u, dn_at);
  return (f(up_at) - f(dn_at)) / (2.0 * eps);
}

// Dense solve by Gaussian elimination with partial pivoting; deliberately a
// different algorithm than the library's Cholesky path.
inline Vec gauss_solve(bilevel::Matrix a, Vec b) {
  const std::size_t n = a.rows;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    if (a(piv, col) == 0.0) throw std::runtime_error("gauss_solve: singular");
    if (piv != col) {
      for (std::size_t cc = 0; cc < n; ++cc) std::swap(a(col, cc), a(piv, cc));
      std::swap(b[col], b[piv]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double factor = a(r, col) / a(col, col);
      for (std::size_t cc = col; cc < n; ++cc) a(r, cc) -= factor * a(col, cc);
      b[r] -= factor * b[col];
    }
  }
  Vec x(n);
  for (std::size_t rr = n; rr-- > 0;) {
    double s = b[rr];
    for (std::size_t cc = rr + 1; cc < n; ++cc) s -= a(rr, cc) * x[cc];
    x[rr] = s / a(rr, rr);
  }
  return x;
}

inline Vec random_vec(bilevel::RngStream& rng, std::size_t n, double scale = 1.0) {
  Vec v(n);
  for (double& e : v) e = scale * rng.normal();
  return v;
}

inline bilevel::JointState random_state(bilevel::RngStream& rng,
                                        const bilevel::ProblemDims& dm,
                                        double scale = 1.0) {
  return {random_vec(rng, dm.p, scale), random_vec(rng, dm.p, scale),
          random_vec(rng, dm.d, scale)};
}

}  // namespace testsupport
