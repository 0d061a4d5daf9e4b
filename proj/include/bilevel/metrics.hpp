#pragma once

// Ground-truth evaluation path: exact inner solve (L-BFGS on the full-batch
// G), exact adjoint solve (matrix-free conjugate gradient), value function
// and hypergradient, suboptimality against a registered optimum, and the
// delta diagnostics. Nothing here samples; results are deterministic given
// the configuration.

#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include "bilevel/oracle.hpp"
#include "bilevel/vec.hpp"

namespace bilevel {

struct ExactSolveConfig {
  double inner_tol = 1e-10;   // gradient-norm target for the inner solve
  std::size_t max_iters = 20000;
  double linear_tol = 1e-10;  // residual target for the adjoint system

  void validate() const {
    if (inner_tol <= 0.0 || linear_tol <= 0.0)
      throw std::invalid_argument("ExactSolveConfig: tolerances must be > 0");
  }
};

class ToleranceNotMet : public std::runtime_error {
 public:
  ToleranceNotMet(const std::string& where, double achieved, double target)
      : std::runtime_error(where + ": achieved residual " +
                           std::to_string(achieved) + " > target " +
                           std::to_string(target)),
        achieved_(achieved) {}
  double achieved() const { return achieved_; }

 private:
  double achieved_;
};

class UnsupportedMetric : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct LbfgsPair {
  Vec s, y;
  double rho;
};

}  // namespace detail

// Minimize the full-batch inner objective G(., x) with L-BFGS (memory 10,
// Armijo backtracking). G is strongly convex for every problem here, so the
// gradient-norm stopping rule is well posed.
inline Vec solve_inner(const BilevelOracle& oracle, const Vec& x,
                       const ExactSolveConfig& cfg = {}) {
  cfg.validate();
  const auto dm = oracle.dims();
  Vec z(dm.p, 0.0);

  auto value = [&](const Vec& zz) { return mean_g_value(oracle, zz, x); };
  auto gradient = [&](const Vec& zz) {
    JointState s{zz, Vec(dm.p, 0.0), x};
    return batch_mean(oracle, SampledOp::grad_g_in, 0, dm.n, s);
  };

  constexpr std::size_t kHistory = 10;
  std::deque<detail::LbfgsPair> pairs;
  Vec g = gradient(z);
  double fz = value(z);

  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    const double gn = norm(g);
    if (gn <= cfg.inner_tol) return z;

    // two-loop recursion
    Vec q = g;
    std::vector<double> alphas(pairs.size());
    for (std::size_t idx = pairs.size(); idx-- > 0;) {
      const auto& pr = pairs[idx];
      alphas[idx] = pr.rho * dot(pr.s, q);
      axpy(-alphas[idx], pr.y, q);
    }
    if (!pairs.empty()) {
      const auto& last = pairs.back();
      const double gamma = dot(last.s, last.y) / dot(last.y, last.y);
      scale(q, gamma);
    }
    for (std::size_t idx = 0; idx < pairs.size(); ++idx) {
      const auto& pr = pairs[idx];
      const double beta = pr.rho * dot(pr.y, q);
      axpy(alphas[idx] - beta, pr.s, q);
    }
    scale(q, -1.0);  // descent direction

    double slope = dot(g, q);
    if (slope >= 0.0) {  // fall back to steepest descent
      q = scaled(g, -1.0);
      slope = -gn * gn;
      pairs.clear();
    }

    // Armijo backtracking; once f-differences sink below numerical noise the
    // sufficient-decrease test is blind, so acceptance falls back to a strict
    // reduction of the gradient norm.
    double step = 1.0;
    Vec z_new, g_new;
    double f_new = 0.0;
    bool accepted = false;
    bool have_g_new = false;
    const double f_noise = 64.0 * std::numeric_limits<double>::epsilon() *
                           std::max(1.0, std::abs(fz));
    for (int bt = 0; bt < 60; ++bt) {
      z_new = z;
      axpy(step, q, z_new);
      f_new = value(z_new);
      if (f_new <= fz + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      if (std::abs(f_new - fz) <= f_noise) {
        g_new = gradient(z_new);
        have_g_new = true;
        if (norm(g_new) < gn) {
          accepted = true;
          break;
        }
        have_g_new = false;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // step underflow: the iterate is at the numerical floor
      if (gn <= 1e3 * cfg.inner_tol) return z;
      throw ToleranceNotMet("solve_inner (line search)", gn, cfg.inner_tol);
    }

    if (!have_g_new) g_new = gradient(z_new);
    Vec s_vec = sub(z_new, z);
    Vec y_vec = sub(g_new, g);
    const double sy = dot(s_vec, y_vec);
    if (sy > 1e-12 * norm(s_vec) * norm(y_vec)) {
      pairs.push_back({std::move(s_vec), std::move(y_vec), 1.0 / sy});
      if (pairs.size() > kHistory) pairs.pop_front();
    }
    z = std::move(z_new);
    g = std::move(g_new);
    fz = f_new;
  }
  const double gn = norm(g);
  if (gn <= cfg.inner_tol) return z;
  throw ToleranceNotMet("solve_inner", gn, cfg.inner_tol);
}

// Solve hess_11 G(z_star, x) v = -grad_1 F(z_star, x) by conjugate gradient,
// touching the Hessian only through products.
inline Vec solve_adjoint(const BilevelOracle& oracle, const Vec& z_star, const Vec& x,
                         const ExactSolveConfig& cfg = {}) {
  cfg.validate();
  const auto dm = oracle.dims();
  JointState s{z_star, Vec(dm.p, 0.0), x};
  Vec rhs = batch_mean(oracle, SampledOp::grad_f_in, 0, dm.m, s);
  scale(rhs, -1.0);

  auto apply = [&](const Vec& v) {
    JointState sv{z_star, v, x};
    return batch_mean(oracle, SampledOp::hvp_g, 0, dm.n, sv);
  };

  Vec v(dm.p, 0.0);
  Vec r = rhs;  // residual of v = 0
  Vec p_dir = r;
  double rs = sq_norm(r);
  const double rhs_norm = std::sqrt(sq_norm(rhs));
  if (rhs_norm == 0.0) return v;

  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    if (std::sqrt(rs) <= cfg.linear_tol) return v;
    Vec hp = apply(p_dir);
    const double denom = dot(p_dir, hp);
    if (denom <= 0.0)
      throw ToleranceNotMet("solve_adjoint (non-SPD curvature)", std::sqrt(rs),
                            cfg.linear_tol);
    const double alpha = rs / denom;
    axpy(alpha, p_dir, v);
    axpy(-alpha, hp, r);
    const double rs_new = sq_norm(r);
    const double beta = rs_new / rs;
    rs = rs_new;
    Vec p_next = r;
    axpy(beta, p_dir, p_next);
    p_dir = std::move(p_next);
  }
  if (std::sqrt(rs) <= cfg.linear_tol) return v;
  throw ToleranceNotMet("solve_adjoint", std::sqrt(rs), cfg.linear_tol);
}

struct ValueGrad {
  double h = 0.0;
  Vec grad;
  Vec z_star;
  Vec v_star;
};

// h(x) = F(z*(x), x) and its implicit gradient
//   grad h = grad_2 F(z*, x) + cross_21 G(z*, x) v*.
inline ValueGrad value_and_grad(const BilevelOracle& oracle, const Vec& x,
                                const ExactSolveConfig& cfg = {}) {
  const auto dm = oracle.dims();
  ValueGrad out;
  out.z_star = solve_inner(oracle, x, cfg);
  out.v_star = solve_adjoint(oracle, out.z_star, x, cfg);
  out.h = mean_f_value(oracle, out.z_star, x);
  JointState s{out.z_star, out.v_star, x};
  out.grad = batch_mean(oracle, SampledOp::cross_g, 0, dm.n, s);
  axpy(1.0, batch_mean(oracle, SampledOp::grad_f_out, 0, dm.m, s), out.grad);
  return out;
}

// h(x) - h*, requiring a registered reference optimum (closed form on the
// problem, or supplied from a cache).
inline double suboptimality(const BilevelOracle& oracle, const Vec& x,
                            const ExactSolveConfig& cfg = {},
                            std::optional<double> h_star_override = std::nullopt) {
  std::optional<double> h_star =
      h_star_override ? h_star_override : oracle.reference_optimum();
  if (!h_star)
    throw UnsupportedMetric("suboptimality: no reference optimum registered");
  const ValueGrad vg = value_and_grad(oracle, x, cfg);
  return vg.h - *h_star;
}

// (||z - z*(x)||^2, ||v - v*(x)||^2): single-trajectory surrogates of the
// delta_z / delta_v diagnostics.
inline std::pair<double, double> delta_diagnostics(const BilevelOracle& oracle,
                                                   const JointState& s,
                                                   const ExactSolveConfig& cfg = {}) {
  const Vec zs = solve_inner(oracle, s.x, cfg);
  const Vec vs = solve_adjoint(oracle, zs, s.x, cfg);
  return {sq_norm(sub(s.z, zs)), sq_norm(sub(s.v, vs))};
}

// Misclassification rate of the problem's argmax predictor; only defined for
// classification problems.
inline double test_error(const BilevelOracle& oracle, const Vec& z) {
  const auto* cls = dynamic_cast<const ClassificationOracle*>(&oracle);
  if (cls == nullptr)
    throw UnsupportedMetric("test_error: not a classification problem");
  return cls->test_error(z);
}

}  // namespace bilevel
