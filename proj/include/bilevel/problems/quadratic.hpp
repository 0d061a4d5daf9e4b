#pragma once

// Quadratic bilevel testbed with closed-form ground truth:
//
//   G_i(z, x) = 1/2 z'A_i z + x'B_i z + c_i'z
//   F_j(z, x) = 1/2 (z - e_j)'P_j (z - e_j) + 1/2 (x - f_j)'Q_j (x - f_j)
//
// The mean inner Hessian is SPD, so z*(x), v*(x), h, grad h and the outer
// optimum are all available by direct linear solves. h is a strongly convex
// quadratic in x, hence PL.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "bilevel/hash.hpp"
#include "bilevel/oracle.hpp"
#include "bilevel/rng.hpp"
#include "bilevel/vec.hpp"

namespace bilevel {

class QuadraticBilevel final : public BilevelOracle {
 public:
  QuadraticBilevel(std::vector<Matrix> a, std::vector<Matrix> b, std::vector<Vec> c,
                   std::vector<Matrix> p_mats, std::vector<Vec> e,
                   std::vector<Matrix> q_mats, std::vector<Vec> f,
                   double mu, std::uint64_t tag)
      : a_(std::move(a)),
        b_(std::move(b)),
        c_(std::move(c)),
        p_(std::move(p_mats)),
        e_(std::move(e)),
        q_(std::move(q_mats)),
        f_(std::move(f)),
        mu_(mu),
        tag_(tag) {
    dims_.n = a_.size();
    dims_.m = p_.size();
    dims_.p = a_.front().rows;
    dims_.d = b_.front().rows;
    dims_.validate();
    build_means();
  }

  ProblemDims dims() const override { return dims_; }

  double g_value(std::size_t i, const Vec& z, const Vec& x) const override {
    check_inner_index(i);
    const Vec az = matvec(a_[i], z);
    const Vec bz = matvec(b_[i], z);  // in R^d
    return 0.5 * dot(z, az) + dot(x, bz) + dot(c_[i], z);
  }

  Vec grad_g_in(std::size_t i, const Vec& z, const Vec& x) const override {
    check_inner_index(i);
    Vec g = matvec(a_[i], z);
    axpy(1.0, matvec_t(b_[i], x), g);
    axpy(1.0, c_[i], g);
    return g;
  }

  Vec hvp_g(std::size_t i, const Vec&, const Vec&, const Vec& v) const override {
    check_inner_index(i);
    return matvec(a_[i], v);
  }

  Vec cross_g(std::size_t i, const Vec&, const Vec&, const Vec& v) const override {
    check_inner_index(i);
    return matvec(b_[i], v);
  }

  Vec grad_g_out(std::size_t i, const Vec& z, const Vec&) const override {
    check_inner_index(i);
    return matvec(b_[i], z);
  }

  double f_value(std::size_t j, const Vec& z, const Vec& x) const override {
    check_outer_index(j);
    const Vec dz = sub(z, e_[j]);
    const Vec dx = sub(x, f_[j]);
    return 0.5 * dot(dz, matvec(p_[j], dz)) + 0.5 * dot(dx, matvec(q_[j], dx));
  }

  Vec grad_f_in(std::size_t j, const Vec& z, const Vec&) const override {
    check_outer_index(j);
    return matvec(p_[j], sub(z, e_[j]));
  }

  Vec grad_f_out(std::size_t j, const Vec&, const Vec& x) const override {
    check_outer_index(j);
    return matvec(q_[j], sub(x, f_[j]));
  }

  double strong_convexity_lb(const Vec&) const override { return mu_; }

  std::optional<double> reference_optimum() const override { return h_opt(); }

  std::uint64_t fingerprint() const override {
    std::uint64_t h = fnv1a("quadratic");
    h = fnv1a_u64(tag_, h);
    h = fnv1a_u64(dims_.n, h);
    h = fnv1a_u64(dims_.m, h);
    h = fnv1a_u64(dims_.p, h);
    h = fnv1a_u64(dims_.d, h);
    return fnv1a_double(mu_, h);
  }

  // ---- closed-form ground truth -------------------------------------------

  Vec z_star(const Vec& x) const {
    Vec rhs = matvec_t(mean_b_, x);
    axpy(1.0, mean_c_, rhs);
    scale(rhs, -1.0);
    return cholesky_solve(mean_a_chol_, rhs);
  }

  Vec v_star(const Vec& x) const {
    // grad_1 F(z*, x) = mean_P z* - mean(P_j e_j)
    Vec rhs = matvec(mean_p_, z_star(x));
    axpy(-1.0, mean_pe_, rhs);
    scale(rhs, -1.0);
    return cholesky_solve(mean_a_chol_, rhs);
  }

  double h_value(const Vec& x) const {
    const Vec zs = z_star(x);
    double s = 0.0;
    for (std::size_t j = 0; j < dims_.m; ++j) s += f_value(j, zs, x);
    return s / static_cast<double>(dims_.m);
  }

  Vec h_grad(const Vec& x) const {
    // grad h = grad_2 F(z*, x) + mean_B v*
    Vec g = matvec(mean_q_, x);
    axpy(-1.0, mean_qf_, g);
    axpy(1.0, matvec(mean_b_, v_star(x)), g);
    return g;
  }

  // Outer optimum by solving the affine system grad h(x) = 0.
  Vec x_opt() const {
    const std::size_t d = dims_.d;
    const Vec g0 = h_grad(Vec(d, 0.0));
    Matrix hess(d, d);
    for (std::size_t k = 0; k < d; ++k) {
      Vec ek(d, 0.0);
      ek[k] = 1.0;
      const Vec gk = h_grad(ek);
      for (std::size_t r = 0; r < d; ++r) hess(r, k) = gk[r] - g0[r];
    }
    return spd_solve(hess, scaled(g0, -1.0));
  }

  double h_opt() const { return h_value(x_opt()); }

 private:
  void build_means() {
    const auto [n, m, p, d] = dims_;
    mean_a_ = Matrix(p, p);
    mean_b_ = Matrix(d, p);
    mean_c_ = Vec(p, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      axpy(1.0, a_[i].data, mean_a_.data);
      axpy(1.0, b_[i].data, mean_b_.data);
      axpy(1.0, c_[i], mean_c_);
    }
    scale(mean_a_.data, 1.0 / static_cast<double>(n));
    scale(mean_b_.data, 1.0 / static_cast<double>(n));
    scale(mean_c_, 1.0 / static_cast<double>(n));

    mean_p_ = Matrix(p, p);
    mean_q_ = Matrix(d, d);
    mean_pe_ = Vec(p, 0.0);
    mean_qf_ = Vec(d, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
      axpy(1.0, p_[j].data, mean_p_.data);
      axpy(1.0, q_[j].data, mean_q_.data);
      axpy(1.0, matvec(p_[j], e_[j]), mean_pe_);
      axpy(1.0, matvec(q_[j], f_[j]), mean_qf_);
    }
    scale(mean_p_.data, 1.0 / static_cast<double>(m));
    scale(mean_q_.data, 1.0 / static_cast<double>(m));
    scale(mean_pe_, 1.0 / static_cast<double>(m));
    scale(mean_qf_, 1.0 / static_cast<double>(m));

    mean_a_chol_ = cholesky(mean_a_);
  }

  std::vector<Matrix> a_;
  std::vector<Matrix> b_;
  std::vector<Vec> c_;
  std::vector<Matrix> p_;
  std::vector<Vec> e_;
  std::vector<Matrix> q_;
  std::vector<Vec> f_;
  double mu_;
  std::uint64_t tag_;
  ProblemDims dims_;

  Matrix mean_a_, mean_b_, mean_p_, mean_q_, mean_a_chol_;
  Vec mean_c_, mean_pe_, mean_qf_;
};

namespace detail {

inline Matrix random_spd(RngStream& rng, std::size_t n, double ridge) {
  Matrix m(n, n);
  for (double& v : m.data) v = rng.normal();
  Matrix spd = matmul(m, transpose(m));
  scale(spd.data, 1.0 / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) spd(i, i) += ridge;
  return spd;
}

}  // namespace detail

// Random heterogeneous instance. Each A_i = M_i M_i'/p + mu I is SPD, so the
// per-sample Lipschitz requirements hold by construction, not just on the
// mean.
inline QuadraticBilevel make_quadratic(std::uint64_t seed, const ProblemDims& dims,
                                       double mu) {
  dims.validate();
  if (mu <= 0.0) throw std::invalid_argument("make_quadratic: mu must be > 0");
  RngStream rng(seed, /*stream=*/0x71AD);

  std::vector<Matrix> a, b, pm, qm;
  std::vector<Vec> c, e, f;
  const double b_scale = 0.5 / std::sqrt(static_cast<double>(dims.p));
  for (std::size_t i = 0; i < dims.n; ++i) {
    a.push_back(detail::random_spd(rng, dims.p, mu));
    Matrix bi(dims.d, dims.p);
    for (double& v : bi.data) v = b_scale * rng.normal();
    b.push_back(std::move(bi));
    Vec ci(dims.p);
    for (double& v : ci) v = rng.normal();
    c.push_back(std::move(ci));
  }
  for (std::size_t j = 0; j < dims.m; ++j) {
    pm.push_back(detail::random_spd(rng, dims.p, 0.1));
    Vec ej(dims.p);
    for (double& v : ej) v = rng.normal();
    e.push_back(std::move(ej));
    qm.push_back(detail::random_spd(rng, dims.d, 0.5));
    Vec fj(dims.d);
    for (double& v : fj) v = rng.normal();
    f.push_back(std::move(fj));
  }
  return QuadraticBilevel(std::move(a), std::move(b), std::move(c), std::move(pm),
                          std::move(e), std::move(qm), std::move(f), mu, seed);
}

// Decoupled special case: A_i = I, B_i = 0, F = 1/2 ||x||^2. Then z*(x) is
// constant and grad h(x) = x.
inline QuadraticBilevel make_decoupled_quadratic(const ProblemDims& dims) {
  dims.validate();
  std::vector<Matrix> a(dims.n, Matrix::identity(dims.p));
  std::vector<Matrix> b(dims.n, Matrix(dims.d, dims.p));
  std::vector<Vec> c(dims.n, Vec(dims.p, 0.0));
  std::vector<Matrix> pm(dims.m, Matrix(dims.p, dims.p));
  std::vector<Vec> e(dims.m, Vec(dims.p, 0.0));
  std::vector<Matrix> qm(dims.m, Matrix::identity(dims.d));
  std::vector<Vec> f(dims.m, Vec(dims.d, 0.0));
  return QuadraticBilevel(std::move(a), std::move(b), std::move(c), std::move(pm),
                          std::move(e), std::move(qm), std::move(f), 1.0,
                          /*tag=*/0xDECA);
}

}  // namespace bilevel
