#pragma once

// Hyperparameter selection for ridge regression on generated data. The outer
// variable is the scalar penalty lambda (d = 1):
//
//   G(theta, lambda) = 1/(2n) sum (<x_i, theta> - y_i)^2 + lambda/2 ||theta||^2
//   F(theta, lambda) = 1/(2m) sum (<x_i^val, theta> - y_i^val)^2
//
// h(lambda) is computable exactly through the normal equations, which gives
// this problem an independent ground truth for the hypergradient.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "bilevel/hash.hpp"
#include "bilevel/oracle.hpp"
#include "bilevel/rng.hpp"
#include "bilevel/vec.hpp"

namespace bilevel {

class ToyRidgeProblem final : public BilevelOracle {
 public:
  ToyRidgeProblem(std::vector<Vec> train_x, Vec train_y, std::vector<Vec> val_x,
                  Vec val_y, std::uint64_t tag)
      : train_x_(std::move(train_x)),
        train_y_(std::move(train_y)),
        val_x_(std::move(val_x)),
        val_y_(std::move(val_y)),
        tag_(tag) {
    dims_.n = train_x_.size();
    dims_.m = val_x_.size();
    dims_.p = train_x_.front().size();
    dims_.d = 1;
    dims_.validate();
    build_gram();
    h_star_ = minimize_h();
  }

  ProblemDims dims() const override { return dims_; }

  double g_value(std::size_t i, const Vec& z, const Vec& x) const override {
    check_inner_index(i);
    const double r = dot(train_x_[i], z) - train_y_[i];
    return 0.5 * r * r + 0.5 * x[0] * sq_norm(z);
  }

  Vec grad_g_in(std::size_t i, const Vec& z, const Vec& x) const override {
    check_inner_index(i);
    const double r = dot(train_x_[i], z) - train_y_[i];
    Vec g = scaled(train_x_[i], r);
    axpy(x[0], z, g);
    return g;
  }

  Vec hvp_g(std::size_t i, const Vec&, const Vec& x, const Vec& v) const override {
    check_inner_index(i);
    Vec h = scaled(train_x_[i], dot(train_x_[i], v));
    axpy(x[0], v, h);
    return h;
  }

  Vec cross_g(std::size_t i, const Vec& z, const Vec&, const Vec& v) const override {
    check_inner_index(i);
    return {dot(z, v)};
  }

  Vec grad_g_out(std::size_t i, const Vec& z, const Vec&) const override {
    check_inner_index(i);
    return {0.5 * sq_norm(z)};
  }

  GDerivs g_derivs(std::size_t i, const Vec& z, const Vec& x,
                   const Vec& v) const override {
    check_inner_index(i);
    const double pred = dot(train_x_[i], z);
    const double dir = dot(train_x_[i], v);
    Vec g = scaled(train_x_[i], pred - train_y_[i]);
    axpy(x[0], z, g);
    Vec h = scaled(train_x_[i], dir);
    axpy(x[0], v, h);
    return {std::move(g), std::move(h), Vec{dot(z, v)}};
  }

  double f_value(std::size_t j, const Vec& z, const Vec&) const override {
    check_outer_index(j);
    const double r = dot(val_x_[j], z) - val_y_[j];
    return 0.5 * r * r;
  }

  Vec grad_f_in(std::size_t j, const Vec& z, const Vec&) const override {
    check_outer_index(j);
    return scaled(val_x_[j], dot(val_x_[j], z) - val_y_[j]);
  }

  Vec grad_f_out(std::size_t j, const Vec&, const Vec&) const override {
    check_outer_index(j);
    return {0.0};
  }

  // inner Hessian is gram + lambda I, an exact eigenvalue shift
  double strong_convexity_lb(const Vec& x) const override {
    return gram_min_eig_ + x[0];
  }

  // computed once at construction so the call stays pure
  std::optional<double> reference_optimum() const override { return h_star_; }

  std::uint64_t fingerprint() const override {
    std::uint64_t h = fnv1a("toy_ridge");
    h = fnv1a_u64(tag_, h);
    h = fnv1a_u64(dims_.n, h);
    h = fnv1a_u64(dims_.m, h);
    return fnv1a_u64(dims_.p, h);
  }

  // ---- exact references ----------------------------------------------------

  // Solve (X'X/n + lambda I) theta = X'y/n directly.
  Vec theta_star(double lambda) const {
    Matrix a = gram_;
    for (std::size_t k = 0; k < dims_.p; ++k) a(k, k) += lambda;
    return spd_solve(a, xty_);
  }

  double h_exact(double lambda) const {
    const Vec th = theta_star(lambda);
    double s = 0.0;
    for (std::size_t j = 0; j < dims_.m; ++j) {
      const double r = dot(val_x_[j], th) - val_y_[j];
      s += 0.5 * r * r;
    }
    return s / static_cast<double>(dims_.m);
  }

 private:
  void build_gram() {
    gram_ = Matrix(dims_.p, dims_.p);
    xty_ = Vec(dims_.p, 0.0);
    for (std::size_t i = 0; i < dims_.n; ++i) {
      for (std::size_t r = 0; r < dims_.p; ++r) {
        for (std::size_t c = 0; c < dims_.p; ++c)
          gram_(r, c) += train_x_[i][r] * train_x_[i][c];
        xty_[r] += train_x_[i][r] * train_y_[i];
      }
    }
    scale(gram_.data, 1.0 / static_cast<double>(dims_.n));
    scale(xty_, 1.0 / static_cast<double>(dims_.n));
    gram_min_eig_ = smallest_eig_spd(gram_);
  }

  // Coarse scan over log lambda followed by golden-section refinement.
  double minimize_h() const {
    constexpr double kLogLo = -18.0;  // lambda ~ 1.5e-8
    constexpr double kLogHi = 7.0;    // lambda ~ 1.1e3
    constexpr int kScan = 400;
    double best_t = kLogLo;
    double best_h = h_exact(std::exp(kLogLo));
    for (int k = 1; k <= kScan; ++k) {
      const double t = kLogLo + (kLogHi - kLogLo) * k / kScan;
      const double hv = h_exact(std::exp(t));
      if (hv < best_h) {
        best_h = hv;
        best_t = t;
      }
    }
    const double step = (kLogHi - kLogLo) / kScan;
    double lo = best_t - step, hi = best_t + step;
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = hi - inv_phi * (hi - lo);
    double dpt = lo + inv_phi * (hi - lo);
    double fc = h_exact(std::exp(c));
    double fd = h_exact(std::exp(dpt));
    for (int it = 0; it < 120; ++it) {
      if (fc < fd) {
        hi = dpt;
        dpt = c;
        fd = fc;
        c = hi - inv_phi * (hi - lo);
        fc = h_exact(std::exp(c));
      } else {
        lo = c;
        c = dpt;
        fc = fd;
        dpt = lo + inv_phi * (hi - lo);
        fd = h_exact(std::exp(dpt));
      }
    }
    return std::min(fc, fd);
  }

  std::vector<Vec> train_x_;
  Vec train_y_;
  std::vector<Vec> val_x_;
  Vec val_y_;
  std::uint64_t tag_;
  ProblemDims dims_;
  Matrix gram_;
  Vec xty_;
  double gram_min_eig_ = 0.0;
  double h_star_ = 0.0;
};

// Generator following the toy recipe: 1000 draws from N(0, I_10), design
// modulation W_ij = 1 + u_j v_ij with u_j ~ U[0,1] for the first five
// features and U[0,10] for the rest, targets y = (X .* W) beta + eps with
// eps ~ N(0, 0.01 I), split 750 train / 250 validation.
inline ToyRidgeProblem make_toy_ridge(std::uint64_t seed) {
  constexpr std::size_t kSamples = 1000;
  constexpr std::size_t kTrain = 750;
  constexpr std::size_t kFeatures = 10;
  RngStream rng(seed, /*stream=*/0x41D6E);

  std::vector<Vec> x(kSamples, Vec(kFeatures));
  for (auto& row : x)
    for (double& v : row) v = rng.normal();

  Vec beta(kFeatures);
  for (double& v : beta) v = rng.normal();

  Vec u(kFeatures);
  for (std::size_t j = 0; j < kFeatures; ++j)
    u[j] = (j < 5) ? rng.uniform(0.0, 1.0) : rng.uniform(0.0, 10.0);

  Vec y(kSamples, 0.0);
  for (std::size_t i = 0; i < kSamples; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < kFeatures; ++j) {
      const double w = 1.0 + u[j] * rng.uniform(0.0, 1.0);
      s += x[i][j] * w * beta[j];
    }
    y[i] = s + 0.1 * rng.normal();
  }

  std::vector<Vec> train_x(x.begin(), x.begin() + kTrain);
  std::vector<Vec> val_x(x.begin() + kTrain, x.end());
  Vec train_y(y.begin(), y.begin() + kTrain);
  Vec val_y(y.begin() + kTrain, y.end());
  return ToyRidgeProblem(std::move(train_x), std::move(train_y), std::move(val_x),
                         std::move(val_y), seed);
}

}  // namespace bilevel
