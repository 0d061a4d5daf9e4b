#pragma once

// Per-feature penalized logistic regression (hyperparameter selection). One
// penalty weight per feature, parameterized as exp(lambda_k) to avoid
// positivity constraints:
//
//   G(theta, lambda) = 1/n sum phi(y_i <d_i, theta>)
//                      + 1/2 sum_k exp(lambda_k) theta_k^2
//   F(theta, lambda) = 1/m sum phi(y_j <d_j, theta>)
//
// with phi(u) = log(1 + exp(-u)). Labels are +/-1; d = p.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>

#include "bilevel/data/dataset.hpp"
#include "bilevel/hash.hpp"
#include "bilevel/oracle.hpp"

namespace bilevel {

// Reference dimensions of the full-scale dataset this task targets; used for
// config validation when real data is supplied.
namespace ijcnn1 {
inline constexpr std::size_t kTrain = 49990;
inline constexpr std::size_t kVal = 91701;
inline constexpr std::size_t kFeatures = 22;
}  // namespace ijcnn1

namespace detail {

// log(1 + exp(-u)) without overflow
inline double logistic_loss(double u) {
  return u > 0.0 ? std::log1p(std::exp(-u)) : -u + std::log1p(std::exp(u));
}

// d/du log(1 + exp(-u)) = -1 / (1 + exp(u))
inline double logistic_loss_d1(double u) {
  return u > 0.0 ? -std::exp(-u) / (1.0 + std::exp(-u)) : -1.0 / (1.0 + std::exp(u));
}

// second derivative, sigma(u) sigma(-u)
inline double logistic_loss_d2(double u) {
  const double e = std::exp(-std::abs(u));
  const double denom = (1.0 + e) * (1.0 + e);
  return e / denom;
}

}  // namespace detail

class LogRegHyperProblem final : public BilevelOracle, public ClassificationOracle {
 public:
  LogRegHyperProblem(SparseDataset train, SparseDataset val,
                     SparseDataset test = {})
      : train_(std::move(train)), val_(std::move(val)), test_(std::move(test)) {
    normalize_labels(train_);
    normalize_labels(val_);
    if (test_.num_rows() > 0) normalize_labels(test_);
    dims_.n = train_.num_rows();
    dims_.m = val_.num_rows();
    dims_.p = std::max(train_.num_features, val_.num_features);
    dims_.d = dims_.p;
    dims_.validate();
  }

  ProblemDims dims() const override { return dims_; }

  double g_value(std::size_t i, const Vec& z, const Vec& x) const override {
    check_inner_index(i);
    return detail::logistic_loss(train_.labels[i] * train_.row_dot(i, z)) +
           penalty_value(z, x);
  }

  Vec grad_g_in(std::size_t i, const Vec& z, const Vec& x) const override {
    check_inner_index(i);
    const double yi = train_.labels[i];
    const double slope = detail::logistic_loss_d1(yi * train_.row_dot(i, z)) * yi;
    Vec g(dims_.p, 0.0);
    train_.row_axpy(i, slope, g);
    for (std::size_t k = 0; k < dims_.p; ++k) g[k] += std::exp(x[k]) * z[k];
    return g;
  }

  Vec hvp_g(std::size_t i, const Vec& z, const Vec& x, const Vec& v) const override {
    check_inner_index(i);
    const double yi = train_.labels[i];
    const double curv = detail::logistic_loss_d2(yi * train_.row_dot(i, z));
    Vec h(dims_.p, 0.0);
    train_.row_axpy(i, curv * train_.row_dot(i, v), h);
    for (std::size_t k = 0; k < dims_.p; ++k) h[k] += std::exp(x[k]) * v[k];
    return h;
  }

  Vec cross_g(std::size_t i, const Vec& z, const Vec& x, const Vec& v) const override {
    check_inner_index(i);
    Vec c(dims_.d, 0.0);
    for (std::size_t k = 0; k < dims_.p; ++k) c[k] = std::exp(x[k]) * z[k] * v[k];
    return c;
  }

  Vec grad_g_out(std::size_t i, const Vec& z, const Vec& x) const override {
    check_inner_index(i);
    Vec g(dims_.d, 0.0);
    for (std::size_t k = 0; k < dims_.p; ++k)
      g[k] = 0.5 * std::exp(x[k]) * z[k] * z[k];
    return g;
  }

  // shares the prediction <d_i, theta> and the direction <d_i, v>
  GDerivs g_derivs(std::size_t i, const Vec& z, const Vec& x,
                   const Vec& v) const override {
    check_inner_index(i);
    const double yi = train_.labels[i];
    const double pred = train_.row_dot(i, z);
    const double dir = train_.row_dot(i, v);
    const double slope = detail::logistic_loss_d1(yi * pred) * yi;
    const double curv = detail::logistic_loss_d2(yi * pred);
    GDerivs out{Vec(dims_.p, 0.0), Vec(dims_.p, 0.0), Vec(dims_.d, 0.0)};
    train_.row_axpy(i, slope, out.grad);
    train_.row_axpy(i, curv * dir, out.hvp);
    for (std::size_t k = 0; k < dims_.p; ++k) {
      const double pen = std::exp(x[k]);
      out.grad[k] += pen * z[k];
      out.hvp[k] += pen * v[k];
      out.cross[k] = pen * z[k] * v[k];
    }
    return out;
  }

  double f_value(std::size_t j, const Vec& z, const Vec&) const override {
    check_outer_index(j);
    return detail::logistic_loss(val_.labels[j] * val_.row_dot(j, z));
  }

  Vec grad_f_in(std::size_t j, const Vec& z, const Vec&) const override {
    check_outer_index(j);
    const double yj = val_.labels[j];
    const double slope = detail::logistic_loss_d1(yj * val_.row_dot(j, z)) * yj;
    Vec g(dims_.p, 0.0);
    val_.row_axpy(j, slope, g);
    return g;
  }

  Vec grad_f_out(std::size_t j, const Vec&, const Vec&) const override {
    check_outer_index(j);
    return Vec(dims_.d, 0.0);  // F has no lambda dependence
  }

  double strong_convexity_lb(const Vec& x) const override {
    double floor = std::exp(x[0]);
    for (std::size_t k = 1; k < dims_.p; ++k) floor = std::min(floor, std::exp(x[k]));
    return floor;
  }

  std::uint64_t fingerprint() const override {
    std::uint64_t h = fnv1a("logreg_hyper");
    h = fnv1a_u64(train_.fingerprint(), h);
    return fnv1a_u64(val_.fingerprint(), h);
  }

  double test_error(const Vec& z) const override {
    const SparseDataset& ds = test_.num_rows() > 0 ? test_ : val_;
    std::size_t wrong = 0;
    for (std::size_t r = 0; r < ds.num_rows(); ++r) {
      const int pred = ds.row_dot(r, z) >= 0.0 ? 1 : -1;
      if (pred != ds.labels[r]) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(ds.num_rows());
  }

 private:
  double penalty_value(const Vec& z, const Vec& x) const {
    double s = 0.0;
    for (std::size_t k = 0; k < dims_.p; ++k) s += std::exp(x[k]) * z[k] * z[k];
    return 0.5 * s;
  }

  static void normalize_labels(SparseDataset& ds) {
    bool zero_one = true;
    bool pm_one = true;
    for (int lab : ds.labels) {
      zero_one &= (lab == 0 || lab == 1);
      pm_one &= (lab == -1 || lab == 1);
    }
    if (pm_one) return;
    if (zero_one) {
      for (int& lab : ds.labels) lab = lab == 0 ? -1 : 1;
      return;
    }
    throw std::invalid_argument("LogRegHyperProblem: labels must be binary");
  }

  SparseDataset train_;
  SparseDataset val_;
  SparseDataset test_;
  ProblemDims dims_;
};

inline LogRegHyperProblem make_logreg_hyper(SparseDataset train, SparseDataset val,
                                            SparseDataset test = {}) {
  return LogRegHyperProblem(std::move(train), std::move(val), std::move(test));
}

}  // namespace bilevel
