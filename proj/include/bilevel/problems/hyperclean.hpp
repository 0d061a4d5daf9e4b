#pragma once

// Data hyper-cleaning: learn one weight per training sample so corrupted
// labels get suppressed. The inner model is multinomial logistic regression
// with parameter matrix theta (C x p_feat, stored flattened class-major):
//
//   G(theta, lambda) = 1/n sum sigmoid(lambda_i) ce(theta d_i, y_i)
//                      + C_r ||theta||^2
//   F(theta, lambda) = 1/m sum ce(theta d_j^val, y_j^val)
//
// lambda lives in R^n, so d equals the number of training samples. Only the
// training labels are corrupted.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "bilevel/data/dataset.hpp"
#include "bilevel/data/synthetic.hpp"
#include "bilevel/hash.hpp"
#include "bilevel/oracle.hpp"

namespace bilevel {

// Reference dimensions of the full-scale task (MNIST splits); used for config
// validation when real data is supplied.
namespace mnist_cleaning {
inline constexpr std::size_t kTrain = 20000;
inline constexpr std::size_t kVal = 5000;
inline constexpr std::size_t kTest = 10000;
inline constexpr std::size_t kClasses = 10;
inline constexpr std::size_t kFeatures = 784;
inline constexpr double kRegularization = 0.2;  // C_r
}  // namespace mnist_cleaning

namespace detail {

inline double sigmoid(double t) {
  return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

inline double sigmoid_d(double t) {
  const double s = sigmoid(t);
  return s * (1.0 - s);
}

// softmax of logits into probs; returns log-sum-exp
inline double softmax(const Vec& logits, Vec& probs) {
  double mx = logits[0];
  for (double u : logits) mx = std::max(mx, u);
  double sum = 0.0;
  probs.resize(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) {
    probs[c] = std::exp(logits[c] - mx);
    sum += probs[c];
  }
  for (double& pr : probs) pr /= sum;
  return mx + std::log(sum);
}

}  // namespace detail

class HyperCleanProblem final : public BilevelOracle, public ClassificationOracle {
 public:
  HyperCleanProblem(SparseDataset train, SparseDataset val, SparseDataset test,
                    double p_corrupt, double c_r, std::uint64_t seed)
      : train_(std::move(train)),
        val_(std::move(val)),
        test_(std::move(test)),
        c_r_(c_r),
        seed_(seed) {
    if (!(p_corrupt >= 0.0 && p_corrupt <= 1.0))
      throw std::invalid_argument("HyperCleanProblem: p_corrupt must be in [0, 1]");
    if (c_r < 0.0) throw std::invalid_argument("HyperCleanProblem: c_r must be >= 0");
    num_classes_ = 0;
    for (const auto* ds : {&train_, &val_, &test_})
      for (int lab : ds->labels) {
        if (lab < 0) throw std::invalid_argument("HyperCleanProblem: negative label");
        num_classes_ = std::max<std::size_t>(num_classes_, lab + 1);
      }
    num_features_ = std::max({train_.num_features, val_.num_features,
                              test_.num_features});
    auto [corrupted, mask] =
        corrupt_labels(train_.labels, p_corrupt, num_classes_, seed);
    train_.labels = std::move(corrupted);
    corrupt_mask_ = std::move(mask);

    dims_.n = train_.num_rows();
    dims_.m = val_.num_rows();
    dims_.p = num_classes_ * num_features_;
    dims_.d = dims_.n;
    dims_.validate();
  }

  ProblemDims dims() const override { return dims_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t num_features() const { return num_features_; }
  const std::vector<bool>& corrupt_mask() const { return corrupt_mask_; }

  double g_value(std::size_t i, const Vec& z, const Vec& x) const override {
    check_inner_index(i);
    return detail::sigmoid(x[i]) * sample_loss(train_, i, z) + c_r_ * sq_norm(z);
  }

  Vec grad_g_in(std::size_t i, const Vec& z, const Vec& x) const override {
    check_inner_index(i);
    Vec g(dims_.p, 0.0);
    add_loss_grad(train_, i, z, detail::sigmoid(x[i]), g);
    axpy(2.0 * c_r_, z, g);
    return g;
  }

  Vec hvp_g(std::size_t i, const Vec& z, const Vec& x, const Vec& v) const override {
    check_inner_index(i);
    Vec h(dims_.p, 0.0);
    add_loss_hvp(train_, i, z, v, detail::sigmoid(x[i]), h);
    axpy(2.0 * c_r_, v, h);
    return h;
  }

  Vec cross_g(std::size_t i, const Vec& z, const Vec& x, const Vec& v) const override {
    check_inner_index(i);
    Vec c(dims_.d, 0.0);
    c[i] = detail::sigmoid_d(x[i]) * loss_grad_dot(train_, i, z, v);
    return c;
  }

  Vec grad_g_out(std::size_t i, const Vec& z, const Vec& x) const override {
    check_inner_index(i);
    Vec g(dims_.d, 0.0);
    g[i] = detail::sigmoid_d(x[i]) * sample_loss(train_, i, z);
    return g;
  }

  GDerivs g_derivs(std::size_t i, const Vec& z, const Vec& x,
                   const Vec& v) const override {
    check_inner_index(i);
    Vec logits, probs, vd;
    logits_of(train_, i, z, logits);
    (void)detail::softmax(logits, probs);
    dirs_of(train_, i, v, vd);
    const int y = train_.labels[i];
    const double w = detail::sigmoid(x[i]);

    GDerivs out{Vec(dims_.p, 0.0), Vec(dims_.p, 0.0), Vec(dims_.d, 0.0)};
    double sw = 0.0;
    for (std::size_t c = 0; c < num_classes_; ++c) sw += probs[c] * vd[c];
    double cross_dot = 0.0;
    for (std::size_t c = 0; c < num_classes_; ++c) {
      const double resid = probs[c] - (static_cast<int>(c) == y ? 1.0 : 0.0);
      train_.row_axpy_strided(i, w * resid, out.grad, c * num_features_);
      train_.row_axpy_strided(i, w * (probs[c] * vd[c] - probs[c] * sw), out.hvp,
                              c * num_features_);
      cross_dot += resid * vd[c];
    }
    axpy(2.0 * c_r_, z, out.grad);
    axpy(2.0 * c_r_, v, out.hvp);
    out.cross[i] = detail::sigmoid_d(x[i]) * cross_dot;
    return out;
  }

  double f_value(std::size_t j, const Vec& z, const Vec&) const override {
    check_outer_index(j);
    return sample_loss(val_, j, z);
  }

  Vec grad_f_in(std::size_t j, const Vec& z, const Vec&) const override {
    check_outer_index(j);
    Vec g(dims_.p, 0.0);
    add_loss_grad(val_, j, z, 1.0, g);
    return g;
  }

  Vec grad_f_out(std::size_t j, const Vec&, const Vec&) const override {
    check_outer_index(j);
    return Vec(dims_.d, 0.0);  // F has no lambda dependence
  }

  double strong_convexity_lb(const Vec&) const override { return 2.0 * c_r_; }

  std::uint64_t fingerprint() const override {
    std::uint64_t h = fnv1a("hyperclean");
    h = fnv1a_u64(seed_, h);
    h = fnv1a_double(c_r_, h);
    h = fnv1a_u64(train_.fingerprint(), h);
    h = fnv1a_u64(val_.fingerprint(), h);
    return fnv1a_u64(test_.fingerprint(), h);
  }

  double test_error(const Vec& z) const override {
    if (test_.num_rows() == 0)
      throw std::logic_error("HyperCleanProblem: no test set supplied");
    std::size_t wrong = 0;
    Vec logits;
    for (std::size_t r = 0; r < test_.num_rows(); ++r) {
      logits_of(test_, r, z, logits);
      std::size_t best = 0;
      for (std::size_t c = 1; c < num_classes_; ++c)
        if (logits[c] > logits[best]) best = c;
      if (static_cast<int>(best) != test_.labels[r]) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(test_.num_rows());
  }

  // Mean learned weight sigmoid(lambda_i) over corrupted or clean samples.
  double mean_weight(const Vec& lambda, bool over_corrupted) const {
    double s = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < dims_.n; ++i) {
      if (corrupt_mask_[i] == over_corrupted) {
        s += detail::sigmoid(lambda[i]);
        ++cnt;
      }
    }
    return cnt == 0 ? 0.0 : s / static_cast<double>(cnt);
  }

 private:
  void logits_of(const SparseDataset& ds, std::size_t i, const Vec& theta,
                 Vec& logits) const {
    logits.resize(num_classes_);
    for (std::size_t c = 0; c < num_classes_; ++c)
      logits[c] = ds.row_dot_strided(i, theta, c * num_features_);
  }

  void dirs_of(const SparseDataset& ds, std::size_t i, const Vec& v, Vec& vd) const {
    vd.resize(num_classes_);
    for (std::size_t c = 0; c < num_classes_; ++c)
      vd[c] = ds.row_dot_strided(i, v, c * num_features_);
  }

  double sample_loss(const SparseDataset& ds, std::size_t i, const Vec& theta) const {
    Vec logits, probs;
    logits_of(ds, i, theta, logits);
    const double lse = detail::softmax(logits, probs);
    return lse - logits[ds.labels[i]];
  }

  // g += weight * d(ce)/d(theta) for sample i
  void add_loss_grad(const SparseDataset& ds, std::size_t i, const Vec& theta,
                     double weight, Vec& g) const {
    Vec logits, probs;
    logits_of(ds, i, theta, logits);
    (void)detail::softmax(logits, probs);
    const int y = ds.labels[i];
    for (std::size_t c = 0; c < num_classes_; ++c) {
      const double resid = probs[c] - (static_cast<int>(c) == y ? 1.0 : 0.0);
      ds.row_axpy_strided(i, weight * resid, g, c * num_features_);
    }
  }

  // h += weight * H_ce(theta) v for sample i;  H v = (diag(s) - s s') (V d) d'
  void add_loss_hvp(const SparseDataset& ds, std::size_t i, const Vec& theta,
                    const Vec& v, double weight, Vec& h) const {
    Vec logits, probs, vd;
    logits_of(ds, i, theta, logits);
    (void)detail::softmax(logits, probs);
    dirs_of(ds, i, v, vd);
    double sw = 0.0;
    for (std::size_t c = 0; c < num_classes_; ++c) sw += probs[c] * vd[c];
    for (std::size_t c = 0; c < num_classes_; ++c)
      ds.row_axpy_strided(i, weight * probs[c] * (vd[c] - sw), h,
                          c * num_features_);
  }

  // <d(ce)/d(theta), v> for sample i
  double loss_grad_dot(const SparseDataset& ds, std::size_t i, const Vec& theta,
                       const Vec& v) const {
    Vec logits, probs, vd;
    logits_of(ds, i, theta, logits);
    (void)detail::softmax(logits, probs);
    dirs_of(ds, i, v, vd);
    const int y = ds.labels[i];
    double s = 0.0;
    for (std::size_t c = 0; c < num_classes_; ++c)
      s += (probs[c] - (static_cast<int>(c) == y ? 1.0 : 0.0)) * vd[c];
    return s;
  }

  SparseDataset train_;
  SparseDataset val_;
  SparseDataset test_;
  double c_r_;
  std::uint64_t seed_;
  std::size_t num_classes_ = 0;
  std::size_t num_features_ = 0;
  std::vector<bool> corrupt_mask_;
  ProblemDims dims_;
};

inline HyperCleanProblem make_hyperclean(SparseDataset train, SparseDataset val,
                                         SparseDataset test, double p_corrupt,
                                         double c_r, std::uint64_t seed) {
  return HyperCleanProblem(std::move(train), std::move(val), std::move(test),
                           p_corrupt, c_r, seed);
}

}  // namespace bilevel
