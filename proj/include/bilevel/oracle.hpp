#pragma once

// Per-sample derivative interface of a finite-sum bilevel problem
//
//   min_x F(z*(x), x)   s.t.   z*(x) = argmin_z G(z, x)
//
// with F = (1/m) sum_j F_j and G = (1/n) sum_i G_i, plus contiguous
// mini-batch indexing and batch aggregation on top of it.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "bilevel/vec.hpp"

namespace bilevel {

struct ProblemDims {
  std::size_t n = 0;  // inner samples G_i
  std::size_t m = 0;  // outer samples F_j
  std::size_t p = 0;  // inner dimension
  std::size_t d = 0;  // outer dimension

  void validate() const {
    if (n < 1 || m < 1 || p < 1 || d < 1)
      throw std::invalid_argument("ProblemDims: all of n, m, p, d must be >= 1");
  }
};

// The joint variable y = (z, v, x): inner iterate, adjoint iterate, outer
// iterate.
struct JointState {
  Vec z;
  Vec v;
  Vec x;

  bool finite() const { return all_finite(z) && all_finite(v) && all_finite(x); }
};

// Contiguous partition of [0, count) into ceil(count/batch) blocks; block k
// covers [k*batch, min((k+1)*batch, count)). The final block may be short.
struct Blocks {
  std::size_t count = 0;
  std::size_t batch = 1;

  Blocks() = default;
  Blocks(std::size_t count_, std::size_t batch_) : count(count_), batch(batch_) {
    if (count == 0) throw std::invalid_argument("Blocks: empty index range");
    if (batch < 1 || batch > count)
      throw std::invalid_argument("Blocks: batch size must be in [1, count]");
  }

  std::size_t num_blocks() const { return (count + batch - 1) / batch; }
  std::size_t begin(std::size_t k) const { return k * batch; }
  std::size_t end(std::size_t k) const { return std::min((k + 1) * batch, count); }
  std::size_t size(std::size_t k) const { return end(k) - begin(k); }

  // Weight making a uniformly drawn block term an unbiased estimate of the
  // full mean: E_k[ term_scale(k) * mean_k ] = global mean. Equals 1 whenever
  // count is divisible by batch.
  double term_scale(std::size_t k) const {
    return static_cast<double>(size(k)) * static_cast<double>(num_blocks()) /
           static_cast<double>(count);
  }
};

struct BatchSpec {
  std::size_t inner = 1;  // b_in
  std::size_t outer = 1;  // b_out

  Blocks inner_blocks(const ProblemDims& dims) const { return {dims.n, inner}; }
  Blocks outer_blocks(const ProblemDims& dims) const { return {dims.m, outer}; }
};

// Gradient, Hessian-vector and cross-derivative-vector product of one G_i,
// evaluated together so shared per-sample work happens once.
struct GDerivs {
  Vec grad;   // d/dz G_i(z, x)                    in R^p
  Vec hvp;    // d2/dz2 G_i(z, x) v                in R^p
  Vec cross;  // d2/dxdz G_i(z, x) v               in R^d
};

// Closed-form sampled derivatives of one bilevel problem. All calls are pure
// given their arguments and safe to invoke concurrently.
class BilevelOracle {
 public:
  virtual ~BilevelOracle() = default;

  virtual ProblemDims dims() const = 0;

  virtual double g_value(std::size_t i, const Vec& z, const Vec& x) const = 0;
  virtual Vec grad_g_in(std::size_t i, const Vec& z, const Vec& x) const = 0;
  virtual Vec hvp_g(std::size_t i, const Vec& z, const Vec& x,
                    const Vec& v) const = 0;
  virtual Vec cross_g(std::size_t i, const Vec& z, const Vec& x,
                      const Vec& v) const = 0;
  // d/dx G_i; not used by the solvers but needed for derivative checks.
  virtual Vec grad_g_out(std::size_t i, const Vec& z, const Vec& x) const = 0;

  virtual double f_value(std::size_t j, const Vec& z, const Vec& x) const = 0;
  virtual Vec grad_f_in(std::size_t j, const Vec& z, const Vec& x) const = 0;
  virtual Vec grad_f_out(std::size_t j, const Vec& z, const Vec& x) const = 0;

  // Fused evaluation of the three G_i quantities. Problems override this when
  // the per-sample prediction can be shared between them.
  virtual GDerivs g_derivs(std::size_t i, const Vec& z, const Vec& x,
                           const Vec& v) const {
    return {grad_g_in(i, z, x), hvp_g(i, z, x, v), cross_g(i, z, x, v)};
  }

  // Lower bound on the smallest eigenvalue of the mean inner Hessian at outer
  // point x. Every problem in this library keeps G(., x) strongly convex.
  virtual double strong_convexity_lb(const Vec& x) const = 0;

  // Exact optimal value of h when the problem knows it in closed form.
  virtual std::optional<double> reference_optimum() const { return std::nullopt; }

  // Stable identifier of the problem instance (family, parameters, seeds);
  // used to key reference-optimum caches.
  virtual std::uint64_t fingerprint() const = 0;

 protected:
  void check_inner_index(std::size_t i) const {
    if (i >= dims().n)
      throw std::out_of_range("inner index " + std::to_string(i) +
                              " out of range [0, " + std::to_string(dims().n) + ")");
  }
  void check_outer_index(std::size_t j) const {
    if (j >= dims().m)
      throw std::out_of_range("outer index " + std::to_string(j) +
                              " out of range [0, " + std::to_string(dims().m) + ")");
  }
};

// Classification problems additionally expose a held-out error; consumed by
// metrics::test_error.
class ClassificationOracle {
 public:
  virtual ~ClassificationOracle() = default;
  // Misclassification rate of the argmax predictor parameterized by z.
  virtual double test_error(const Vec& z) const = 0;
};

enum class SampledOp { grad_g_in, hvp_g, cross_g, grad_f_in, grad_f_out };

namespace detail {

inline Vec sample_op(const BilevelOracle& oracle, SampledOp op, std::size_t idx,
                     const JointState& s) {
  switch (op) {
    case SampledOp::grad_g_in: return oracle.grad_g_in(idx, s.z, s.x);
    case SampledOp::hvp_g: return oracle.hvp_g(idx, s.z, s.x, s.v);
    case SampledOp::cross_g: return oracle.cross_g(idx, s.z, s.x, s.v);
    case SampledOp::grad_f_in: return oracle.grad_f_in(idx, s.z, s.x);
    case SampledOp::grad_f_out: return oracle.grad_f_out(idx, s.z, s.x);
  }
  throw std::invalid_argument("sample_op: unknown op");
}

}  // namespace detail

// Arithmetic mean of a sampled op over the index range [begin, end).
inline Vec batch_mean(const BilevelOracle& oracle, SampledOp op,
                      std::size_t begin, std::size_t end, const JointState& s) {
  if (begin >= end) throw std::invalid_argument("batch_mean: empty block");
  Vec acc = detail::sample_op(oracle, op, begin, s);
  for (std::size_t idx = begin + 1; idx < end; ++idx)
    axpy(1.0, detail::sample_op(oracle, op, idx, s), acc);
  scale(acc, 1.0 / static_cast<double>(end - begin));
  return acc;
}

inline Vec full_mean(const BilevelOracle& oracle, SampledOp op,
                     const JointState& s) {
  const auto dm = oracle.dims();
  const bool inner = op == SampledOp::grad_g_in || op == SampledOp::hvp_g ||
                     op == SampledOp::cross_g;
  return batch_mean(oracle, op, 0, inner ? dm.n : dm.m, s);
}

inline double mean_g_value(const BilevelOracle& oracle, const Vec& z, const Vec& x) {
  const std::size_t n = oracle.dims().n;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += oracle.g_value(i, z, x);
  return s / static_cast<double>(n);
}

inline double mean_f_value(const BilevelOracle& oracle, const Vec& z, const Vec& x) {
  const std::size_t m = oracle.dims().m;
  double s = 0.0;
  for (std::size_t j = 0; j < m; ++j) s += oracle.f_value(j, z, x);
  return s / static_cast<double>(m);
}

// Mean of the fused G derivatives over [begin, end).
inline GDerivs batch_g_derivs(const BilevelOracle& oracle, std::size_t begin,
                              std::size_t end, const Vec& z, const Vec& x,
                              const Vec& v) {
  if (begin >= end) throw std::invalid_argument("batch_g_derivs: empty block");
  GDerivs acc = oracle.g_derivs(begin, z, x, v);
  for (std::size_t i = begin + 1; i < end; ++i) {
    GDerivs gi = oracle.g_derivs(i, z, x, v);
    axpy(1.0, gi.grad, acc.grad);
    axpy(1.0, gi.hvp, acc.hvp);
    axpy(1.0, gi.cross, acc.cross);
  }
  const double inv = 1.0 / static_cast<double>(end - begin);
  scale(acc.grad, inv);
  scale(acc.hvp, inv);
  scale(acc.cross, inv);
  return acc;
}

// Forwarding wrapper counting per-sample oracle calls; gradients and
// Hessian/cross products are tallied separately. Counters are atomic so the
// wrapper stays safe under the concurrent-read contract.
class CountingOracle final : public BilevelOracle {
 public:
  explicit CountingOracle(const BilevelOracle& inner) : inner_(inner) {}

  ProblemDims dims() const override { return inner_.dims(); }
  double g_value(std::size_t i, const Vec& z, const Vec& x) const override {
    return inner_.g_value(i, z, x);
  }
  Vec grad_g_in(std::size_t i, const Vec& z, const Vec& x) const override {
    ++grad_calls_;
    return inner_.grad_g_in(i, z, x);
  }
  Vec hvp_g(std::size_t i, const Vec& z, const Vec& x, const Vec& v) const override {
    ++hvp_calls_;
    return inner_.hvp_g(i, z, x, v);
  }
  Vec cross_g(std::size_t i, const Vec& z, const Vec& x, const Vec& v) const override {
    ++hvp_calls_;
    return inner_.cross_g(i, z, x, v);
  }
  Vec grad_g_out(std::size_t i, const Vec& z, const Vec& x) const override {
    ++grad_calls_;
    return inner_.grad_g_out(i, z, x);
  }
  double f_value(std::size_t j, const Vec& z, const Vec& x) const override {
    return inner_.f_value(j, z, x);
  }
  Vec grad_f_in(std::size_t j, const Vec& z, const Vec& x) const override {
    ++grad_calls_;
    return inner_.grad_f_in(j, z, x);
  }
  Vec grad_f_out(std::size_t j, const Vec& z, const Vec& x) const override {
    ++grad_calls_;
    return inner_.grad_f_out(j, z, x);
  }
  GDerivs g_derivs(std::size_t i, const Vec& z, const Vec& x,
                   const Vec& v) const override {
    ++grad_calls_;
    hvp_calls_ += 2;
    return inner_.g_derivs(i, z, x, v);
  }
  double strong_convexity_lb(const Vec& x) const override {
    return inner_.strong_convexity_lb(x);
  }
  std::optional<double> reference_optimum() const override {
    return inner_.reference_optimum();
  }
  std::uint64_t fingerprint() const override { return inner_.fingerprint(); }

  std::uint64_t grad_calls() const { return grad_calls_.load(); }
  std::uint64_t hvp_calls() const { return hvp_calls_.load(); }
  void reset() {
    grad_calls_.store(0);
    hvp_calls_.store(0);
  }

 private:
  const BilevelOracle& inner_;
  mutable std::atomic<std::uint64_t> grad_calls_{0};
  mutable std::atomic<std::uint64_t> hvp_calls_{0};
};

}  // namespace bilevel
