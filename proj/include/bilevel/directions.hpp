#pragma once

// Joint update directions
//
//   D_z(z, v, x) = grad_1 G(z, x)
//   D_v(z, v, x) = hess_11 G(z, x) v + grad_1 F(z, x)
//   D_x(z, v, x) = cross_21 G(z, x) v + grad_2 F(z, x)
//
// and their stochastic estimators: single-draw (SOBA) and SAGA-style
// variance-reduced with per-block memory tables (SABA). A common zero of the
// three directions is a stationary point of the value function.

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "bilevel/oracle.hpp"
#include "bilevel/rng.hpp"
#include "bilevel/vec.hpp"

namespace bilevel {

struct DirectionTriple {
  Vec dz;  // R^p
  Vec dv;  // R^p
  Vec dx;  // R^d

  bool finite() const { return all_finite(dz) && all_finite(dv) && all_finite(dx); }
};

// One inner and one outer block index, drawn independently and uniformly.
struct IndexDraw {
  std::size_t inner = 0;
  std::size_t outer = 0;
};

inline IndexDraw draw_indices(RngStream& rng, std::size_t num_inner_blocks,
                              std::size_t num_outer_blocks) {
  IndexDraw d;
  d.inner = static_cast<std::size_t>(rng.uniform_index(num_inner_blocks));
  d.outer = static_cast<std::size_t>(rng.uniform_index(num_outer_blocks));
  return d;
}

inline DirectionTriple full_directions(const JointState& s,
                                       const BilevelOracle& oracle) {
  const auto dm = oracle.dims();
  if (s.z.size() != dm.p || s.v.size() != dm.p || s.x.size() != dm.d)
    throw std::invalid_argument("full_directions: state/problem dimension mismatch");
  GDerivs g = batch_g_derivs(oracle, 0, dm.n, s.z, s.x, s.v);
  DirectionTriple d;
  d.dz = std::move(g.grad);
  d.dv = std::move(g.hvp);
  axpy(1.0, batch_mean(oracle, SampledOp::grad_f_in, 0, dm.m, s), d.dv);
  d.dx = std::move(g.cross);
  axpy(1.0, batch_mean(oracle, SampledOp::grad_f_out, 0, dm.m, s), d.dx);
  return d;
}

namespace detail {

// Unbiased per-block term: block mean weighted so a uniform block draw has
// the full mean as expectation (weight is 1 unless the final block is short).
struct BlockTerms {
  GDerivs g;       // inner block
  Vec f_in, f_out;  // outer block
};

inline GDerivs g_block_term(const BilevelOracle& oracle, const Blocks& blocks,
                            std::size_t k, const Vec& z, const Vec& x, const Vec& v) {
  GDerivs g = batch_g_derivs(oracle, blocks.begin(k), blocks.end(k), z, x, v);
  const double w = blocks.term_scale(k);
  if (w != 1.0) {
    scale(g.grad, w);
    scale(g.hvp, w);
    scale(g.cross, w);
  }
  return g;
}

inline Vec block_term(const BilevelOracle& oracle, SampledOp op,
                        const Blocks& blocks, std::size_t k, const JointState& s) {
  Vec r = batch_mean(oracle, op, blocks.begin(k), blocks.end(k), s);
  const double w = blocks.term_scale(k);
  if (w != 1.0) scale(r, w);
  return r;
}

}  // namespace detail

// SOBA directions: every mean replaced by the drawn block's term, all three
// directions sharing the same pair (i, j).
inline DirectionTriple soba_directions(const JointState& s, const IndexDraw& draw,
                                       const BilevelOracle& oracle,
                                       const BatchSpec& batch = {}) {
  const auto dm = oracle.dims();
  const Blocks bin = batch.inner_blocks(dm);
  const Blocks bout = batch.outer_blocks(dm);
  if (draw.inner >= bin.num_blocks() || draw.outer >= bout.num_blocks())
    throw std::out_of_range("soba_directions: block index out of range");
  GDerivs g = detail::g_block_term(oracle, bin, draw.inner, s.z, s.x, s.v);
  DirectionTriple d;
  d.dz = std::move(g.grad);
  d.dv = std::move(g.hvp);
  axpy(1.0, detail::block_term(oracle, SampledOp::grad_f_in, bout, draw.outer, s),
       d.dv);
  d.dx = std::move(g.cross);
  axpy(1.0, detail::block_term(oracle, SampledOp::grad_f_out, bout, draw.outer, s),
       d.dx);
  return d;
}

enum class SabaInitMode {
  at_state,  // one full evaluation pass at the initial joint state
  zeros      // ablation: tables and averages start at zero
};

// SAGA-style memory: five tables of stored per-block derivative terms plus
// one rolling average per table, maintained in O(1) per step.
class SabaMemory {
 public:
  SabaMemory() = default;

  SabaMemory(const JointState& s0, const BilevelOracle& oracle, const BatchSpec& batch,
             SabaInitMode mode = SabaInitMode::at_state) {
    const auto dm = oracle.dims();
    inner_blocks_ = batch.inner_blocks(dm);
    outer_blocks_ = batch.outer_blocks(dm);
    const std::size_t nb = inner_blocks_.num_blocks();
    const std::size_t mb = outer_blocks_.num_blocks();
    g_grad_.assign(nb, Vec(dm.p, 0.0));
    g_hvp_.assign(nb, Vec(dm.p, 0.0));
    g_cross_.assign(nb, Vec(dm.d, 0.0));
    f_in_.assign(mb, Vec(dm.p, 0.0));
    f_out_.assign(mb, Vec(dm.d, 0.0));
    avg_g_grad_.assign(dm.p, 0.0);
    avg_g_hvp_.assign(dm.p, 0.0);
    avg_g_cross_.assign(dm.d, 0.0);
    avg_f_in_.assign(dm.p, 0.0);
    avg_f_out_.assign(dm.d, 0.0);
    if (mode == SabaInitMode::at_state) {
      for (std::size_t k = 0; k < nb; ++k) {
        GDerivs g = detail::g_block_term(oracle, inner_blocks_, k, s0.z, s0.x, s0.v);
        g_grad_[k] = std::move(g.grad);
        g_hvp_[k] = std::move(g.hvp);
        g_cross_[k] = std::move(g.cross);
      }
      for (std::size_t k = 0; k < mb; ++k) {
        f_in_[k] = detail::block_term(oracle, SampledOp::grad_f_in, outer_blocks_,
                                        k, s0);
        f_out_[k] = detail::block_term(oracle, SampledOp::grad_f_out, outer_blocks_,
                                         k, s0);
      }
    }
    initialized_ = true;
    // seed the rolling averages with the exact table means
    (void)recompute_averages(/*overwrite=*/true);
  }

  bool initialized() const { return initialized_; }
  const Blocks& inner_blocks() const { return inner_blocks_; }
  const Blocks& outer_blocks() const { return outer_blocks_; }

  const std::vector<Vec>& table_g_grad() const { return g_grad_; }
  const std::vector<Vec>& table_g_hvp() const { return g_hvp_; }
  const std::vector<Vec>& table_g_cross() const { return g_cross_; }
  const std::vector<Vec>& table_f_in() const { return f_in_; }
  const std::vector<Vec>& table_f_out() const { return f_out_; }
  const Vec& avg_g_grad() const { return avg_g_grad_; }
  const Vec& avg_g_hvp() const { return avg_g_hvp_; }
  const Vec& avg_g_cross() const { return avg_g_cross_; }
  const Vec& avg_f_in() const { return avg_f_in_; }
  const Vec& avg_f_out() const { return avg_f_out_; }

  // Stored doubles across the five tables at block granularity:
  // nb*p (grad) + nb*(p+d) (hvp+cross) + mb*(p+d) (f tables).
  std::size_t float_count() const {
    const std::size_t nb = g_grad_.size();
    const std::size_t mb = f_in_.size();
    const std::size_t p = avg_g_grad_.size();
    const std::size_t d = avg_g_cross_.size();
    return nb * p + (nb + mb) * (p + d);
  }

  // Recompute each rolling average from its table; returns the largest
  // absolute deviation seen. With overwrite, the maintained averages are
  // replaced by the recomputed ones.
  double recompute_averages(bool overwrite = false) {
    require_init();
    double drift = 0.0;
    drift = std::max(drift, recompute_one(g_grad_, avg_g_grad_, overwrite));
    drift = std::max(drift, recompute_one(g_hvp_, avg_g_hvp_, overwrite));
    drift = std::max(drift, recompute_one(g_cross_, avg_g_cross_, overwrite));
    drift = std::max(drift, recompute_one(f_in_, avg_f_in_, overwrite));
    drift = std::max(drift, recompute_one(f_out_, avg_f_out_, overwrite));
    return drift;
  }

  friend DirectionTriple saba_directions(const JointState&, const IndexDraw&,
                                         SabaMemory&, const BilevelOracle&);

 private:
  void require_init() const {
    if (!initialized_) throw std::logic_error("SabaMemory: not initialized");
  }

  static double recompute_one(const std::vector<Vec>& table, Vec& avg,
                              bool overwrite) {
    Vec fresh(avg.size(), 0.0);
    for (const Vec& row : table) axpy(1.0, row, fresh);
    scale(fresh, 1.0 / static_cast<double>(table.size()));
    double drift = 0.0;
    for (std::size_t k = 0; k < avg.size(); ++k)
      drift = std::max(drift, std::abs(fresh[k] - avg[k]));
    if (overwrite) avg = std::move(fresh);
    return drift;
  }

  // SAGA estimate for one table: phi_new - table[k] + avg, then table[k] and
  // the rolling average absorb phi_new:  avg += (phi_new - phi_old) / size.
  static Vec apply_update(std::vector<Vec>& table, Vec& avg, std::size_t k,
                          Vec phi_new) {
    const std::size_t len = avg.size();
    const double inv = 1.0 / static_cast<double>(table.size());
    Vec& slot = table[k];
    Vec est(len);
    for (std::size_t q = 0; q < len; ++q) {
      est[q] = phi_new[q] - slot[q] + avg[q];
      avg[q] += (phi_new[q] - slot[q]) * inv;
    }
    slot = std::move(phi_new);
    return est;
  }

  Blocks inner_blocks_;
  Blocks outer_blocks_;
  std::vector<Vec> g_grad_, g_hvp_, g_cross_, f_in_, f_out_;
  Vec avg_g_grad_, avg_g_hvp_, avg_g_cross_, avg_f_in_, avg_f_out_;
  bool initialized_ = false;
};

inline SabaMemory saba_init(const JointState& s0, const BilevelOracle& oracle,
                            const BatchSpec& batch,
                            SabaInitMode mode = SabaInitMode::at_state) {
  return SabaMemory(s0, oracle, batch, mode);
}

// SABA directions: SAGA estimator per table, the G tables keyed by the inner
// draw and the F tables by the outer draw. Mutates exactly one slot per
// table and the five rolling averages.
inline DirectionTriple saba_directions(const JointState& s, const IndexDraw& draw,
                                       SabaMemory& memory,
                                       const BilevelOracle& oracle) {
  memory.require_init();
  const Blocks& bin = memory.inner_blocks_;
  const Blocks& bout = memory.outer_blocks_;
  if (draw.inner >= bin.num_blocks() || draw.outer >= bout.num_blocks())
    throw std::out_of_range("saba_directions: block index out of range");

  GDerivs g = detail::g_block_term(oracle, bin, draw.inner, s.z, s.x, s.v);
  Vec fin = detail::block_term(oracle, SampledOp::grad_f_in, bout, draw.outer, s);
  Vec fout = detail::block_term(oracle, SampledOp::grad_f_out, bout, draw.outer, s);

  DirectionTriple d;
  d.dz = SabaMemory::apply_update(memory.g_grad_, memory.avg_g_grad_, draw.inner,
                                  std::move(g.grad));
  d.dv = SabaMemory::apply_update(memory.g_hvp_, memory.avg_g_hvp_, draw.inner,
                                  std::move(g.hvp));
  axpy(1.0, SabaMemory::apply_update(memory.f_in_, memory.avg_f_in_, draw.outer,
                                     std::move(fin)),
       d.dv);
  d.dx = SabaMemory::apply_update(memory.g_cross_, memory.avg_g_cross_, draw.inner,
                                  std::move(g.cross));
  axpy(1.0, SabaMemory::apply_update(memory.f_out_, memory.avg_f_out_, draw.outer,
                                     std::move(fout)),
       d.dx);
  return d;
}

}  // namespace bilevel
