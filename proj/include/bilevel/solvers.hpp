#pragma once

// The joint update loop
//
//   z <- z - rho^t Dz,   v <- v - rho^t Dv,   x <- x - gamma^t Dx
//
// parameterized by the direction estimator (full batch, SOBA, SABA), plus the
// two-loop baseline (inner SGD + Neumann adjoint) and step-size grid search.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "bilevel/directions.hpp"
#include "bilevel/metrics.hpp"
#include "bilevel/oracle.hpp"
#include "bilevel/rng.hpp"

namespace bilevel {

// Power-law step sizes rho^t = alpha t^-a, gamma^t = beta t^-b for t >= 1.
struct StepSchedule {
  double alpha = 0.1;
  double beta = 0.1;
  double a = 0.0;
  double b = 0.0;

  // beta = 0 freezes the outer variable (used by the SAGA-reduction ablation)
  void validate() const {
    if (alpha <= 0.0 || beta < 0.0)
      throw std::invalid_argument("StepSchedule: need alpha > 0 and beta >= 0");
    for (double e : {a, b}) {
      static constexpr double allowed[] = {0.0, 1.0 / 3.0, 2.0 / 5.0, 1.0 / 2.0,
                                           3.0 / 5.0};
      bool ok = false;
      for (double v : allowed) ok |= std::abs(e - v) < 1e-9;
      if (!ok)
        throw std::invalid_argument(
            "StepSchedule: exponent must be one of {0, 1/3, 2/5, 1/2, 3/5}");
    }
  }

  double rho(std::int64_t t) const {
    return a == 0.0 ? alpha : alpha * std::pow(static_cast<double>(t), -a);
  }
  double gamma(std::int64_t t) const {
    return b == 0.0 ? beta : beta * std::pow(static_cast<double>(t), -b);
  }
};

enum class Method { soba, saba, full_batch, two_loop_shia, two_loop_hia };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::soba: return "soba";
    case Method::saba: return "saba";
    case Method::full_batch: return "full-batch";
    case Method::two_loop_shia: return "two-loop-shia";
    case Method::two_loop_hia: return "two-loop-hia";
  }
  return "?";
}

inline Method method_from_name(const std::string& name) {
  if (name == "soba") return Method::soba;
  if (name == "saba") return Method::saba;
  if (name == "full-batch" || name == "full_batch") return Method::full_batch;
  if (name == "two-loop-shia") return Method::two_loop_shia;
  if (name == "two-loop-hia") return Method::two_loop_hia;
  throw std::invalid_argument("unknown method '" + name + "'");
}

struct SolverConfig {
  Method method = Method::soba;
  StepSchedule schedule;
  BatchSpec batch;
  std::int64_t total_iters = 1000;
  std::uint64_t seed = 0;

  std::size_t inner_steps = 10;    // K, two-loop only
  std::size_t neumann_steps = 10;  // b, HIA/SHIA only
  double eta = 0.0;                // <= 0 means eta = alpha

  std::int64_t eval_every = 0;      // 0: auto (~100 rows)
  std::int64_t recompute_every = -1;  // SABA: -1 auto, 0 off
  SabaInitMode saba_init_mode = SabaInitMode::at_state;

  std::uint64_t oracle_budget = 0;  // 0: unlimited; grads + hvps
  double wall_budget_sec = 0.0;     // 0: unlimited; truncates the run
  bool eval_value_metrics = true;
  bool eval_test_error = false;
  ExactSolveConfig eval_cfg;
  double divergence_norm = 1e12;

  // Optional per-iteration observer (t, state after step t); test hook, not
  // part of any serialized config.
  std::function<void(std::int64_t, const JointState&)> on_step;

  void validate(const ProblemDims& dm) const {
    schedule.validate();
    if (total_iters < 0) throw std::invalid_argument("SolverConfig: T must be >= 0");
    if (batch.inner < 1 || batch.inner > dm.n || batch.outer < 1 ||
        batch.outer > dm.m)
      throw std::invalid_argument("SolverConfig: batch sizes out of range");
    if ((method == Method::two_loop_shia || method == Method::two_loop_hia) &&
        inner_steps < 1)
      throw std::invalid_argument("SolverConfig: inner_steps must be >= 1");
  }

  double effective_eta() const { return eta > 0.0 ? eta : schedule.alpha; }
};

struct OracleTally {
  std::uint64_t grads = 0;
  std::uint64_t hvps = 0;
  std::uint64_t total() const { return grads + hvps; }
};

struct MetricRow {
  std::int64_t t = 0;
  double h = std::numeric_limits<double>::quiet_NaN();
  double grad_h_sq = std::numeric_limits<double>::quiet_NaN();
  double runavg_grad_h_sq = std::numeric_limits<double>::quiet_NaN();
  double runinf_grad_h_sq = std::numeric_limits<double>::quiet_NaN();
  double delta_z = std::numeric_limits<double>::quiet_NaN();
  double delta_v = std::numeric_limits<double>::quiet_NaN();
  double test_error = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t grad_calls = 0;
  std::uint64_t hvp_calls = 0;
  double wall_sec = 0.0;
};

struct RunRecord {
  std::vector<MetricRow> rows;
  bool diverged = false;
  std::int64_t diverged_at = -1;
  JointState final_state;
  OracleTally tally;

  const MetricRow& last() const { return rows.back(); }
};

namespace detail {

class MetricLogger {
 public:
  MetricLogger(const BilevelOracle& oracle, const SolverConfig& cfg)
      : oracle_(oracle), cfg_(cfg) {}

  void log(RunRecord& rec, std::int64_t t, const JointState& s, double wall_sec) {
    MetricRow row;
    row.t = t;
    row.grad_calls = rec.tally.grads;
    row.hvp_calls = rec.tally.hvps;
    row.wall_sec = wall_sec;
    if (cfg_.eval_value_metrics && s.finite()) {
      const ValueGrad vg = value_and_grad(oracle_, s.x, cfg_.eval_cfg);
      row.h = vg.h;
      row.grad_h_sq = sq_norm(vg.grad);
      sum_grad_sq_ += row.grad_h_sq;
      ++count_;
      inf_grad_sq_ = std::min(inf_grad_sq_, row.grad_h_sq);
      row.runavg_grad_h_sq = sum_grad_sq_ / static_cast<double>(count_);
      row.runinf_grad_h_sq = inf_grad_sq_;
      row.delta_z = sq_norm(sub(s.z, vg.z_star));
      row.delta_v = sq_norm(sub(s.v, vg.v_star));
    }
    if (cfg_.eval_test_error && s.finite()) {
      if (const auto* cls = dynamic_cast<const ClassificationOracle*>(&oracle_))
        row.test_error = cls->test_error(s.z);
    }
    rec.rows.push_back(row);
  }

 private:
  const BilevelOracle& oracle_;
  const SolverConfig& cfg_;
  double sum_grad_sq_ = 0.0;
  double inf_grad_sq_ = std::numeric_limits<double>::infinity();
  std::size_t count_ = 0;
};

inline bool state_diverged(const JointState& s, double bound) {
  auto bad = [bound](const Vec& vec) {
    for (double v : vec)
      if (!std::isfinite(v) || std::abs(v) > bound) return true;
    return false;
  };
  return bad(s.z) || bad(s.v) || bad(s.x);
}

// oracle cost of one estimator step at the given block sizes
inline void add_direction_cost(OracleTally& tally, std::size_t c_in,
                               std::size_t c_out) {
  tally.grads += c_in + 2 * c_out;  // grad G block + grad_1 F and grad_2 F blocks
  tally.hvps += 2 * c_in;           // Hessian and cross products on the G block
}

}  // namespace detail

// Algorithm-1 loop with the full-batch, SOBA or SABA estimator. With
// gamma = 0 and the SABA estimator the z-iterates coincide step for step with
// SAGA on the inner problem.
inline RunRecord run_framework(const BilevelOracle& oracle, const SolverConfig& cfg) {
  const auto dm = oracle.dims();
  cfg.validate(dm);
  if (cfg.method != Method::soba && cfg.method != Method::saba &&
      cfg.method != Method::full_batch)
    throw std::invalid_argument("run_framework: estimator must be soba/saba/full");

  const Blocks bin = cfg.batch.inner_blocks(dm);
  const Blocks bout = cfg.batch.outer_blocks(dm);
  const std::int64_t eval_every =
      cfg.eval_every > 0 ? cfg.eval_every
                         : std::max<std::int64_t>(1, cfg.total_iters / 100);
  std::int64_t recompute_every = cfg.recompute_every;
  if (recompute_every < 0)
    recompute_every = 10 * static_cast<std::int64_t>(
                               std::max(bin.num_blocks(), bout.num_blocks()));

  RngStream rng(cfg.seed, /*stream=*/0);
  JointState s{Vec(dm.p, 0.0), Vec(dm.p, 0.0), Vec(dm.d, 0.0)};

  RunRecord rec;
  detail::MetricLogger logger(oracle, cfg);

  SabaMemory memory;
  if (cfg.method == Method::saba) {
    memory = SabaMemory(s, oracle, cfg.batch, cfg.saba_init_mode);
    if (cfg.saba_init_mode == SabaInitMode::at_state) {
      for (std::size_t k = 0; k < bin.num_blocks(); ++k)
        detail::add_direction_cost(rec.tally, bin.size(k), 0);
      for (std::size_t k = 0; k < bout.num_blocks(); ++k)
        detail::add_direction_cost(rec.tally, 0, bout.size(k));
    }
  }

  double wall = 0.0;
  logger.log(rec, 0, s, wall);

  using clock = std::chrono::steady_clock;
  for (std::int64_t t = 1; t <= cfg.total_iters; ++t) {
    const auto tic = clock::now();

    DirectionTriple d;
    std::size_t c_in = dm.n, c_out = dm.m;
    if (cfg.method == Method::full_batch) {
      d = full_directions(s, oracle);
    } else {
      const IndexDraw draw = draw_indices(rng, bin.num_blocks(), bout.num_blocks());
      c_in = bin.size(draw.inner);
      c_out = bout.size(draw.outer);
      d = (cfg.method == Method::soba)
              ? soba_directions(s, draw, oracle, cfg.batch)
              : saba_directions(s, draw, memory, oracle);
    }
    detail::add_direction_cost(rec.tally, c_in, c_out);

    const double rho = cfg.schedule.rho(t);
    const double gamma = cfg.schedule.gamma(t);
    axpy(-rho, d.dz, s.z);
    axpy(-rho, d.dv, s.v);
    axpy(-gamma, d.dx, s.x);

    if (cfg.method == Method::saba && recompute_every > 0 &&
        t % recompute_every == 0)
      (void)memory.recompute_averages(/*overwrite=*/true);

    wall += std::chrono::duration<double>(clock::now() - tic).count();

    if (cfg.on_step) cfg.on_step(t, s);

    if (detail::state_diverged(s, cfg.divergence_norm)) {
      rec.diverged = true;
      rec.diverged_at = t;
      break;
    }

    const bool budget_done =
        (cfg.oracle_budget > 0 && rec.tally.total() >= cfg.oracle_budget) ||
        (cfg.wall_budget_sec > 0 && wall >= cfg.wall_budget_sec);
    if (t % eval_every == 0 || t == cfg.total_iters || budget_done)
      logger.log(rec, t, s, wall);
    if (budget_done) break;
  }

  rec.final_state = std::move(s);
  return rec;
}

// Randomized truncated Neumann estimate of [hess_11 G]^-1 g: apply a
// uniformly drawn number q in {0,...,b-1} of sampled contraction factors
// (I - eta hess_11 G_i) to g and rescale by b eta.
inline Vec hia(const BilevelOracle& oracle, const Vec& z, const Vec& x, const Vec& g,
               std::size_t b, double eta, RngStream& rng, const Blocks& blocks,
               OracleTally* tally = nullptr) {
  if (b < 1) throw std::invalid_argument("hia: b must be >= 1");
  const std::size_t q = static_cast<std::size_t>(rng.uniform_index(b));
  Vec v = g;
  for (std::size_t k = 0; k < q; ++k) {
    const auto blk = static_cast<std::size_t>(rng.uniform_index(blocks.num_blocks()));
    JointState s{z, v, x};
    Vec hv = detail::block_term(oracle, SampledOp::hvp_g, blocks, blk, s);
    axpy(-eta, hv, v);
    if (tally) tally->hvps += blocks.size(blk);
  }
  scale(v, static_cast<double>(b) * eta);
  return v;
}

// Summed truncated Neumann series: eta * sum_{k=0}^{b} v^k with
// v^{k+1} = (I - eta hess_11 G_{i_k}) v^k and v^0 = g.
inline Vec shia(const BilevelOracle& oracle, const Vec& z, const Vec& x, const Vec& g,
                std::size_t b, double eta, RngStream& rng, const Blocks& blocks,
                OracleTally* tally = nullptr) {
  Vec v = g;
  Vec sum = g;
  for (std::size_t k = 0; k < b; ++k) {
    const auto blk = static_cast<std::size_t>(rng.uniform_index(blocks.num_blocks()));
    JointState s{z, v, x};
    Vec hv = detail::block_term(oracle, SampledOp::hvp_g, blocks, blk, s);
    axpy(-eta, hv, v);
    axpy(1.0, v, sum);
    if (tally) tally->hvps += blocks.size(blk);
  }
  scale(sum, eta);
  return sum;
}

// Two-loop baseline: K inner SGD steps on G, Neumann estimate of the adjoint
// (SHIA or HIA), one outer step along grad_2 F - cross(v_hat).
inline RunRecord run_two_loop(const BilevelOracle& oracle, const SolverConfig& cfg) {
  const auto dm = oracle.dims();
  cfg.validate(dm);
  const bool use_shia = cfg.method == Method::two_loop_shia;
  if (!use_shia && cfg.method != Method::two_loop_hia)
    throw std::invalid_argument("run_two_loop: method must be two-loop-{shia,hia}");

  const Blocks bin = cfg.batch.inner_blocks(dm);
  const Blocks bout = cfg.batch.outer_blocks(dm);
  const std::int64_t eval_every =
      cfg.eval_every > 0 ? cfg.eval_every
                         : std::max<std::int64_t>(1, cfg.total_iters / 100);
  const double eta = cfg.effective_eta();

  RngStream rng(cfg.seed, /*stream=*/0);
  JointState s{Vec(dm.p, 0.0), Vec(dm.p, 0.0), Vec(dm.d, 0.0)};

  RunRecord rec;
  detail::MetricLogger logger(oracle, cfg);
  double wall = 0.0;
  logger.log(rec, 0, s, wall);

  using clock = std::chrono::steady_clock;
  for (std::int64_t t = 1; t <= cfg.total_iters; ++t) {
    const auto tic = clock::now();
    const double rho = cfg.schedule.rho(t);
    const double gamma = cfg.schedule.gamma(t);

    // inner SGD
    for (std::size_t k = 0; k < cfg.inner_steps; ++k) {
      const auto blk = static_cast<std::size_t>(rng.uniform_index(bin.num_blocks()));
      JointState sz{s.z, s.v, s.x};
      Vec gz = detail::block_term(oracle, SampledOp::grad_g_in, bin, blk, sz);
      axpy(-rho, gz, s.z);
      rec.tally.grads += bin.size(blk);
    }

    // adjoint estimate and outer step
    const auto j = static_cast<std::size_t>(rng.uniform_index(bout.num_blocks()));
    const auto i = static_cast<std::size_t>(rng.uniform_index(bin.num_blocks()));
    JointState sj{s.z, s.v, s.x};
    Vec f_in = detail::block_term(oracle, SampledOp::grad_f_in, bout, j, sj);
    rec.tally.grads += bout.size(j);
    Vec v_hat = use_shia ? shia(oracle, s.z, s.x, f_in, cfg.neumann_steps, eta, rng,
                                bin, &rec.tally)
                         : hia(oracle, s.z, s.x, f_in, cfg.neumann_steps, eta, rng,
                               bin, &rec.tally);
    s.v = v_hat;  // recorded for the delta_v diagnostic

    JointState si{s.z, v_hat, s.x};
    Vec dx = detail::block_term(oracle, SampledOp::cross_g, bin, i, si);
    rec.tally.hvps += bin.size(i);
    scale(dx, -1.0);  // v* = -H^{-1} grad_1 F
    axpy(1.0, detail::block_term(oracle, SampledOp::grad_f_out, bout, j, sj), dx);
    rec.tally.grads += bout.size(j);
    axpy(-gamma, dx, s.x);

    wall += std::chrono::duration<double>(clock::now() - tic).count();

    if (cfg.on_step) cfg.on_step(t, s);

    if (detail::state_diverged(s, cfg.divergence_norm)) {
      rec.diverged = true;
      rec.diverged_at = t;
      break;
    }
    const bool budget_done =
        (cfg.oracle_budget > 0 && rec.tally.total() >= cfg.oracle_budget) ||
        (cfg.wall_budget_sec > 0 && wall >= cfg.wall_budget_sec);
    if (t % eval_every == 0 || t == cfg.total_iters || budget_done)
      logger.log(rec, t, s, wall);
    if (budget_done) break;
  }
  rec.final_state = std::move(s);
  return rec;
}

inline RunRecord run_solver(const BilevelOracle& oracle, const SolverConfig& cfg) {
  switch (cfg.method) {
    case Method::soba:
    case Method::saba:
    case Method::full_batch:
      return run_framework(oracle, cfg);
    case Method::two_loop_shia:
    case Method::two_loop_hia:
      return run_two_loop(oracle, cfg);
  }
  throw std::invalid_argument("run_solver: unknown method");
}

enum class GridObjective { value, test_error };

struct GridCell {
  double alpha = 0.0;
  double ratio = 0.0;  // beta = alpha / ratio
  double objective = std::numeric_limits<double>::quiet_NaN();
  std::size_t completed = 0;
  std::size_t diverged = 0;
};

struct GridResult {
  bool ok = false;
  double alpha = 0.0;
  double beta = 0.0;
  double objective = std::numeric_limits<double>::quiet_NaN();
  std::vector<GridCell> cells;
};

namespace detail {

inline double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return v.size() % 2 == 1 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

}  // namespace detail

// Step-size selection over an (alpha, alpha/r) grid: each cell runs
// runs_per_cell seeded replicates and is scored by the median final
// objective; diverged replicates are dropped, fully diverged cells excluded.
// Replicates execute in a bounded pool, each with its own RNG stream and
// private memory; results do not depend on the pool size.
inline GridResult grid_search(const BilevelOracle& oracle,
                              const SolverConfig& base,
                              const std::vector<double>& alphas,
                              const std::vector<double>& ratios,
                              std::size_t runs_per_cell,
                              GridObjective objective = GridObjective::value,
                              std::size_t jobs = 1) {
  if (alphas.empty() || ratios.empty())
    throw std::invalid_argument("grid_search: empty grid");
  if (runs_per_cell < 1)
    throw std::invalid_argument("grid_search: runs_per_cell must be >= 1");

  struct Task {
    std::size_t cell_idx;
    double alpha, ratio;
    std::size_t rep;
  };
  std::vector<Task> tasks;
  GridResult result;
  for (double alpha : alphas)
    for (double ratio : ratios) {
      GridCell cell;
      cell.alpha = alpha;
      cell.ratio = ratio;
      for (std::size_t rep = 0; rep < runs_per_cell; ++rep)
        tasks.push_back({result.cells.size(), alpha, ratio, rep});
      result.cells.push_back(cell);
    }

  constexpr double kDiverged = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> scores(tasks.size(), kDiverged);
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    while (true) {
      const std::size_t k = next.fetch_add(1);
      if (k >= tasks.size()) return;
      const Task& task = tasks[k];
      SolverConfig cfg = base;
      cfg.schedule.alpha = task.alpha;
      cfg.schedule.beta = task.alpha / task.ratio;
      cfg.seed = base.seed + task.rep;
      cfg.eval_value_metrics = false;
      cfg.eval_test_error = false;
      cfg.on_step = nullptr;
      const RunRecord rec = run_solver(oracle, cfg);
      if (rec.diverged || !rec.final_state.finite()) continue;
      double score;
      if (objective == GridObjective::test_error) {
        score = test_error(oracle, rec.final_state.z);
      } else {
        try {
          score = value_and_grad(oracle, rec.final_state.x, base.eval_cfg).h;
        } catch (const ToleranceNotMet&) {
          continue;
        }
      }
      if (std::isfinite(score)) scores[k] = score;
    }
  };
  const std::size_t pool = std::max<std::size_t>(1, std::min(jobs, tasks.size()));
  if (pool == 1) {
    work();
  } else {
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < pool; ++w) workers.emplace_back(work);
    for (auto& w : workers) w.join();
  }

  std::vector<std::vector<double>> finals(result.cells.size());
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    GridCell& cell = result.cells[tasks[k].cell_idx];
    if (std::isnan(scores[k])) {
      ++cell.diverged;
    } else {
      finals[tasks[k].cell_idx].push_back(scores[k]);
      ++cell.completed;
    }
  }
  for (std::size_t c = 0; c < result.cells.size(); ++c) {
    GridCell& cell = result.cells[c];
    cell.objective = detail::median_of(finals[c]);
    if (cell.completed > 0 && (!result.ok || cell.objective < result.objective)) {
      result.ok = true;
      result.alpha = cell.alpha;
      result.beta = cell.alpha / cell.ratio;
      result.objective = cell.objective;
    }
  }
  return result;
}

}  // namespace bilevel
