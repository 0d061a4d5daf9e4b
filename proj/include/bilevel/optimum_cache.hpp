#pragma once

// Reference-optimum cache: h* for problems without a closed form, computed
// once by a long high-precision run and stored next to the experiment
// outputs. Entries are keyed by the problem fingerprint so a stale cache is
// never silently reused.

#include <ctime>
#include <fstream>
#include <string>

#include <json.hpp>

#include "bilevel/metrics.hpp"
#include "bilevel/oracle.hpp"
#include "bilevel/solvers.hpp"

namespace bilevel {

struct OptimumCacheEntry {
  std::uint64_t problem_fingerprint = 0;
  double h_star = 0.0;
  double tolerance = 0.0;
  std::string created;
  std::int64_t iterations = 0;
};

inline void write_optimum_cache(const std::string& path, const OptimumCacheEntry& e) {
  nlohmann::json j;
  j["problem_fingerprint"] = e.problem_fingerprint;
  j["h_star"] = e.h_star;
  j["tolerance"] = e.tolerance;
  j["created"] = e.created;
  j["iterations"] = e.iterations;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("optimum cache: cannot write " + path);
  out << j.dump(2) << '\n';
}

inline OptimumCacheEntry read_optimum_cache(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("optimum cache: cannot read " + path);
  nlohmann::json j;
  in >> j;
  OptimumCacheEntry e;
  e.problem_fingerprint = j.at("problem_fingerprint").get<std::uint64_t>();
  e.h_star = j.at("h_star").get<double>();
  e.tolerance = j.at("tolerance").get<double>();
  e.created = j.value("created", "");
  e.iterations = j.value("iterations", std::int64_t{0});
  return e;
}

// Load h* for this problem; a fingerprint mismatch means the cache belongs to
// a different instance and is an error, never a silent fallback.
inline double load_reference_optimum(const std::string& path,
                                     const BilevelOracle& oracle) {
  const OptimumCacheEntry e = read_optimum_cache(path);
  if (e.problem_fingerprint != oracle.fingerprint())
    throw std::runtime_error("optimum cache: stale entry (fingerprint mismatch)");
  return e.h_star;
}

// Long full-batch reference run followed by an exact evaluation of h at the
// final point.
inline OptimumCacheEntry compute_reference_optimum(const BilevelOracle& oracle,
                                                   std::int64_t iters,
                                                   double step_rho,
                                                   double step_gamma,
                                                   const ExactSolveConfig& cfg = {}) {
  SolverConfig sc;
  sc.method = Method::full_batch;
  sc.schedule.alpha = step_rho;
  sc.schedule.beta = step_gamma;
  sc.total_iters = iters;
  sc.eval_value_metrics = false;
  sc.eval_cfg = cfg;
  const RunRecord rec = run_framework(oracle, sc);
  if (rec.diverged)
    throw std::runtime_error("compute_reference_optimum: reference run diverged");
  OptimumCacheEntry e;
  e.problem_fingerprint = oracle.fingerprint();
  e.h_star = value_and_grad(oracle, rec.final_state.x, cfg).h;
  e.tolerance = cfg.inner_tol;
  e.iterations = iters;
  char stamp[32];
  const std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  e.created = stamp;
  return e;
}

}  // namespace bilevel
