#pragma once

// Benchmark harness: declarative experiment configs (JSON), multi-seed cell
// execution in a bounded worker pool, long-format CSV emission, a JSON
// manifest that fully determines the run, and curve aggregation.

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "bilevel/csv.hpp"
#include "bilevel/data/idx.hpp"
#include "bilevel/data/libsvm.hpp"
#include "bilevel/data/synthetic.hpp"
#include "bilevel/hash.hpp"
#include "bilevel/metrics.hpp"
#include "bilevel/problems/hyperclean.hpp"
#include "bilevel/problems/logreg.hpp"
#include "bilevel/problems/quadratic.hpp"
#include "bilevel/problems/ridge.hpp"
#include "bilevel/solvers.hpp"

namespace bilevel {

inline constexpr const char* kVersion = "0.1.0";

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : std::runtime_error("config error at " + path + ": " + what) {}
};

namespace detail {

template <typename T>
T get_field(const nlohmann::json& j, const std::string& key,
            const std::string& path) {
  if (!j.contains(key)) throw ConfigError(path + "." + key, "missing field");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + "." + key, e.what());
  }
}

template <typename T>
T get_field_or(const nlohmann::json& j, const std::string& key, T fallback,
               const std::string& path) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + "." + key, e.what());
  }
}

// either an explicit array or {"min":..., "max":..., "count":...} log-spaced
inline std::vector<double> parse_grid_axis(const nlohmann::json& j,
                                           const std::string& path) {
  if (j.is_array()) {
    std::vector<double> v;
    for (const auto& e : j) v.push_back(e.get<double>());
    if (v.empty()) throw ConfigError(path, "empty grid axis");
    return v;
  }
  if (j.is_object()) {
    const double lo = get_field<double>(j, "min", path);
    const double hi = get_field<double>(j, "max", path);
    const auto count = get_field<std::size_t>(j, "count", path);
    if (lo <= 0.0 || hi <= 0.0 || count < 1)
      throw ConfigError(path, "log grid needs positive min/max and count >= 1");
    std::vector<double> v;
    for (std::size_t k = 0; k < count; ++k) {
      const double t = count == 1 ? 0.0
                                  : static_cast<double>(k) /
                                        static_cast<double>(count - 1);
      v.push_back(std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo))));
    }
    return v;
  }
  throw ConfigError(path, "expected array or {min,max,count}");
}

}  // namespace detail

struct GridSpec {
  std::vector<double> alphas;
  std::vector<double> ratios;  // beta = alpha / r
  std::size_t runs_per_cell = 10;
  GridObjective objective = GridObjective::value;
};

struct SolverSpec {
  std::string name;
  SolverConfig config;
};

struct ExperimentConfig {
  nlohmann::json problem_json;
  std::vector<SolverSpec> solvers;
  std::vector<std::uint64_t> seeds;
  std::string output_dir = "results";
  bool eval_value = true;
  bool eval_test_error = false;
  double wall_budget_sec = 0.0;  // per cell; 0 = unlimited
  ExactSolveConfig eval_cfg;
  std::optional<GridSpec> grid;
  nlohmann::json raw;
};

inline SparseDataset load_sparse_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path);
  return parse_libsvm(in);
}

// Problem factory. Synthetic families need only a seed; file-backed families
// take libsvm or IDX paths.
inline std::unique_ptr<BilevelOracle> make_problem(const nlohmann::json& pj,
                                                   const std::string& path = "problem") {
  const auto family = detail::get_field<std::string>(pj, "family", path);
  const auto seed = detail::get_field_or<std::uint64_t>(pj, "seed", 0, path);
  if (family == "quadratic") {
    ProblemDims dm;
    dm.n = detail::get_field_or<std::size_t>(pj, "n", 8, path);
    dm.m = detail::get_field_or<std::size_t>(pj, "m", 8, path);
    dm.p = detail::get_field_or<std::size_t>(pj, "p", 5, path);
    dm.d = detail::get_field_or<std::size_t>(pj, "d", 5, path);
    const double mu = detail::get_field_or<double>(pj, "mu", 1.0, path);
    return std::make_unique<QuadraticBilevel>(make_quadratic(seed, dm, mu));
  }
  if (family == "toy_ridge") {
    return std::make_unique<ToyRidgeProblem>(make_toy_ridge(seed));
  }
  if (family == "logreg") {
    SparseDataset train, val, test;
    if (pj.contains("train_path")) {
      train = load_sparse_dataset(detail::get_field<std::string>(pj, "train_path", path));
      val = load_sparse_dataset(detail::get_field<std::string>(pj, "val_path", path));
      if (pj.contains("test_path"))
        test = load_sparse_dataset(detail::get_field<std::string>(pj, "test_path", path));
    } else {
      const auto n = detail::get_field_or<std::size_t>(pj, "train_size", 500, path);
      const auto m = detail::get_field_or<std::size_t>(pj, "val_size", 500, path);
      const auto nt = detail::get_field_or<std::size_t>(pj, "test_size", 0, path);
      const auto p = detail::get_field_or<std::size_t>(pj, "features", 22, path);
      const auto sep = detail::get_field_or<double>(pj, "separation", 1.5, path);
      const auto noise = detail::get_field_or<double>(pj, "noise", 1.0, path);
      auto splits =
          make_binary_blob_splits(seed, {n, m, nt > 0 ? nt : 1}, p, sep, noise);
      train = std::move(splits[0]);
      val = std::move(splits[1]);
      if (nt > 0) test = std::move(splits[2]);
    }
    return std::make_unique<LogRegHyperProblem>(std::move(train), std::move(val),
                                                std::move(test));
  }
  if (family == "hyperclean") {
    const double p_corrupt = detail::get_field_or<double>(pj, "p_corrupt", 0.5, path);
    const double c_r = detail::get_field_or<double>(pj, "c_r", 0.2, path);
    SparseDataset train, val, test;
    if (pj.contains("images_path")) {
      std::ifstream imgs(detail::get_field<std::string>(pj, "images_path", path),
                         std::ios::binary);
      std::ifstream labs(detail::get_field<std::string>(pj, "labels_path", path),
                         std::ios::binary);
      if (!imgs || !labs) throw std::runtime_error("cannot open IDX files");
      const SparseDataset all =
          idx_to_dataset(read_idx_images(imgs), read_idx_labels(labs));
      const auto n = detail::get_field<std::size_t>(pj, "train_size", path);
      const auto m = detail::get_field<std::size_t>(pj, "val_size", path);
      const auto nt = detail::get_field<std::size_t>(pj, "test_size", path);
      if (n + m + nt > all.num_rows())
        throw ConfigError(path, "IDX split larger than dataset");
      auto slice = [&](std::size_t lo, std::size_t hi) {
        SparseDataset out;
        out.num_features = all.num_features;
        for (std::size_t r = lo; r < hi; ++r) {
          std::vector<std::uint32_t> idx(all.indices.begin() + all.offsets[r],
                                         all.indices.begin() + all.offsets[r + 1]);
          std::vector<double> val_(all.values.begin() + all.offsets[r],
                                   all.values.begin() + all.offsets[r + 1]);
          out.add_row(all.labels[r], idx, val_);
        }
        return out;
      };
      train = slice(0, n);
      val = slice(n, n + m);
      test = slice(n + m, n + m + nt);
    } else {
      const auto n = detail::get_field_or<std::size_t>(pj, "train_size", 2000, path);
      const auto m = detail::get_field_or<std::size_t>(pj, "val_size", 500, path);
      const auto nt = detail::get_field_or<std::size_t>(pj, "test_size", 1000, path);
      const auto p = detail::get_field_or<std::size_t>(pj, "features", 25, path);
      const auto classes = detail::get_field_or<std::size_t>(pj, "classes", 10, path);
      const auto sep = detail::get_field_or<double>(pj, "separation", 2.0, path);
      const auto noise = detail::get_field_or<double>(pj, "noise", 1.0, path);
      auto splits =
          make_multiclass_blob_splits(seed, {n, m, nt}, p, classes, sep, noise);
      train = std::move(splits[0]);
      val = std::move(splits[1]);
      test = std::move(splits[2]);
    }
    return std::make_unique<HyperCleanProblem>(std::move(train), std::move(val),
                                               std::move(test), p_corrupt, c_r, seed);
  }
  throw ConfigError(path + ".family", "unknown family '" + family + "'");
}

inline SolverSpec parse_solver(const nlohmann::json& sj, const std::string& path) {
  SolverSpec spec;
  spec.config.method =
      method_from_name(detail::get_field<std::string>(sj, "method", path));
  spec.name = detail::get_field_or<std::string>(sj, "name",
                                                method_name(spec.config.method), path);
  auto& cfg = spec.config;
  cfg.schedule.alpha = detail::get_field_or<double>(sj, "alpha", 0.1, path);
  cfg.schedule.beta = detail::get_field_or<double>(sj, "beta", cfg.schedule.alpha, path);
  cfg.schedule.a = detail::get_field_or<double>(sj, "a", 0.0, path);
  cfg.schedule.b = detail::get_field_or<double>(sj, "b", 0.0, path);
  cfg.batch.inner = detail::get_field_or<std::size_t>(sj, "batch_inner", 1, path);
  cfg.batch.outer = detail::get_field_or<std::size_t>(sj, "batch_outer", 1, path);
  cfg.total_iters = detail::get_field_or<std::int64_t>(sj, "iters", 1000, path);
  cfg.inner_steps = detail::get_field_or<std::size_t>(sj, "inner_steps", 10, path);
  cfg.neumann_steps = detail::get_field_or<std::size_t>(sj, "neumann_steps", 10, path);
  cfg.eta = detail::get_field_or<double>(sj, "eta", 0.0, path);
  cfg.eval_every = detail::get_field_or<std::int64_t>(sj, "eval_every", 0, path);
  cfg.recompute_every =
      detail::get_field_or<std::int64_t>(sj, "recompute_every", -1, path);
  cfg.oracle_budget = detail::get_field_or<std::uint64_t>(sj, "oracle_budget", 0, path);
  cfg.wall_budget_sec = detail::get_field_or<double>(sj, "wall_budget_sec", 0.0, path);
  try {
    cfg.schedule.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
  return spec;
}

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  ExperimentConfig cfg;
  cfg.raw = j;
  if (!j.contains("problem")) throw ConfigError("problem", "missing field");
  cfg.problem_json = j.at("problem");
  if (!j.contains("solvers") || !j.at("solvers").is_array() || j.at("solvers").empty())
    throw ConfigError("solvers", "need at least one solver");
  std::size_t k = 0;
  for (const auto& sj : j.at("solvers")) {
    cfg.solvers.push_back(parse_solver(sj, "solvers[" + std::to_string(k) + "]"));
    ++k;
  }
  cfg.seeds = detail::get_field_or<std::vector<std::uint64_t>>(j, "seeds", {0},
                                                               "config");
  if (cfg.seeds.empty()) throw ConfigError("seeds", "need at least one seed");
  cfg.output_dir = detail::get_field_or<std::string>(j, "output_dir", "results",
                                                     "config");
  if (j.contains("budget")) {
    cfg.wall_budget_sec =
        detail::get_field_or<double>(j.at("budget"), "wall_sec", 0.0, "budget");
  }
  if (j.contains("eval")) {
    const auto& ej = j.at("eval");
    cfg.eval_value = detail::get_field_or<bool>(ej, "value", true, "eval");
    cfg.eval_test_error = detail::get_field_or<bool>(ej, "test_error", false, "eval");
    cfg.eval_cfg.inner_tol =
        detail::get_field_or<double>(ej, "inner_tol", 1e-10, "eval");
    cfg.eval_cfg.linear_tol =
        detail::get_field_or<double>(ej, "linear_tol", 1e-10, "eval");
  }
  if (j.contains("grid")) {
    const auto& gj = j.at("grid");
    GridSpec g;
    g.alphas = detail::parse_grid_axis(gj.at("alphas"), "grid.alphas");
    g.ratios = detail::parse_grid_axis(gj.at("ratios"), "grid.ratios");
    g.runs_per_cell =
        detail::get_field_or<std::size_t>(gj, "runs_per_cell", 10, "grid");
    const auto obj = detail::get_field_or<std::string>(gj, "objective", "value",
                                                       "grid");
    if (obj == "value")
      g.objective = GridObjective::value;
    else if (obj == "test_error")
      g.objective = GridObjective::test_error;
    else
      throw ConfigError("grid.objective", "expected 'value' or 'test_error'");
    cfg.grid = std::move(g);
  }
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config " + path + " is not valid JSON: " + e.what());
  }
  return parse_experiment_config(j);
}

// Long-format results: one row per (cell, logged iteration, metric).
struct ResultRow {
  std::string method;
  std::uint64_t seed = 0;
  std::int64_t t = 0;
  std::uint64_t oracle_calls = 0;
  double wall_time = 0.0;
  std::string metric;
  double value = 0.0;

  bool operator==(const ResultRow&) const = default;
};

struct ResultTable {
  std::vector<ResultRow> rows;

  bool operator==(const ResultTable&) const = default;
};

struct CellStatus {
  std::string method;
  std::uint64_t seed = 0;
  bool diverged = false;
  std::int64_t diverged_at = -1;
  std::string csv_file;
};

struct ExperimentResult {
  ResultTable table;
  std::vector<CellStatus> cells;
  nlohmann::json manifest;
};

inline void append_record_rows(ResultTable& table, const std::string& method,
                               std::uint64_t seed, const RunRecord& rec) {
  for (const MetricRow& r : rec.rows) {
    const std::uint64_t calls = r.grad_calls + r.hvp_calls;
    auto push = [&](const char* name, double value) {
      if (std::isnan(value)) return;
      table.rows.push_back(
          {method, seed, r.t, calls, r.wall_sec, name, value});
    };
    push("h", r.h);
    push("grad_h_sq", r.grad_h_sq);
    push("runavg_grad_h_sq", r.runavg_grad_h_sq);
    push("runinf_grad_h_sq", r.runinf_grad_h_sq);
    push("delta_z", r.delta_z);
    push("delta_v", r.delta_v);
    push("test_error", r.test_error);
    push("grad_calls", static_cast<double>(r.grad_calls));
    push("hvp_calls", static_cast<double>(r.hvp_calls));
  }
}

inline void write_result_csv(const ResultTable& table, std::ostream& out) {
  write_csv_row(out, {"method", "seed", "t", "oracle_calls", "wall_time", "metric",
                      "value"});
  for (const ResultRow& r : table.rows)
    write_csv_row(out, {r.method, std::to_string(r.seed), std::to_string(r.t),
                        std::to_string(r.oracle_calls), format_double(r.wall_time),
                        r.metric, format_double(r.value)});
}

inline ResultTable read_result_csv(std::istream& in) {
  ResultTable table;
  std::vector<std::string> fields;
  if (!read_csv_row(in, fields)) throw std::runtime_error("csv: empty result file");
  const std::vector<std::string> expected = {"method", "seed",      "t",
                                             "oracle_calls", "wall_time", "metric",
                                             "value"};
  if (fields != expected) throw std::runtime_error("csv: unexpected header");
  while (read_csv_row(in, fields)) {
    if (fields.size() == 1 && fields[0].empty()) continue;
    if (fields.size() != 7) throw std::runtime_error("csv: bad field count");
    ResultRow r;
    r.method = fields[0];
    r.seed = std::stoull(fields[1]);
    r.t = std::stoll(fields[2]);
    r.oracle_calls = std::stoull(fields[3]);
    r.wall_time = std::stod(fields[4]);
    r.metric = fields[5];
    r.value = std::stod(fields[6]);
    table.rows.push_back(std::move(r));
  }
  return table;
}

inline std::string config_hash_hex(const nlohmann::json& j) {
  const std::uint64_t h = fnv1a(j.dump());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Run every (solver, seed) cell. Cells execute in a bounded pool; outputs are
// assembled in deterministic order. Writes one CSV per cell, a merged CSV and
// a manifest when write_files is set.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       std::size_t jobs = 1,
                                       bool write_files = true,
                                       std::uint64_t seed_offset = 0) {
  const auto problem = make_problem(cfg.problem_json);

  struct Cell {
    std::size_t solver_idx;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (std::size_t si = 0; si < cfg.solvers.size(); ++si)
    for (std::uint64_t sd : cfg.seeds) cells.push_back({si, sd + seed_offset});

  std::vector<RunRecord> records(cells.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  const std::size_t pool = std::max<std::size_t>(1, std::min(jobs, cells.size()));
  std::mutex error_mutex;
  std::string first_error;

  auto work = [&]() {
    while (true) {
      const std::size_t k = next.fetch_add(1);
      if (k >= cells.size()) return;
      try {
        SolverConfig sc = cfg.solvers[cells[k].solver_idx].config;
        sc.seed = cells[k].seed;
        sc.eval_value_metrics = cfg.eval_value;
        sc.eval_test_error = cfg.eval_test_error;
        sc.eval_cfg = cfg.eval_cfg;
        if (sc.wall_budget_sec <= 0.0) sc.wall_budget_sec = cfg.wall_budget_sec;
        records[k] = run_solver(*problem, sc);
      } catch (const std::exception& e) {
        std::scoped_lock lock(error_mutex);
        if (first_error.empty()) first_error = e.what();
      }
    }
  };
  for (std::size_t w = 0; w < pool; ++w) workers.emplace_back(work);
  for (auto& w : workers) w.join();
  if (!first_error.empty()) throw std::runtime_error("experiment cell failed: " + first_error);

  ExperimentResult result;
  namespace fs = std::filesystem;
  if (write_files) fs::create_directories(cfg.output_dir);

  for (std::size_t k = 0; k < cells.size(); ++k) {
    const std::string& name = cfg.solvers[cells[k].solver_idx].name;
    const std::uint64_t seed = cells[k].seed;
    CellStatus status;
    status.method = name;
    status.seed = seed;
    status.diverged = records[k].diverged;
    status.diverged_at = records[k].diverged_at;
    status.csv_file = "cell_" + name + "_s" + std::to_string(seed) + ".csv";

    ResultTable cell_table;
    append_record_rows(cell_table, name, seed, records[k]);
    if (write_files) {
      std::ofstream out(fs::path(cfg.output_dir) / status.csv_file);
      write_result_csv(cell_table, out);
    }
    result.table.rows.insert(result.table.rows.end(), cell_table.rows.begin(),
                             cell_table.rows.end());
    result.cells.push_back(std::move(status));
  }

  nlohmann::json manifest;
  manifest["version"] = kVersion;
  manifest["config"] = cfg.raw;
  if (seed_offset != 0) {
    // embed the effective seeds so replaying the manifest config alone
    // reproduces the run
    nlohmann::json shifted = nlohmann::json::array();
    for (std::uint64_t sd : cfg.seeds) shifted.push_back(sd + seed_offset);
    manifest["config"]["seeds"] = shifted;
  }
  manifest["config_hash"] = config_hash_hex(cfg.raw);
  manifest["seed_offset"] = seed_offset;
#if defined(__linux__)
  manifest["platform"] = "linux";
#elif defined(__APPLE__)
  manifest["platform"] = "darwin";
#else
  manifest["platform"] = "other";
#endif
  manifest["merged_csv"] = "results.csv";
  manifest["cells"] = nlohmann::json::array();
  for (const CellStatus& c : result.cells) {
    nlohmann::json cj;
    cj["method"] = c.method;
    cj["seed"] = c.seed;
    cj["status"] = c.diverged ? "diverged" : "done";
    cj["diverged_at"] = c.diverged_at;
    cj["csv"] = c.csv_file;
    manifest["cells"].push_back(cj);
  }
  result.manifest = manifest;

  if (write_files) {
    std::ofstream merged(fs::path(cfg.output_dir) / "results.csv");
    write_result_csv(result.table, merged);
    std::ofstream mf(fs::path(cfg.output_dir) / "manifest.json");
    mf << manifest.dump(2) << '\n';
  }
  return result;
}

enum class Aggregation { median, mean, inf };

inline Aggregation aggregation_from_name(const std::string& name) {
  if (name == "median") return Aggregation::median;
  if (name == "mean") return Aggregation::mean;
  if (name == "inf") return Aggregation::inf;
  throw std::invalid_argument("unknown aggregation '" + name + "'");
}

struct CurveRow {
  std::string method;
  std::string metric;
  std::int64_t t = 0;
  double oracle_calls = 0.0;
  double wall_time = 0.0;
  double value = 0.0;
};

// Aggregate per-method curves across seeds at matched iteration counts, with
// iteration, oracle-call and wall-time axes. Diverged cells are excluded.
inline std::vector<CurveRow> summarize(const ResultTable& table,
                                       const std::vector<CellStatus>& cells,
                                       Aggregation agg) {
  std::set<std::pair<std::string, std::uint64_t>> excluded;
  for (const CellStatus& c : cells)
    if (c.diverged) excluded.insert({c.method, c.seed});

  // metric-name consistency across cells
  std::map<std::pair<std::string, std::uint64_t>, std::set<std::string>> names;
  for (const ResultRow& r : table.rows) names[{r.method, r.seed}].insert(r.metric);
  for (auto it = names.begin(); it != names.end(); ++it)
    if (it->second != names.begin()->second)
      throw std::runtime_error("summarize: cells carry different metric sets");

  struct Key {
    std::string method, metric;
    std::int64_t t;
    auto operator<=>(const Key&) const = default;
  };
  struct Point {
    std::uint64_t seed;
    double calls, wall, value;
  };
  std::map<Key, std::vector<Point>> groups;
  for (const ResultRow& r : table.rows) {
    if (excluded.contains({r.method, r.seed})) continue;
    groups[{r.method, r.metric, r.t}].push_back(
        {r.seed, static_cast<double>(r.oracle_calls), r.wall_time, r.value});
  }

  // per-seed running infimum over t needs a pass in t order per (method,
  // metric, seed); groups are already sorted by (method, metric, t)
  std::map<std::pair<std::string, std::string>,
           std::map<std::uint64_t, double>> running_inf;

  std::vector<CurveRow> curves;
  for (auto& [key, pts] : groups) {
    std::vector<double> values, calls, walls;
    for (const Point& pt : pts) {
      double v = pt.value;
      if (agg == Aggregation::inf) {
        auto& per_seed = running_inf[{key.method, key.metric}];
        auto [it, inserted] = per_seed.try_emplace(pt.seed, v);
        if (!inserted) it->second = std::min(it->second, v);
        v = it->second;
      }
      values.push_back(v);
      calls.push_back(pt.calls);
      walls.push_back(pt.wall);
    }
    CurveRow row;
    row.method = key.method;
    row.metric = key.metric;
    row.t = key.t;
    row.oracle_calls = detail::median_of(calls);
    row.wall_time = detail::median_of(walls);
    if (agg == Aggregation::mean) {
      double s = 0.0;
      for (double v : values) s += v;
      row.value = s / static_cast<double>(values.size());
    } else {
      row.value = detail::median_of(values);
    }
    curves.push_back(std::move(row));
  }
  return curves;
}

inline void write_curves_csv(const std::vector<CurveRow>& curves, std::ostream& out) {
  write_csv_row(out, {"method", "metric", "t", "oracle_calls", "wall_time", "value"});
  for (const CurveRow& r : curves)
    write_csv_row(out, {r.method, r.metric, std::to_string(r.t),
                        format_double(r.oracle_calls), format_double(r.wall_time),
                        format_double(r.value)});
}

// Grid search over the config's grid block for every solver; returns the
// per-method best (alpha, beta) as JSON and persists the full grid.
inline nlohmann::json run_gridsearch(const ExperimentConfig& cfg,
                                     bool write_files = true,
                                     std::size_t jobs = 1) {
  if (!cfg.grid) throw ConfigError("grid", "missing grid block");
  const auto problem = make_problem(cfg.problem_json);
  nlohmann::json report;
  report["objective"] =
      cfg.grid->objective == GridObjective::value ? "value" : "test_error";
  report["methods"] = nlohmann::json::array();
  for (const SolverSpec& spec : cfg.solvers) {
    SolverConfig base = spec.config;
    base.seed = cfg.seeds.front();
    base.eval_cfg = cfg.eval_cfg;
    const GridResult res =
        grid_search(*problem, base, cfg.grid->alphas, cfg.grid->ratios,
                    cfg.grid->runs_per_cell, cfg.grid->objective, jobs);
    nlohmann::json mj;
    mj["method"] = spec.name;
    mj["ok"] = res.ok;
    if (res.ok) {
      mj["alpha"] = res.alpha;
      mj["beta"] = res.beta;
      mj["objective"] = res.objective;
    } else {
      mj["error"] = "no convergent cell";
    }
    mj["cells"] = nlohmann::json::array();
    for (const GridCell& c : res.cells) {
      nlohmann::json cj;
      cj["alpha"] = c.alpha;
      cj["ratio"] = c.ratio;
      cj["objective"] = c.objective;
      cj["completed"] = c.completed;
      cj["diverged"] = c.diverged;
      mj["cells"].push_back(cj);
    }
    report["methods"].push_back(mj);
  }
  if (write_files) {
    std::filesystem::create_directories(cfg.output_dir);
    std::ofstream out(std::filesystem::path(cfg.output_dir) / "grid.json");
    out << report.dump(2) << '\n';
  }
  return report;
}

}  // namespace bilevel
