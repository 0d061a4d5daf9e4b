#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bilevel/experiment.hpp"
#include "bilevel/sha256.hpp"

using namespace bilevel;
namespace fs = std::filesystem;

namespace {

nlohmann::json quick_config(std::int64_t iters = 10) {
  return nlohmann::json{
      {"problem", {{"family", "quadratic"}, {"seed", 0}, {"n", 6}, {"m", 6},
                   {"p", 4}, {"d", 3}, {"mu", 1.0}}},
      {"solvers", {{{"name", "saba"}, {"method", "saba"}, {"alpha", 0.05},
                    {"beta", 0.02}, {"iters", iters}, {"eval_every", 5}}}},
      {"seeds", {0}},
      {"output_dir", (fs::temp_directory_path() / "bilevel_exp_test").string()}};
}

// metric columns only: everything except wall_time
auto metric_view(const ResultTable& t) {
  std::vector<std::tuple<std::string, std::uint64_t, std::int64_t, std::uint64_t,
                         std::string, double>> v;
  for (const ResultRow& r : t.rows)
    v.emplace_back(r.method, r.seed, r.t, r.oracle_calls, r.metric, r.value);
  return v;
}

}  // namespace

TEST_CASE("config validation reports field paths") {
  SUBCASE("missing problem") {
    nlohmann::json j{{"solvers", nlohmann::json::array()}};
    try {
      (void)parse_experiment_config(j);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("problem") != std::string::npos);
    }
  }
  SUBCASE("empty solver list") {
    auto j = quick_config();
    j["solvers"] = nlohmann::json::array();
    CHECK_THROWS_AS((void)parse_experiment_config(j), ConfigError);
  }
  SUBCASE("unknown method carries the solver index") {
    auto j = quick_config();
    j["solvers"][0]["method"] = "nope";
    CHECK_THROWS((void)parse_experiment_config(j));
  }
  SUBCASE("bad exponent is rejected at parse time") {
    auto j = quick_config();
    j["solvers"][0]["a"] = 0.37;
    try {
      (void)parse_experiment_config(j);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("solvers[0]") != std::string::npos);
    }
  }
  SUBCASE("unknown problem family") {
    auto j = quick_config();
    j["problem"]["family"] = "mystery";
    CHECK_THROWS_AS((void)make_problem(j["problem"]), ConfigError);
  }
  SUBCASE("grid axis accepts arrays and log ranges") {
    auto j = quick_config();
    j["grid"] = {{"alphas", {0.1, 0.2}},
                 {"ratios", {{"min", 0.01}, {"max", 10.0}, {"count", 7}}},
                 {"runs_per_cell", 2}};
    const auto cfg = parse_experiment_config(j);
    REQUIRE(cfg.grid.has_value());
    CHECK(cfg.grid->alphas.size() == 2);
    CHECK(cfg.grid->ratios.size() == 7);
    CHECK(cfg.grid->ratios.front() == doctest::Approx(0.01));
    CHECK(cfg.grid->ratios.back() == doctest::Approx(10.0));
  }
}

TEST_CASE("csv round trip") {
  ResultTable table;
  table.rows.push_back({"saba", 0, 0, 0, 0.0, "h", 1.2345678901234567e-3});
  table.rows.push_back({"soba,weird\"name", 3, 10, 42, 0.5, "grad_h_sq", -7.25e-9});
  table.rows.push_back({"full", 1, 5, 7, 1.0 / 3.0, "delta_z", 0.1 + 0.2});
  std::ostringstream out;
  write_result_csv(table, out);
  std::istringstream in(out.str());
  const ResultTable back = read_result_csv(in);
  CHECK(back == table);
}

TEST_CASE("run_experiment writes cells, merged csv and manifest") {
  auto j = quick_config();
  const ExperimentConfig cfg = parse_experiment_config(j);
  fs::remove_all(cfg.output_dir);
  const ExperimentResult res = run_experiment(cfg, 1);

  CHECK(res.cells.size() == 1);
  CHECK_FALSE(res.cells[0].diverged);
  CHECK(fs::exists(fs::path(cfg.output_dir) / "results.csv"));
  CHECK(fs::exists(fs::path(cfg.output_dir) / "manifest.json"));
  CHECK(fs::exists(fs::path(cfg.output_dir) / res.cells[0].csv_file));

  // merged csv parses back to the in-memory table
  std::ifstream in(fs::path(cfg.output_dir) / "results.csv");
  const ResultTable parsed = read_result_csv(in);
  CHECK(parsed == res.table);

  // manifest embeds the config and per-cell status
  CHECK(res.manifest.at("config") == j);
  CHECK(res.manifest.at("cells")[0].at("status") == "done");
  fs::remove_all(cfg.output_dir);
}

TEST_CASE("replaying the manifest config reproduces metric columns bitwise") {
  const ExperimentConfig cfg = parse_experiment_config(quick_config(50));
  const ExperimentResult first = run_experiment(cfg, 1, /*write_files=*/false);
  const ExperimentConfig replay =
      parse_experiment_config(first.manifest.at("config"));
  const ExperimentResult second = run_experiment(replay, 2, /*write_files=*/false);
  CHECK(metric_view(first.table) == metric_view(second.table));
}

TEST_CASE("seed offsets land in the manifest's effective seeds") {
  const ExperimentConfig cfg = parse_experiment_config(quick_config(20));
  const ExperimentResult shifted =
      run_experiment(cfg, 1, /*write_files=*/false, /*seed_offset=*/1000);
  CHECK(shifted.cells[0].seed == 1000);
  CHECK(shifted.manifest.at("config").at("seeds")[0].get<std::uint64_t>() == 1000);
  // replay of the embedded config reproduces the shifted run
  const ExperimentConfig replay =
      parse_experiment_config(shifted.manifest.at("config"));
  const ExperimentResult again = run_experiment(replay, 1, /*write_files=*/false);
  CHECK(metric_view(shifted.table) == metric_view(again.table));
}

TEST_CASE("diverged cells are reported and excluded from aggregation") {
  auto j = quick_config(200);
  j["solvers"].push_back({{"name", "wild"}, {"method", "soba"}, {"alpha", 1e8},
                          {"beta", 1e8}, {"iters", 200}});
  j["eval"] = {{"value", false}};
  const ExperimentConfig cfg = parse_experiment_config(j);
  const ExperimentResult res = run_experiment(cfg, 2, /*write_files=*/false);

  REQUIRE(res.cells.size() == 2);
  CHECK_FALSE(res.cells[0].diverged);
  CHECK(res.cells[1].diverged);

  const auto curves = summarize(res.table, res.cells, Aggregation::median);
  for (const CurveRow& r : curves) CHECK(r.method != "wild");
}

TEST_CASE("summarize") {
  ResultTable table;
  // three seeds at two time stamps; metric sets identical per cell
  auto add = [&](std::uint64_t seed, std::int64_t t, double v) {
    table.rows.push_back({"m", seed, t, static_cast<std::uint64_t>(t), 0.0,
                          "grad_h_sq", v});
  };
  add(0, 1, 1.0);
  add(1, 1, 2.0);
  add(2, 1, 100.0);
  add(0, 2, 0.5);
  add(1, 2, 3.0);
  add(2, 2, 50.0);

  SUBCASE("median of {1, 2, 100} is 2") {
    const auto curves = summarize(table, {}, Aggregation::median);
    REQUIRE(curves.size() == 2);
    CHECK(curves[0].value == 2.0);
  }

  SUBCASE("mean aggregation") {
    const auto curves = summarize(table, {}, Aggregation::mean);
    CHECK(curves[0].value == doctest::Approx((1.0 + 2.0 + 100.0) / 3.0));
  }

  SUBCASE("single seed aggregate equals that seed's curve") {
    ResultTable solo;
    solo.rows = {table.rows[0], table.rows[3]};
    const auto curves = summarize(solo, {}, Aggregation::median);
    REQUIRE(curves.size() == 2);
    CHECK(curves[0].value == 1.0);
    CHECK(curves[1].value == 0.5);
  }

  SUBCASE("inf aggregation is non-increasing in t") {
    // per-seed running infimum: seed 1 rises 2 -> 3, inf stays 2
    const auto curves = summarize(table, {}, Aggregation::inf);
    REQUIRE(curves.size() == 2);
    CHECK(curves[1].value <= curves[0].value);
  }

  SUBCASE("mixed metric sets are an error") {
    ResultTable bad = table;
    bad.rows.push_back({"m", 0, 1, 1, 0.0, "extra_metric", 1.0});
    CHECK_THROWS((void)summarize(bad, {}, Aggregation::median));
  }
}

TEST_CASE("run_gridsearch on a degenerate grid returns that pair") {
  auto j = quick_config(300);
  j["grid"] = {{"alphas", {0.05}}, {"ratios", {2.5}}, {"runs_per_cell", 2}};
  const ExperimentConfig cfg = parse_experiment_config(j);
  const auto report = run_gridsearch(cfg, /*write_files=*/false);
  const auto& mj = report.at("methods")[0];
  REQUIRE(mj.at("ok").get<bool>());
  CHECK(mj.at("alpha").get<double>() == 0.05);
  CHECK(mj.at("beta").get<double>() == 0.05 / 2.5);
}

TEST_CASE("sha256 known vectors") {
  CHECK(sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  // streaming across chunk boundaries
  Sha256 h;
  const std::string msg(200, 'a');
  h.update(msg.substr(0, 63));
  h.update(msg.substr(63));
  Sha256 whole;
  whole.update(msg);
  CHECK(h.hex_digest() == whole.hex_digest());
}

TEST_CASE("experiment runs the two-loop and full-batch methods end to end") {
  auto j = quick_config(20);
  j["solvers"] = {{{"name", "stocbio"}, {"method", "two-loop-shia"},
                   {"alpha", 0.05}, {"beta", 0.02}, {"iters", 20},
                   {"inner_steps", 3}, {"neumann_steps", 3}},
                  {{"name", "full"}, {"method", "full-batch"}, {"alpha", 0.1},
                   {"beta", 0.05}, {"iters", 20}}};
  j["seeds"] = {0, 1};
  const ExperimentConfig cfg = parse_experiment_config(j);
  const ExperimentResult res = run_experiment(cfg, 2, /*write_files=*/false);
  CHECK(res.cells.size() == 4);
  for (const auto& c : res.cells) CHECK_FALSE(c.diverged);
  const auto curves = summarize(res.table, res.cells, Aggregation::median);
  CHECK(!curves.empty());
}
