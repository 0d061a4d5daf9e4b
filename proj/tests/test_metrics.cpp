#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "bilevel/data/synthetic.hpp"
#include "bilevel/metrics.hpp"
#include "bilevel/optimum_cache.hpp"
#include "bilevel/problems/hyperclean.hpp"
#include "bilevel/problems/logreg.hpp"
#include "bilevel/problems/quadratic.hpp"
#include "bilevel/problems/ridge.hpp"
#include "bilevel/solvers.hpp"
#include "test_support.hpp"

using namespace bilevel;
using namespace testsupport;

namespace {

// one-hot dataset: feature index equals the label, cycled over classes
SparseDataset one_hot_classes(std::size_t count, std::size_t classes) {
  SparseDataset ds;
  ds.num_features = classes;
  for (std::size_t i = 0; i < count; ++i) {
    const auto label = static_cast<int>(i % classes);
    ds.add_row(label, {static_cast<std::uint32_t>(label)}, {1.0});
  }
  return ds;
}

}  // namespace

TEST_CASE("solve_inner") {
  SUBCASE("quadratic matches the closed-form solve") {
    auto prob = make_quadratic(0, {8, 8, 5, 5}, 1.0);
    RngStream rng(1, 0);
    const Vec x = random_vec(rng, 5);
    const ExactSolveConfig cfg;
    const Vec z = solve_inner(prob, x, cfg);
    CHECK(norm(sub(z, prob.z_star(x))) <= 10.0 * cfg.inner_tol / 1.0);
  }

  SUBCASE("ridge matches the normal equations") {
    auto prob = make_toy_ridge(0);
    const double lambda = 0.21;
    const Vec z = solve_inner(prob, {lambda});
    CHECK(norm(sub(z, prob.theta_star(lambda))) <= 1e-8);
  }

  SUBCASE("pure proximity term: z* = c") {
    // G_i(z, x) = 1/2||z||^2 - c'z  =>  minimizer c
    const Vec c{0.4, -1.1, 2.2};
    std::vector<Matrix> a(3, Matrix::identity(3));
    std::vector<Matrix> b(3, Matrix(2, 3));
    std::vector<Vec> cs(3, scaled(c, -1.0));
    std::vector<Matrix> pm(2, Matrix::identity(3)), qm(2, Matrix::identity(2));
    std::vector<Vec> e(2, Vec(3, 0.0)), f(2, Vec(2, 0.0));
    QuadraticBilevel prob(std::move(a), std::move(b), std::move(cs), std::move(pm),
                          std::move(e), std::move(qm), std::move(f), 1.0, 0xCC);
    const Vec z = solve_inner(prob, Vec(2, 0.0));
    CHECK(max_abs_diff(z, c) <= 1e-9);
  }

  SUBCASE("iteration cap raises a tolerance error carrying the residual") {
    auto prob = make_toy_ridge(1);
    ExactSolveConfig cfg;
    cfg.max_iters = 1;
    cfg.inner_tol = 1e-14;
    CHECK_THROWS_AS((void)solve_inner(prob, {0.1}, cfg), ToleranceNotMet);
  }
}

TEST_CASE("solve_adjoint") {
  SUBCASE("identity Hessian gives v* = -grad_1 F") {
    auto prob = make_decoupled_quadratic({4, 3, 3, 2});
    // decoupled F has P_j = 0, so grad_1 F = 0 and v* = 0; perturb with a
    // nonzero-P instance instead
    std::vector<Matrix> a(2, Matrix::identity(3)), b(2, Matrix(2, 3));
    std::vector<Vec> c(2, Vec(3, 0.0));
    std::vector<Matrix> pm(2, Matrix::identity(3)), qm(2, Matrix::identity(2));
    std::vector<Vec> e{{1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}}, f(2, Vec(2, 0.0));
    QuadraticBilevel unit(std::move(a), std::move(b), std::move(c), std::move(pm),
                          std::move(e), std::move(qm), std::move(f), 1.0, 0xAD);
    const Vec x(2, 0.0);
    const Vec zs = unit.z_star(x);  // = 0
    const Vec vs = solve_adjoint(unit, zs, x);
    JointState s{zs, Vec(3, 0.0), x};
    const Vec f1 = full_mean(unit, SampledOp::grad_f_in, s);
    CHECK(max_abs_diff(vs, scaled(f1, -1.0)) <= 1e-10);
  }

  SUBCASE("5x5 system matches a dense direct solve") {
    auto prob = make_quadratic(2, {6, 6, 5, 4}, 0.8);
    RngStream rng(2, 0);
    const Vec x = random_vec(rng, 4);
    const Vec zs = prob.z_star(x);
    const Vec vs = solve_adjoint(prob, zs, x);
    CHECK(rel_err(vs, prob.v_star(x)) < 1e-8);

    // post-hoc residual check
    JointState sv{zs, vs, x};
    Vec resid = full_mean(prob, SampledOp::hvp_g, sv);
    JointState s0{zs, Vec(5, 0.0), x};
    axpy(1.0, full_mean(prob, SampledOp::grad_f_in, s0), resid);
    CHECK(norm(resid) <= 1e-10);
  }

  SUBCASE("zero right-hand side gives v* = 0") {
    auto prob = make_decoupled_quadratic({4, 3, 3, 2});
    const Vec x(2, 0.0);
    const Vec vs = solve_adjoint(prob, prob.z_star(x), x);
    CHECK(norm(vs) == 0.0);
  }

  SUBCASE("stagnation under an iteration cap is a tolerance error") {
    auto prob = make_quadratic(3, {6, 6, 5, 4}, 0.8);
    ExactSolveConfig cfg;
    cfg.max_iters = 1;
    cfg.linear_tol = 1e-14;
    const Vec x(4, 0.5);
    const Vec zs = prob.z_star(x);
    CHECK_THROWS_AS((void)solve_adjoint(prob, zs, x, cfg), ToleranceNotMet);
  }
}

TEST_CASE("value_and_grad") {
  const ExactSolveConfig cfg;

  SUBCASE("quadratic matches the closed form") {
    auto prob = make_quadratic(0, {8, 8, 5, 5}, 1.0);
    RngStream rng(3, 0);
    const Vec x = random_vec(rng, 5);
    const ValueGrad vg = value_and_grad(prob, x, cfg);
    CHECK(std::abs(vg.h - prob.h_value(x)) <= 1e-8);
    CHECK(max_abs_diff(vg.grad, prob.h_grad(x)) <= 1e-8);
  }

  SUBCASE("decoupled instance: grad h = x") {
    auto prob = make_decoupled_quadratic({4, 3, 3, 2});
    const Vec x{0.8, -0.6};
    const ValueGrad vg = value_and_grad(prob, x, cfg);
    CHECK(max_abs_diff(vg.grad, x) <= 1e-10);
  }

  SUBCASE("finite differences of h on the ridge problem") {
    auto prob = make_toy_ridge(0);
    RngStream rng(4, 0);
    for (int rep = 0; rep < 10; ++rep) {
      const double lambda = std::exp(rng.uniform(-4.0, 1.0));
      const ValueGrad vg = value_and_grad(prob, {lambda}, cfg);
      CHECK(std::abs(vg.h - prob.h_exact(lambda)) <= 1e-9);
      const double fd = (prob.h_exact(lambda + kFdStep) -
                         prob.h_exact(lambda - kFdStep)) /
                        (2.0 * kFdStep);
      CHECK(rel_err(vg.grad[0], fd) < 1e-5);
    }
  }

  SUBCASE("directional finite differences on the logistic problem") {
    auto prob = make_logreg_hyper(make_binary_blobs(5, 60, 8),
                                  make_binary_blobs(6, 40, 8));
    RngStream rng(5, 0);
    for (int rep = 0; rep < 3; ++rep) {
      const Vec lam = random_vec(rng, 8, 0.3);
      const Vec u = random_vec(rng, 8);
      const ValueGrad vg = value_and_grad(prob, lam, cfg);
      const double fd = fd_scalar_directional(
          [&](const Vec& xx) { return value_and_grad(prob, xx, cfg).h; }, lam, u);
      CHECK(rel_err(dot(vg.grad, u), fd) < 1e-5);
    }
  }
}

TEST_CASE("suboptimality") {
  SUBCASE("zero at the argmin of the quadratic") {
    auto prob = make_quadratic(6, {6, 6, 4, 4}, 1.0);
    CHECK(suboptimality(prob, prob.x_opt()) <= 1e-10);
    CHECK(suboptimality(prob, prob.x_opt()) >= -1e-9);
  }

  SUBCASE("monotone along a full-batch descent trajectory") {
    auto prob = make_quadratic(7, {6, 6, 4, 4}, 1.0);
    SolverConfig cfg;
    cfg.method = Method::full_batch;
    cfg.schedule.alpha = 0.2;
    cfg.schedule.beta = 0.1;
    cfg.total_iters = 300;
    cfg.eval_every = 20;
    const RunRecord rec = run_framework(prob, cfg);
    REQUIRE(!rec.diverged);
    const double h_star = *prob.reference_optimum();
    // monotone until the gap hits the exact-solve noise floor
    for (std::size_t k = 3; k < rec.rows.size(); ++k) {
      const double prev = rec.rows[k - 1].h - h_star;
      if (prev < 1e-9) break;
      CHECK(rec.rows[k].h - h_star <= prev * (1.0 + 1e-9));
    }
    CHECK(rec.rows.back().h - h_star < 1e-9);
  }

  SUBCASE("no registered optimum is an unsupported-metric error") {
    auto prob = make_logreg_hyper(make_binary_blobs(7, 10, 3),
                                  make_binary_blobs(8, 8, 3));
    CHECK_THROWS_AS((void)suboptimality(prob, Vec(3, 0.0)), UnsupportedMetric);
  }

  SUBCASE("ridge reference optimum is stable across repeated evaluation") {
    auto prob = make_toy_ridge(3);
    const double h1 = *prob.reference_optimum();
    const double h2 = *prob.reference_optimum();
    CHECK(h1 == h2);
    CHECK(suboptimality(prob, {1.0}) >= -1e-9);
  }
}

TEST_CASE("delta diagnostics") {
  auto prob = make_quadratic(8, {6, 6, 4, 3}, 1.0);
  RngStream rng(6, 0);
  const Vec x = random_vec(rng, 3);

  SUBCASE("zero at the target pair") {
    const JointState star{prob.z_star(x), prob.v_star(x), x};
    const auto [dz, dv] = delta_diagnostics(prob, star);
    CHECK(dz <= 1e-16);
    CHECK(dv <= 1e-16);
  }

  SUBCASE("delta_z does not depend on v") {
    JointState s{random_vec(rng, 4), random_vec(rng, 4), x};
    const auto [dz1, dv1] = delta_diagnostics(prob, s);
    s.v = random_vec(rng, 4);
    const auto [dz2, dv2] = delta_diagnostics(prob, s);
    CHECK(dz1 == dz2);
    CHECK(dv1 != dv2);
  }
}

TEST_CASE("test_error") {
  SUBCASE("perfect predictor on a separable set") {
    auto prob = make_hyperclean(one_hot_classes(30, 5), one_hot_classes(10, 5),
                                one_hot_classes(20, 5), 0.0, 0.2, 0);
    // theta[c][k] = 1 when c == k: logits = e_label
    Vec theta(prob.dims().p, 0.0);
    for (std::size_t c = 0; c < 5; ++c) theta[c * 5 + c] = 1.0;
    CHECK(test_error(prob, theta) == 0.0);
  }

  SUBCASE("uninformative 10-class predictor on balanced labels") {
    // features independent of labels: separation 0
    auto prob = make_hyperclean(make_multiclass_blobs(1, 50, 8, 10),
                                make_multiclass_blobs(2, 20, 8, 10),
                                make_multiclass_blobs(3, 10000, 8, 10, 0.0, 1.0),
                                0.0, 0.2, 0);
    RngStream rng(7, 0);
    const Vec theta = random_vec(rng, prob.dims().p);
    const double err = test_error(prob, theta);
    CHECK(err > 0.87);
    CHECK(err < 0.93);
  }

  SUBCASE("non-classification problem is an unsupported-metric error") {
    auto prob = make_quadratic(9, {4, 4, 3, 3}, 1.0);
    CHECK_THROWS_AS((void)test_error(prob, Vec(3, 0.0)), UnsupportedMetric);
  }
}

TEST_CASE("reference-optimum cache") {
  auto prob = make_quadratic(10, {6, 6, 4, 4}, 1.0);
  const auto path = std::filesystem::temp_directory_path() / "bilevel_test_opt.json";

  OptimumCacheEntry entry;
  entry.problem_fingerprint = prob.fingerprint();
  entry.h_star = *prob.reference_optimum();
  entry.tolerance = 1e-10;
  entry.created = "test";
  write_optimum_cache(path.string(), entry);

  SUBCASE("round trip") {
    const double h = load_reference_optimum(path.string(), prob);
    CHECK(h == entry.h_star);
  }

  SUBCASE("stale cache is rejected") {
    auto other = make_quadratic(11, {6, 6, 4, 4}, 1.0);
    CHECK_THROWS((void)load_reference_optimum(path.string(), other));
  }

  SUBCASE("computed reference agrees with the closed form") {
    const OptimumCacheEntry computed =
        compute_reference_optimum(prob, 4000, 0.2, 0.1);
    CHECK(std::abs(computed.h_star - entry.h_star) < 1e-8);
  }

  std::filesystem::remove(path);
}
