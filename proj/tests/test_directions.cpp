#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bilevel/data/synthetic.hpp"
#include "bilevel/directions.hpp"
#include "bilevel/problems/logreg.hpp"
#include "bilevel/problems/quadratic.hpp"
#include "test_support.hpp"

using namespace bilevel;
using namespace testsupport;

namespace {

DirectionTriple enumerate_soba_mean(const JointState& s, const BilevelOracle& prob,
                                    const BatchSpec& batch) {
  const auto dm = prob.dims();
  const Blocks bin = batch.inner_blocks(dm);
  const Blocks bout = batch.outer_blocks(dm);
  DirectionTriple acc{Vec(dm.p, 0.0), Vec(dm.p, 0.0), Vec(dm.d, 0.0)};
  const double inv = 1.0 / static_cast<double>(bin.num_blocks() * bout.num_blocks());
  for (std::size_t i = 0; i < bin.num_blocks(); ++i)
    for (std::size_t j = 0; j < bout.num_blocks(); ++j) {
      const DirectionTriple d = soba_directions(s, {i, j}, prob, batch);
      axpy(inv, d.dz, acc.dz);
      axpy(inv, d.dv, acc.dv);
      axpy(inv, d.dx, acc.dx);
    }
  return acc;
}

DirectionTriple enumerate_saba_mean(const JointState& s, const SabaMemory& memory,
                                    const BilevelOracle& prob) {
  const auto dm = prob.dims();
  const std::size_t nb = memory.inner_blocks().num_blocks();
  const std::size_t mb = memory.outer_blocks().num_blocks();
  DirectionTriple acc{Vec(dm.p, 0.0), Vec(dm.p, 0.0), Vec(dm.d, 0.0)};
  const double inv = 1.0 / static_cast<double>(nb * mb);
  for (std::size_t i = 0; i < nb; ++i)
    for (std::size_t j = 0; j < mb; ++j) {
      SabaMemory copy = memory;  // memory held fixed across outcomes
      const DirectionTriple d = saba_directions(s, {i, j}, copy, prob);
      axpy(inv, d.dz, acc.dz);
      axpy(inv, d.dv, acc.dv);
      axpy(inv, d.dx, acc.dx);
    }
  return acc;
}

double max_direction_diff(const DirectionTriple& a, const DirectionTriple& b) {
  return std::max({max_abs_diff(a.dz, b.dz), max_abs_diff(a.dv, b.dv),
                   max_abs_diff(a.dx, b.dx)});
}

}  // namespace

TEST_CASE("full directions at the stationary triple") {
  auto prob = make_quadratic(0, {8, 8, 5, 5}, 1.0);
  RngStream rng(1, 0);
  const Vec x = random_vec(rng, 5);
  JointState s{prob.z_star(x), prob.v_star(x), x};
  const DirectionTriple d = full_directions(s, prob);
  CHECK(max_abs(d.dz) <= 1e-10);
  CHECK(max_abs(d.dv) <= 1e-10);
  CHECK(max_abs_diff(d.dx, prob.h_grad(x)) <= 1e-10);
}

TEST_CASE("full directions with v = 0") {
  auto prob = make_quadratic(2, {6, 5, 4, 3}, 1.0);
  const auto dm = prob.dims();
  RngStream rng(2, 0);
  JointState s{random_vec(rng, dm.p), Vec(dm.p, 0.0), random_vec(rng, dm.d)};
  const DirectionTriple d = full_directions(s, prob);
  CHECK(max_abs_diff(d.dv, full_mean(prob, SampledOp::grad_f_in, s)) == 0.0);
  CHECK(max_abs_diff(d.dx, full_mean(prob, SampledOp::grad_f_out, s)) == 0.0);
}

TEST_CASE("all three directions vanish only at the bilevel optimum") {
  auto prob = make_quadratic(3, {6, 6, 4, 4}, 1.0);
  const Vec xo = prob.x_opt();
  JointState s{prob.z_star(xo), prob.v_star(xo), xo};
  const DirectionTriple d = full_directions(s, prob);
  CHECK(max_abs(d.dz) <= 1e-9);
  CHECK(max_abs(d.dv) <= 1e-9);
  CHECK(max_abs(d.dx) <= 1e-9);
  CHECK(norm(prob.h_grad(xo)) <= 1e-9);
}

TEST_CASE("soba equals full when n = m = 1") {
  auto prob = make_quadratic(4, {1, 1, 3, 2}, 1.0);
  RngStream rng(3, 0);
  const JointState s = random_state(rng, prob.dims());
  const DirectionTriple full = full_directions(s, prob);
  const DirectionTriple one = soba_directions(s, {0, 0}, prob, {});
  CHECK(max_direction_diff(full, one) == 0.0);
}

TEST_CASE("soba unbiasedness by enumeration") {
  auto prob = make_quadratic(5, {6, 6, 4, 3}, 1.0);
  RngStream rng(4, 0);
  const JointState s = random_state(rng, prob.dims());
  SUBCASE("single-sample draws") {
    const DirectionTriple mean = enumerate_soba_mean(s, prob, {});
    CHECK(max_direction_diff(mean, full_directions(s, prob)) <= 1e-12);
  }
  SUBCASE("ragged blocks (batch 4 over 6 samples)") {
    const BatchSpec batch{4, 4};
    const DirectionTriple mean = enumerate_soba_mean(s, prob, batch);
    CHECK(max_direction_diff(mean, full_directions(s, prob)) <= 1e-12);
  }
  SUBCASE("logistic problem") {
    auto lg = make_logreg_hyper(make_binary_blobs(1, 9, 4), make_binary_blobs(2, 7, 4));
    RngStream r2(5, 0);
    const JointState sl = random_state(r2, lg.dims(), 0.5);
    const DirectionTriple mean = enumerate_soba_mean(sl, lg, {3, 2});
    CHECK(max_direction_diff(mean, full_directions(sl, lg)) <= 1e-12);
  }
}

TEST_CASE("identical samples give zero-variance soba draws") {
  // every G_i and F_j the same: any draw reproduces the full direction
  std::vector<Matrix> a(5, Matrix::identity(3));
  std::vector<Matrix> b(5, Matrix(2, 3, 0.25));
  std::vector<Vec> c(5, Vec{0.1, -0.2, 0.3});
  std::vector<Matrix> pm(4, Matrix::identity(3));
  std::vector<Vec> e(4, Vec{1.0, 0.0, -1.0});
  std::vector<Matrix> qm(4, Matrix::identity(2));
  std::vector<Vec> f(4, Vec{0.5, 0.5});
  QuadraticBilevel prob(std::move(a), std::move(b), std::move(c), std::move(pm),
                        std::move(e), std::move(qm), std::move(f), 1.0, 0xF1A7);
  RngStream rng(6, 0);
  const JointState s = random_state(rng, prob.dims());
  const DirectionTriple full = full_directions(s, prob);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(max_direction_diff(soba_directions(s, {i, j}, prob, {}), full) <= 1e-15);
}

TEST_CASE("saba memory init") {
  auto prob = make_quadratic(7, {8, 6, 4, 3}, 1.0);
  RngStream rng(7, 0);
  const JointState s0 = random_state(rng, prob.dims());

  SUBCASE("after init, a step at the init state reproduces full directions") {
    SabaMemory memory(s0, prob, {});
    const DirectionTriple full = full_directions(s0, prob);
    const DirectionTriple d = saba_directions(s0, {3, 2}, memory, prob);
    // stored and fresh evaluations cancel bitwise at batch size 1
    CHECK(max_direction_diff(d, full) == 0.0);
  }

  SUBCASE("running average equals D_z at the init state") {
    SabaMemory memory(s0, prob, {});
    const DirectionTriple full = full_directions(s0, prob);
    CHECK(max_abs_diff(memory.avg_g_grad(), full.dz) <= 1e-12);
  }

  SUBCASE("drift is exactly zero after init") {
    SabaMemory memory(s0, prob, {});
    CHECK(memory.recompute_averages() == 0.0);
    SabaMemory batched(s0, prob, {3, 2});
    CHECK(batched.recompute_averages() == 0.0);
  }

  SUBCASE("float count follows the batched accounting") {
    const auto dm = prob.dims();  // n=8, m=6, p=4, d=3
    SabaMemory memory(s0, prob, {});
    CHECK(memory.float_count() == dm.n * dm.p + (dm.n + dm.m) * (dm.p + dm.d));
    SabaMemory batched(s0, prob, {3, 2});  // n_b = 3, m_b = 3
    CHECK(batched.float_count() == 3 * dm.p + (3 + 3) * (dm.p + dm.d));
  }

  SUBCASE("uninitialized memory is a state error") {
    SabaMemory memory;
    JointState s = s0;
    CHECK_THROWS_AS((void)saba_directions(s, {0, 0}, memory, prob), std::logic_error);
    CHECK_THROWS_AS((void)memory.recompute_averages(), std::logic_error);
  }
}

TEST_CASE("saba conditional unbiasedness by enumeration") {
  auto prob = make_quadratic(8, {6, 6, 4, 3}, 1.0);
  RngStream rng(8, 0);
  const JointState s0 = random_state(rng, prob.dims());
  SabaMemory memory(s0, prob, {});

  // march the memory away from the current state
  JointState s1 = random_state(rng, prob.dims());
  for (std::size_t step = 0; step < 10; ++step) {
    const IndexDraw draw = draw_indices(rng, 6, 6);
    (void)saba_directions(s1, draw, memory, prob);
    s1 = random_state(rng, prob.dims());
  }
  const DirectionTriple mean = enumerate_saba_mean(s1, memory, prob);
  CHECK(max_direction_diff(mean, full_directions(s1, prob)) <= 1e-12);
}

TEST_CASE("saba with a single block reduces to full directions") {
  auto prob = make_quadratic(9, {5, 4, 3, 2}, 1.0);
  const auto dm = prob.dims();
  RngStream rng(9, 0);
  JointState s = random_state(rng, dm);
  SabaMemory memory(s, prob, {dm.n, dm.m});  // n_b = m_b = 1
  for (int step = 0; step < 5; ++step) {
    const DirectionTriple d = saba_directions(s, {0, 0}, memory, prob);
    CHECK(max_direction_diff(d, full_directions(s, prob)) <= 1e-13);
    s = random_state(rng, dm);
  }
}

TEST_CASE("saba fixed-point exactness and variance collapse") {
  auto prob = make_quadratic(10, {6, 6, 4, 3}, 1.0);
  RngStream rng(10, 0);
  const Vec x = random_vec(rng, 3);
  const JointState star{prob.z_star(x), prob.v_star(x), x};
  SabaMemory memory(star, prob, {});
  const Vec grad_h = prob.h_grad(x);

  Vec first_dx;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      SabaMemory copy = memory;
      const DirectionTriple d = saba_directions(star, {i, j}, copy, prob);
      CHECK(max_abs_diff(d.dx, grad_h) <= 1e-10);
      if (first_dx.empty())
        first_dx = d.dx;
      else
        CHECK(max_abs_diff(d.dx, first_dx) == 0.0);  // exactly zero variance
    }
}

TEST_CASE("a saba step mutates exactly one slot per table") {
  auto prob = make_quadratic(11, {8, 6, 4, 3}, 1.0);
  RngStream rng(11, 0);
  const JointState s0 = random_state(rng, prob.dims());
  SabaMemory memory(s0, prob, {2, 2});  // n_b = 4, m_b = 3
  const SabaMemory before = memory;

  const JointState s1 = random_state(rng, prob.dims());
  const IndexDraw draw{2, 1};
  (void)saba_directions(s1, draw, memory, prob);

  auto changed_slots = [](const std::vector<Vec>& was, const std::vector<Vec>& now) {
    std::vector<std::size_t> changed;
    for (std::size_t k = 0; k < was.size(); ++k)
      if (max_abs_diff(was[k], now[k]) != 0.0) changed.push_back(k);
    return changed;
  };
  CHECK(changed_slots(before.table_g_grad(), memory.table_g_grad()) ==
        std::vector<std::size_t>{2});
  CHECK(changed_slots(before.table_g_hvp(), memory.table_g_hvp()) ==
        std::vector<std::size_t>{2});
  CHECK(changed_slots(before.table_g_cross(), memory.table_g_cross()) ==
        std::vector<std::size_t>{2});
  CHECK(changed_slots(before.table_f_in(), memory.table_f_in()) ==
        std::vector<std::size_t>{1});
  CHECK(changed_slots(before.table_f_out(), memory.table_f_out()) ==
        std::vector<std::size_t>{1});
}

TEST_CASE("rolling averages track table means through random updates") {
  auto prob = make_quadratic(12, {16, 12, 5, 4}, 1.0);
  RngStream rng(12, 0);
  JointState s = random_state(rng, prob.dims());
  SabaMemory memory(s, prob, {4, 4});
  for (int step = 0; step < 2000; ++step) {
    const IndexDraw draw = draw_indices(rng, 4, 3);
    (void)saba_directions(s, draw, memory, prob);
    if (step % 500 == 0) s = random_state(rng, prob.dims());
  }
  const double drift = memory.recompute_averages(/*overwrite=*/false);
  CHECK(drift < 1e-9);
  (void)memory.recompute_averages(/*overwrite=*/true);
  CHECK(memory.recompute_averages() == 0.0);
}

TEST_CASE("direction norms obey the quadratic smoothness bound") {
  auto prob = make_quadratic(13, {8, 8, 5, 4}, 1.0);
  const auto dm = prob.dims();

  // L_z = ||mean A||, assembled through Hessian-vector products
  Matrix mean_a(dm.p, dm.p);
  JointState probe{Vec(dm.p, 0.0), Vec(dm.p, 0.0), Vec(dm.d, 0.0)};
  for (std::size_t k = 0; k < dm.p; ++k) {
    Vec ek(dm.p, 0.0);
    ek[k] = 1.0;
    probe.v = ek;
    const Vec col = full_mean(prob, SampledOp::hvp_g, probe);
    for (std::size_t r = 0; r < dm.p; ++r) mean_a(r, k) = col[r];
  }
  const double lz = largest_eig_spd(mean_a) + 1e-9;

  RngStream rng(13, 0);
  for (int rep = 0; rep < 100; ++rep) {
    const JointState s = random_state(rng, dm);
    const DirectionTriple d = full_directions(s, prob);
    const double dist = norm(sub(s.z, prob.z_star(s.x)));
    CHECK(sq_norm(d.dz) <= lz * lz * dist * dist * (1.0 + 1e-9) + 1e-12);
  }
}
