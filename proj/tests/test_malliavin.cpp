#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <levyheat/malliavin.hpp>
#include <levyheat/rng.hpp>

#include <cmath>
#include <vector>

using namespace levyheat;
using Eigen::VectorXd;

TEST_CASE("insertion step mirrors the window semantics") {
  CHECK(insertion_step(0.1, 0.25, 4) == 1);
  CHECK(insertion_step(0.25, 0.25, 4) == 1);  // boundary joins the left cell
  CHECK(insertion_step(0.26, 0.25, 4) == 2);
  CHECK(insertion_step(1.0, 0.25, 4) == 4);
  CHECK_THROWS_AS(insertion_step(1.2, 0.25, 4), std::invalid_argument);
  CHECK_THROWS_AS(insertion_step(-0.1, 0.25, 4), std::invalid_argument);
}

TEST_CASE("zero drift: both derivative routes equal the closed form") {
  const int K = 8, M = 16;
  SchemeDef def{K, 1.0 / M, 1.0, Drift::zero(), InitialData(1.0)};
  LevyModel model(8.0, K, 1.1, 0.5);
  RngStream rng(7701, 0);
  JumpPath path = sample_jump_path(model, rng, 1.0);
  SpectralSolver solver(K);

  JumpAtom point{0.4, 2, 1.7};
  StateDerivativePair routes = solution_derivative_routes(solver, def, path, point);

  int m0 = insertion_step(point.time, def.dt, M); // cell 7
  double r = 1.0 / (1.0 + def.dt * solver.basis().lambda(1));
  VectorXd expect = VectorXd::Zero(K);
  expect[1] = point.amplitude * std::pow(r, M - m0 + 1);
  CHECK((routes.rerun - expect).norm() < 1e-13 * expect.norm());
  CHECK((routes.recursion - expect).norm() < 1e-13 * expect.norm());
}

TEST_CASE("nonlinear drift: rerun and recursion agree to roundoff") {
  const int K = 16, M = 32;
  SchemeDef def{K, 1.0 / M, 1.0, Drift::sine(2.0), InitialData(1.0)};
  LevyModel model(20.0, K, 1.1, 0.5);
  RngStream rng(7702, 0);
  JumpPath path = sample_jump_path(model, rng, 1.0);
  SpectralSolver solver(K);

  // Insertions with lambda_mode * (T - s) of order one, so the derivative
  // is well conditioned against the state magnitude.
  std::vector<JumpAtom> points = {
      {0.5, 1, model.sigma(1)},
      {0.9, 1, model.sigma(1)},
      {0.9, 2, -model.sigma(2)},
      {0.95, 3, model.sigma(3)},
  };
  for (const auto& pt : points) {
    StateDerivativePair routes = solution_derivative_routes(solver, def, path, pt);
    double scale = routes.rerun.norm();
    REQUIRE(scale > 0.0);
    CHECK((routes.rerun - routes.recursion).norm() < 1e-9 * scale);
  }

  // The derivative genuinely feels the nonlinearity: with the drift turned
  // off the same insertion gives a visibly different derivative.
  SchemeDef lin = def;
  lin.drift = Drift::zero();
  auto with_f = solution_derivative_routes(solver, def, path, points[0]);
  auto without_f = solution_derivative_routes(solver, lin, path, points[0]);
  CHECK((with_f.rerun - without_f.rerun).norm() > 1e-6 * with_f.rerun.norm());
}

TEST_CASE("derivative engine: memoized reruns equal full independent reruns") {
  const int K = 6, M = 8;
  SchemeDef def{K, 1.0 / M, 1.0, Drift::sine(1.5), InitialData(0.7)};
  LevyModel model(10.0, K, 1.2, 0.5);
  RngStream rng(7703, 0);
  JumpPath path = sample_jump_path(model, rng, 1.0);
  SpectralSolver solver(K);

  WeakFunctional w = WeakFunctional::product_two_time(0.5, flat_probe(K), 1.0, flat_probe(K));
  DerivativeEngine engine(solver, def, model);
  engine.load_path(path, w.requests);
  double F = w.evaluate(engine.base_values());

  for (int cell : {1, 4, 8}) {
    for (int sgn : {0, 1}) {
      double amp = (sgn == 0 ? 1.0 : -1.0) * model.sigma(3);
      const auto& fast = engine.nu_perturbed(cell, 3, sgn);

      // Full independent rerun through the public solver.
      JumpPath pert = path;
      insert_atom(pert, {(cell - 0.5) * def.dt, 3, amp});
      SpectralProbeObserver probes(w.requests, def.dt, M);
      solver.run_scheme(def.dt, def.horizon, def.drift, def.x0, pert,
                        probes.observer());
      double slow = w.evaluate(probes.values());
      double fast_val = w.evaluate(fast);
      CHECK(fast_val == doctest::Approx(slow).epsilon(1e-10));
      // Memoized value is stable across calls.
      CHECK(w.evaluate(engine.nu_perturbed(cell, 3, sgn)) == fast_val);
    }
  }
  CHECK(F == doctest::Approx(w.evaluate(engine.base_values())).epsilon(1e-15));
}

TEST_CASE("duality: linear functional with zero drift has a closed form") {
  const int K = 4, M = 16;
  const double T = 1.0, k = T / M;
  SchemeDef def{K, k, T, Drift::zero(), InitialData(1.0)};
  LevyModel model(5.0, K, 1.1, 0.5);
  SpectralSolver solver(K);

  const double v = 0.8;
  DualityPair pair;
  pair.name = "closed-form";
  pair.functional = WeakFunctional::linear_terminal(T, mode_probe(K, 1));
  pair.blocks = {{0.0, T, {1}, v, true, false}};

  RngStream rng(7704, 0);
  auto stats = duality_check(model, solver, def, {pair}, 400, rng);
  REQUIRE(stats.size() == 1);

  double r = 1.0 / (1.0 + k * solver.basis().lambda(0));
  double geom = r * (1.0 - std::pow(r, M)) / (1.0 - r);
  double closed = model.rate() * model.mode_prob(1) * v * model.sigma(1) * k * geom;

  // The derivative side is deterministic here and equals the closed form.
  CHECK(stats[0].rhs_mean == doctest::Approx(closed).epsilon(1e-12));
  // The identity holds within Monte Carlo resolution.
  CHECK(std::abs(stats[0].diff_mean) < 5.0 * stats[0].diff_se);
  CHECK(std::abs(stats[0].lhs_mean - closed) < 5.0 * stats[0].diff_se);
}

TEST_CASE("duality: nonlinear drift, several integrand shapes") {
  const int K = 4, M = 16;
  const double T = 1.0;
  SchemeDef def{K, T / M, T, Drift::sine(1.0), InitialData(1.0)};
  LevyModel model(5.0, K, 1.1, 0.5);
  SpectralSolver solver(K);

  std::vector<DualityPair> pairs;
  {
    DualityPair p;
    p.name = "linear-flat";
    p.functional = WeakFunctional::linear_terminal(T, flat_probe(K));
    p.blocks = {{0.0, 0.5, {}, 2.0, false, false}};
    pairs.push_back(p);
  }
  {
    DualityPair p;
    p.name = "two-time-product";
    p.functional = WeakFunctional::product_two_time(0.5, flat_probe(K), T, flat_probe(K));
    p.blocks = {{0.25, 0.75, {1, 2}, 1.0, false, false}};
    pairs.push_back(p);
  }
  {
    DualityPair p;
    p.name = "smooth-signed";
    p.functional = WeakFunctional::smooth_terminal(T, flat_probe(K));
    p.blocks = {{0.0, T, {1}, 1.5, true, false}};
    pairs.push_back(p);
  }
  {
    DualityPair p;
    p.name = "count-weighted";
    p.functional = WeakFunctional::linear_terminal(T, mode_probe(K, 2));
    p.blocks = {{0.5, T, {}, 1.0, false, true}};
    pairs.push_back(p);
  }

  RngStream rng(7705, 0);
  auto stats = duality_check(model, solver, def, pairs, 3000, rng);
  for (const auto& s : stats) {
    INFO(s.name);
    CHECK(std::abs(s.diff_mean) < 5.0 * s.diff_se + 1e-12);
    CHECK(s.diff_se > 0.0);
  }

  // Block validation: off-grid support and foreign modes are rejected.
  DualityPair bad;
  bad.name = "bad";
  bad.functional = WeakFunctional::linear_terminal(T, flat_probe(K));
  bad.blocks = {{0.1, 0.3, {}, 1.0, false, false}};
  RngStream rng2(7706, 0);
  CHECK_THROWS_AS(duality_check(model, solver, def, {bad}, 10, rng2),
                  std::invalid_argument);
  bad.blocks = {{0.0, 0.5, {9}, 1.0, false, false}};
  CHECK_THROWS_AS(duality_check(model, solver, def, {bad}, 10, rng2),
                  std::invalid_argument);
}

TEST_CASE("chain rule gap sits at roundoff") {
  const int K = 4, M = 16;
  SchemeDef def{K, 1.0 / M, 1.0, Drift::sine(1.0), InitialData(1.0)};
  LevyModel model(8.0, K, 1.1, 0.5);
  SpectralSolver solver(K);
  RngStream rng(7707, 0);
  JumpPath path = sample_jump_path(model, rng, 1.0);

  WeakFunctional w = WeakFunctional::linear_terminal(1.0, flat_probe(K));
  double gap = chain_rule_max_gap(model, solver, def, w,
                                  ScalarFunction::smooth_square(), path);
  CHECK(gap < 1e-13);
}

TEST_CASE("insertions after the read-out time change nothing") {
  const int K = 6, M = 16;
  SchemeDef def{K, 1.0 / M, 1.0, Drift::sine(1.5), InitialData(1.0)};
  LevyModel model(10.0, K, 1.1, 0.5);
  SpectralSolver solver(K);
  RngStream rng(7708, 0);
  JumpPath path = sample_jump_path(model, rng, 1.0);

  // Probe reads at t = 0.5; insertions in cells 9..16 are invisible.
  WeakFunctional w = WeakFunctional::linear_terminal(0.5, flat_probe(K));
  CHECK(adaptedness_max_abs(model, solver, def, w, path) == 0.0);

  // Independent confirmation via two full public-solver runs: the states
  // before the insertion cell are bit-identical.
  JumpPath pert = path;
  insert_atom(pert, {0.7, 1, model.sigma(1)});
  TrajectoryRecorder a, b;
  solver.run_scheme(def.dt, def.horizon, def.drift, def.x0, path, a.observer());
  solver.run_scheme(def.dt, def.horizon, def.drift, def.x0, pert, b.observer());
  int m0 = insertion_step(0.7, def.dt, M);
  for (int m = 0; m < m0; ++m)
    CHECK((a.states[m] - b.states[m]).norm() == 0.0);
  CHECK((a.states[M] - b.states[M]).norm() > 0.0);
}

TEST_CASE("regularity profile: closed form without drift, bounded with") {
  const int K = 8, M = 16;
  SchemeDef def{K, 1.0 / M, 1.0, Drift::zero(), InitialData(1.0)};
  LevyModel model(8.0, K, 1.1, 0.5);
  SpectralSolver solver(K);
  RngStream rng(7709, 0);
  JumpPath path = sample_jump_path(model, rng, 1.0);

  ProfileReport rep = regularity_profile(model, solver, def, path, {1, 2, 4});
  REQUIRE(rep.points.size() == std::size_t(M * 3));

  double expo = (1.0 - model.regularity()) / 2.0; // = 1/4
  for (const auto& pt : rep.points) {
    double lam = model.lambda_of_mode(pt.mode);
    double r = 1.0 / (1.0 + def.dt * lam);
    double s = (pt.cell - 0.5) * def.dt;
    double predicted = model.sigma(pt.mode) * std::pow(r, M - pt.cell + 1) *
                       std::pow(1.0 - s, expo);
    CHECK(pt.normalized == doctest::Approx(predicted).epsilon(1e-10));
  }

  // The normalized profile stays of order one: the scalar envelope for
  // y^(1/4) e^(-y) style decay keeps it below 1 here, drift or not.
  CHECK(rep.max_normalized < 1.0);
  SchemeDef withf = def;
  withf.drift = Drift::sine(1.0);
  ProfileReport rep2 = regularity_profile(model, solver, withf, path, {1, 2, 4});
  CHECK(rep2.max_normalized < 1.2);
}

TEST_CASE("path seminorm: exponent validation and exact quadrature") {
  const int K = 4, M = 16;
  const double T = 1.0;
  SchemeDef def{K, T / M, T, Drift::zero(), InitialData(1.0)};
  LevyModel model(5.0, K, 1.1, 0.5);
  SpectralSolver solver(K);

  CHECK_THROWS_AS(validate_seminorm_exponents(0.5, 2.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(validate_seminorm_exponents(0.5, 2.0, 4.0), std::invalid_argument);
  CHECK_THROWS_AS(validate_seminorm_exponents(0.5, 0.5, 2.0), std::invalid_argument);
  CHECK_NOTHROW(validate_seminorm_exponents(0.5, 2.0, 3.9));
  CHECK_NOTHROW(validate_seminorm_exponents(1.0, 2.0, 50.0));

  WeakFunctional w = WeakFunctional::linear_terminal(T, flat_probe(K));
  const double p = 2.0, q = 3.0;
  RngStream rng(7710, 0);
  SeminormResult res = seminorm_1pq(model, solver, def, w, p, q, 3, rng);

  // Linear functional, zero drift: DF is path independent, so the result
  // has a closed form assembled here with independent arithmetic.
  double psi = 1.0 / std::sqrt(double(K));
  double acc = 0.0;
  for (int m = 1; m <= M; ++m) {
    double inner = 0.0;
    for (int j = 1; j <= K; ++j) {
      double r = 1.0 / (1.0 + def.dt * model.lambda_of_mode(j));
      double df = model.sigma(j) * psi * std::pow(r, M - m + 1);
      inner += model.rate() * model.mode_prob(j) * std::pow(df, p);
    }
    acc += def.dt * std::pow(inner, q / p);
  }
  double closed = std::pow(acc, 1.0 / q);
  CHECK(res.value == doctest::Approx(closed).epsilon(1e-12));
  // 64 midpoint panels nest in 16 cells: both quadratures are exact.
  CHECK(res.via_midpoint == doctest::Approx(res.value).epsilon(1e-13));
}

TEST_CASE("reference-grid derivative residual halves with the substep") {
  const int K = 8;
  const double T = 1.0;
  LevyModel model(8.0, K, 1.1, 0.5);
  SpectralSolver solver(K);
  RngStream rng(7711, 0);
  JumpPath path = sample_jump_path(model, rng, T);

  Drift f = Drift::sine(2.0);
  InitialData x0(1.0);
  JumpAtom point{0.25, 2, model.sigma(2)};

  double r64 = reference_derivative_residual(solver, 64, T, f, x0, path, point);
  double r128 = reference_derivative_residual(solver, 128, T, f, x0, path, point);
  double r256 = reference_derivative_residual(solver, 256, T, f, x0, path, point);
  CHECK(r64 > 0.0);
  CHECK(r64 / r128 > 1.5);
  CHECK(r64 / r128 < 2.7);
  CHECK(r128 / r256 > 1.5);
  CHECK(r128 / r256 < 2.7);

  CHECK_THROWS_AS(
      reference_derivative_residual(solver, 64, T, f, x0, path, {0.013, 1, 1.0}),
      std::invalid_argument);
}
