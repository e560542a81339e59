#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <levyheat/functionals.hpp>
#include <levyheat/rng.hpp>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <sstream>

using namespace levyheat;
using Eigen::VectorXd;

TEST_CASE("probe constructors and truncation pairing") {
  VectorXd flat = flat_probe(16);
  CHECK(flat.norm() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(flat[7] == doctest::Approx(0.25).epsilon(1e-14));

  VectorXd m3 = mode_probe(8, 3);
  CHECK(m3.sum() == 1.0);
  CHECK(m3[2] == 1.0);
  CHECK_THROWS_AS(mode_probe(8, 9), std::invalid_argument);

  // Pairing across resolutions keeps the common leading modes.
  VectorXd state(4);
  state << 1.0, 2.0, 3.0, 4.0;
  VectorXd psi(6);
  psi << 1.0, 1.0, 0.0, 0.0, 5.0, 5.0;
  CHECK(probe_value(psi, state) == 3.0);
  CHECK(probe_value(psi.head(2), state) == 3.0);

  // Spatial-mean probe: coefficients of the constant function 1 in the sine
  // basis.  Odd modes only, leading coefficient 2*sqrt(2)/pi, and pairing with
  // the parabola xi(1-xi) (coefficients 4*sqrt(2)/(j pi)^3, odd j) recovers
  // the exact integral of the parabola, 1/6.
  VectorXd cp = constant_probe(64);
  CHECK(cp[0] == doctest::Approx(2.0 * std::sqrt(2.0) / std::numbers::pi).epsilon(1e-14));
  CHECK(cp[1] == 0.0);
  CHECK(cp[63] == 0.0);
  CHECK(cp.squaredNorm() < 1.0);     // truncated expansion of a unit-norm function
  CHECK(cp.squaredNorm() > 0.99);
  VectorXd parabola = VectorXd::Zero(64);
  for (int j = 1; j <= 64; j += 2)
    parabola[j - 1] = 4.0 * std::sqrt(2.0) / std::pow(j * std::numbers::pi, 3);
  CHECK(probe_value(cp, parabola) == doctest::Approx(1.0 / 6.0).epsilon(1e-7));
  CHECK_THROWS_AS(constant_probe(0), std::invalid_argument);
}

TEST_CASE("scalar functions: values and exact derivatives") {
  auto id = ScalarFunction::identity();
  auto sq = ScalarFunction::square();
  auto sm = ScalarFunction::smooth_square();

  CHECK(id(3.5) == 3.5);
  CHECK(sq(-2.0) == 4.0);
  CHECK(sm(0.0) == 0.0);
  CHECK(sm(1.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sm(100.0) < 1.0);

  // Central differences confirm each closed-form derivative.
  const double h = 1e-6;
  for (double s : {-1.7, -0.3, 0.0, 0.9, 2.4}) {
    for (auto* f : {&id, &sq, &sm}) {
      double fd = ((*f)(s + h) - (*f)(s - h)) / (2.0 * h);
      CHECK((*f).derivative(s) == doctest::Approx(fd).epsilon(1e-7));
    }
  }
}

TEST_CASE("spectral probe observer matches a manual replay") {
  const int K = 8, M = 16;
  const double T = 1.0, k = T / M;
  LevyModel model(10.0, K, 1.1, 0.5);
  RngStream rng(6601, 0);
  JumpPath path = sample_jump_path(model, rng, T);

  std::vector<ProbeRequest> reqs = {{0.5, flat_probe(K)}, {1.0, mode_probe(K, 1)}};
  SpectralSolver solver(K);
  SpectralProbeObserver probes(reqs, k, M);
  TrajectoryRecorder rec;
  auto obs_p = probes.observer();
  auto obs_r = rec.observer();
  StepObserver both = [&](int m, double t, const VectorXd& x) {
    obs_p(m, t, x);
    obs_r(m, t, x);
  };
  solver.run_scheme(k, T, Drift::sine(1.0), InitialData(1.0), path, both);

  CHECK(probes.values()[0] == probe_value(reqs[0].psi, rec.states[8]));
  CHECK(probes.values()[1] == rec.states[16][0]);
}

TEST_CASE("mesh probe observer agrees with the exact mode pairing") {
  const int N = 24, M = 32;
  const double T = 1.0, k = T / M;
  LevyModel model(10.0, 6, 1.1, 0.5);
  RngStream rng(6602, 0);
  JumpPath path = sample_jump_path(model, rng, T);

  FemSolver solver(N, 6);
  std::vector<ProbeRequest> reqs = {{1.0, mode_probe(6, 2)}};
  FemProbeObserver probes(solver.mesh(), reqs, k, M);
  SchemeResult res = solver.run_scheme(k, T, Drift::sine(1.0), InitialData(1.0),
                                       path, probes.observer());
  CHECK(probes.values()[0] ==
        doctest::Approx(inner_with_mode(solver.mesh(), res.final_state, 2))
            .epsilon(1e-14));
}

TEST_CASE("weak observables assemble probe values correctly") {
  auto lin = WeakFunctional::linear_terminal(1.0, mode_probe(8, 1));
  CHECK(lin.requests.size() == 1);
  CHECK(lin.evaluate({2.5}) == 2.5);

  auto prod = WeakFunctional::product_two_time(0.5, flat_probe(8), 1.0, flat_probe(8));
  CHECK(prod.requests[0].time == 0.5);
  CHECK(prod.evaluate({3.0, -2.0}) == -6.0);
  CHECK_THROWS_AS(WeakFunctional::product_two_time(1.0, flat_probe(4), 0.5, flat_probe(4)),
                  std::invalid_argument);

  auto sm = WeakFunctional::smooth_terminal(1.0, flat_probe(8));
  CHECK(sm.evaluate({1.0}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(lin.evaluate({1.0, 2.0}), std::invalid_argument);

  CovarianceSpec cov{0.5, 1.0, flat_probe(8), flat_probe(8)};
  CHECK(cov.requests().size() == 2);
}

TEST_CASE("midpoint rule: exact on coarser cells, second order on smooth") {
  // Constant on 16 dyadic cells; 64 panels nest inside them.
  const double T = 2.0;
  std::vector<double> cells(16);
  RngStream rng(6603, 0);
  for (auto& c : cells) c = 2.0 * rng.next_double() - 1.0;
  auto step_fn = [&](double t) {
    int i = std::min(int(t / (T / 16)), 15);
    return cells[i];
  };
  double exact = piecewise_constant_integral(cells, T);
  CHECK(midpoint_integrate(step_fn, T, 64) == doctest::Approx(exact).epsilon(1e-14));

  // Smooth integrand: error drops by ~4 per panel doubling.
  auto smooth = [](double t) { return std::sin(3.0 * t); };
  double truth = (1.0 - std::cos(6.0)) / 3.0;
  double e64 = std::abs(midpoint_integrate(smooth, 2.0, 64) - truth);
  double e128 = std::abs(midpoint_integrate(smooth, 2.0, 128) - truth);
  CHECK(e64 / e128 == doctest::Approx(4.0).epsilon(0.05));

  CHECK_THROWS_AS(midpoint_integrate(smooth, -1.0, 64), std::invalid_argument);
  CHECK_THROWS_AS(piecewise_constant_integral({}, 1.0), std::invalid_argument);
}

namespace {
TrajectoryRecord random_record(int dim, int steps, double dt, std::uint64_t seed) {
  RngStream rng(seed, 0);
  TrajectoryRecord rec;
  rec.dt = dt;
  for (int m = 0; m <= steps; ++m) {
    VectorXd x(dim);
    for (int j = 0; j < dim; ++j) x[j] = 2.0 * rng.next_double() - 1.0;
    rec.states.push_back(std::move(x));
  }
  return rec;
}
} // namespace

TEST_CASE("record integration: read-out, exact step sums, validation") {
  TrajectoryRecord rec = random_record(3, 2, 0.5, 6610);

  // Dirac at the endpoint picks the final state; the Lebesgue part sums the
  // two cell values exactly.
  VectorXd atT = integrate_record(rec, TimeMeasure::dirac(1.0));
  CHECK((atT - rec.states[2]).norm() == 0.0);
  VectorXd leb = integrate_record(rec, TimeMeasure::lebesgue(1.0));
  VectorXd expect = 0.5 * (rec.states[0] + rec.states[1]);
  CHECK((leb - expect).norm() < 1e-15);

  // Grid-time read-out uses the right-closed convention: value X^1 at t_1.
  CHECK((integrate_record(rec, TimeMeasure::dirac(0.5)) - rec.states[1]).norm() == 0.0);
  CHECK((integrate_record(rec, TimeMeasure::dirac(0.49)) - rec.states[0]).norm() == 0.0);

  TimeMeasure bad;
  bad.atoms = {{1.5, 1.0}};
  CHECK_THROWS_AS(integrate_record(rec, bad), std::invalid_argument);
  bad.atoms = {{0.5, -1.0}};
  CHECK_THROWS_AS(integrate_record(rec, bad), std::invalid_argument);

  TimeMeasure mixed;
  mixed.atoms = {{0.25, 2.0}, {1.0, 0.5}};
  mixed.lebesgue_density = 3.0;
  CHECK(mixed.total_mass(1.0) == doctest::Approx(5.5).epsilon(1e-15));
}

TEST_CASE("record integration matches a fine Riemann oracle") {
  TrajectoryRecord rec = random_record(4, 16, 1.0 / 16, 6611);
  TimeMeasure mu;
  mu.atoms = {{0.2, 1.5}, {0.803, 0.25}};
  mu.lebesgue_density = 0.7;
  VectorXd got = integrate_record(rec, mu);

  // Riemann sum of the step function for the Lebesgue part.
  const int N = 1000000;
  double dt = 1.0 / N;
  VectorXd acc = VectorXd::Zero(4);
  for (int i = 0; i < N; ++i) acc += rec.eval((i + 0.5) * dt);
  VectorXd oracle = 0.7 * dt * acc + 1.5 * rec.eval(0.2) + 0.25 * rec.eval(0.803);
  CHECK((got - oracle).norm() < 1e-9 * oracle.norm());
}

TEST_CASE("path functionals: built-ins, algebraic identities, gradients") {
  TrajectoryRecord rec = random_record(6, 8, 0.125, 6612);

  auto lin = PathFunctional::linear(TimeMeasure::dirac(1.0), mode_probe(6, 1));
  CHECK(lin.evaluate(rec) == rec.states[8][0]);

  // Product at equal times and probes squares the linear value.
  auto sq = PathFunctional::bilinear_product(TimeMeasure::dirac(0.5), flat_probe(6),
                                             TimeMeasure::dirac(0.5), flat_probe(6));
  auto l2 = PathFunctional::linear(TimeMeasure::dirac(0.5), flat_probe(6));
  double v = l2.evaluate(rec);
  CHECK(sq.evaluate(rec) == doctest::Approx(v * v).epsilon(1e-14));

  // Zero second probe kills the product.
  auto triple = covariance_triple(0.5, 1.0, flat_probe(6), VectorXd::Zero(6));
  CHECK(triple[0].evaluate(rec) == 0.0);
  CHECK(triple[2].evaluate(rec) == 0.0);
  CHECK(triple[1].evaluate(rec) == doctest::Approx(v).epsilon(1e-14));
  CHECK_THROWS_AS(covariance_triple(0.0, 1.0, flat_probe(6), flat_probe(6)),
                  std::invalid_argument);

  // Smoothed quadratic: value formula and exact gradient against central
  // differences with an O(step^2) error trend.
  std::vector<FunctionalField> ff = {{TimeMeasure::dirac(0.25), flat_probe(6)},
                                     {TimeMeasure::lebesgue(1.0), mode_probe(6, 2)}};
  auto smq = PathFunctional::smoothed_quadratic(ff, 0.3);
  std::vector<double> z = {0.7, -1.3};
  double S = z[0] * z[0] + z[1] * z[1];
  CHECK(smq.phi(z) == doctest::Approx(S / (1.0 + 0.3 * std::sqrt(S))).epsilon(1e-15));
  auto grad = smq.phi_gradient(z);
  for (int i = 0; i < 2; ++i) {
    double prev_err = -1.0;
    for (double step : {1e-2, 5e-3, 2.5e-3}) {
      auto zp = z, zm = z;
      zp[i] += step;
      zm[i] -= step;
      double fd = (smq.phi(zp) - smq.phi(zm)) / (2.0 * step);
      double err = std::abs(fd - grad[i]);
      if (prev_err >= 0.0) CHECK(err < 0.3 * prev_err); // ~ 1/4 per halving
      prev_err = err;
    }
  }
  CHECK_THROWS_AS(PathFunctional::smoothed_quadratic({}, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(PathFunctional::smoothed_quadratic(ff, -1.0), std::invalid_argument);
}

TEST_CASE("streaming accumulator reproduces record evaluation") {
  const int K = 6, M = 16;
  const double T = 1.0, dt = T / M;
  LevyModel model(10.0, K, 1.1, 0.5);
  RngStream rng(6613, 0);
  JumpPath path = sample_jump_path(model, rng, T);
  SpectralSolver solver(K);

  TimeMeasure mu1;
  mu1.atoms = {{0.25, 1.0}, {1.0, 2.0}};
  mu1.lebesgue_density = 0.5;
  auto f = PathFunctional::bilinear_product(mu1, flat_probe(K),
                                            TimeMeasure::dirac(0.75), mode_probe(K, 2));

  TrajectoryRecorder recorder;
  MeasureProbeAccumulator acc(
      f, {padded_probe(flat_probe(K), K), padded_probe(mode_probe(K, 2), K)}, dt, M);
  auto acc_obs = acc.observer();
  auto rec_obs = recorder.observer();
  solver.run_scheme(dt, T, Drift::sine(1.0), InitialData(1.0), path,
                    [&](int m, double t, const VectorXd& x) {
                      acc_obs(m, t, x);
                      rec_obs(m, t, x);
                    });

  TrajectoryRecord rec{dt, recorder.states};
  double direct = f.evaluate(rec);
  CHECK(f.phi(acc.scalars()) == doctest::Approx(direct).epsilon(1e-12));

  // Equivalence with the probe-request observable on the product case.
  WeakFunctional w = WeakFunctional::product_two_time(0.75, mode_probe(K, 2), 1.0,
                                                      flat_probe(K));
  SpectralProbeObserver probes(w.requests, dt, M);
  solver.run_scheme(dt, T, Drift::sine(1.0), InitialData(1.0), path,
                    probes.observer());
  auto pf = PathFunctional::bilinear_product(TimeMeasure::dirac(0.75),
                                             mode_probe(K, 2),
                                             TimeMeasure::dirac(1.0), flat_probe(K));
  CHECK(pf.evaluate(rec) == doctest::Approx(w.evaluate(probes.values())).epsilon(1e-14));
}

TEST_CASE("trajectory text round-trip is bit exact") {
  TrajectoryRecord rec = random_record(5, 7, 1.0 / 7, 6614);
  std::ostringstream os;
  write_trajectory(os, rec);
  std::istringstream is(os.str());
  TrajectoryRecord back = read_trajectory(is);

  REQUIRE(back.states.size() == rec.states.size());
  CHECK(back.dt == rec.dt);
  for (std::size_t m = 0; m < rec.states.size(); ++m)
    for (int j = 0; j < rec.states[m].size(); ++j)
      CHECK(back.states[m][j] == rec.states[m][j]);

  // Functional evaluation through the file is bitwise identical.
  TimeMeasure mu;
  mu.atoms = {{0.3, 1.0}};
  mu.lebesgue_density = 2.0;
  auto f = PathFunctional::linear(mu, flat_probe(5));
  CHECK(f.evaluate(back) == f.evaluate(rec));

  std::istringstream junk("no header\n");
  CHECK_THROWS_AS(read_trajectory(junk), std::invalid_argument);
}
