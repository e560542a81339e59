#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <levyheat/rng.hpp>
#include <levyheat/spectral.hpp>

#include <cmath>
#include <numbers>
#include <vector>

using namespace levyheat;
using Eigen::VectorXd;

namespace {

// Log-spaced time grid dense enough to land close to every per-mode maximum.
std::vector<double> log_grid(double lo, double hi, int n) {
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i)
    g[i] = lo * std::pow(hi / lo, double(i) / (n - 1));
  return g;
}

// Independent extended-precision oracle for the weighted coefficient sum.
double hdot_norm_oracle(const SpectralBasis& b, const VectorXd& c, double rho) {
  long double sum = 0.0L;
  for (int j = b.size() - 1; j >= 0; --j) { // reversed accumulation order
    long double w = std::pow((long double)b.lambda(j), (long double)rho);
    sum += w * (long double)c[j] * (long double)c[j];
  }
  return (double)std::sqrt(sum);
}

} // namespace

TEST_CASE("laplacian eigenvalues and basis validation") {
  auto b = SpectralBasis::dirichlet_laplacian(8);
  CHECK(b.size() == 8);
  CHECK(b.lambda(0) == doctest::Approx(std::numbers::pi * std::numbers::pi).epsilon(1e-15));
  CHECK(b.lambda(3) == doctest::Approx(16.0 * std::numbers::pi * std::numbers::pi).epsilon(1e-15));
  CHECK(b.is_laplacian());

  CHECK_THROWS_AS(SpectralBasis::dirichlet_laplacian(0), std::invalid_argument);
  CHECK_THROWS_AS(SpectralBasis::from_eigenvalues({}), std::invalid_argument);
  CHECK_THROWS_AS(SpectralBasis::from_eigenvalues({1.0, -2.0}), std::invalid_argument);
  CHECK_THROWS_AS(SpectralBasis::from_eigenvalues({2.0, 1.0}), std::invalid_argument);

  auto custom = SpectralBasis::from_eigenvalues({1.0, 4.0, 9.0});
  CHECK(!custom.is_laplacian());
  CHECK(custom.lambda(2) == 9.0);
}

TEST_CASE("fractional norm: single modes, oracle sum, monotonicity") {
  auto b = SpectralBasis::dirichlet_laplacian(16);

  // A single eigenmode has |e_j|_rho = lambda_j^(rho/2).
  for (int j : {0, 4, 15}) {
    VectorXd c = VectorXd::Zero(16);
    c[j] = 1.0;
    for (double rho : {-2.0, -0.5, 0.0, 1.0, 2.0, 3.0}) {
      CHECK(hdot_norm(b, c, rho) ==
            doctest::Approx(std::pow(b.lambda(j), rho / 2.0)).epsilon(1e-13));
    }
  }
  VectorXd e0 = VectorXd::Zero(16);
  e0[0] = 1.0;
  CHECK(hdot_norm(b, e0, 2.0) == doctest::Approx(9.869604401089358).epsilon(1e-12));

  RngStream rng(7771, 0);
  VectorXd c(16);
  for (int j = 0; j < 16; ++j) c[j] = 2.0 * rng.next_double() - 1.0;
  for (double rho : {-1.0, 0.0, 0.5, 1.0, 2.0}) {
    CHECK(hdot_norm(b, c, rho) ==
          doctest::Approx(hdot_norm_oracle(b, c, rho)).epsilon(1e-13));
  }

  // All eigenvalues exceed 1, so the norm grows with rho.
  CHECK(hdot_norm(b, c, 0.0) < hdot_norm(b, c, 0.5));
  CHECK(hdot_norm(b, c, 0.5) < hdot_norm(b, c, 1.5));
  CHECK(hdot_norm(b, c, -1.0) < hdot_norm(b, c, 0.0));

  VectorXd bad(15);
  CHECK_THROWS_AS(hdot_norm(b, bad, 1.0), std::invalid_argument);
}

TEST_CASE("semigroup decay, composition, and domain guard") {
  auto b = SpectralBasis::dirichlet_laplacian(6);
  VectorXd c = VectorXd::Zero(6);
  c[1] = 1.0; // second mode, lambda = 4 pi^2

  VectorXd out = apply_semigroup(b, c, 0.1);
  CHECK(out[1] == doctest::Approx(0.01929630291101678).epsilon(1e-14));
  for (int j : {0, 2, 3, 4, 5}) CHECK(out[j] == 0.0);

  RngStream rng(7772, 0);
  VectorXd v(6);
  for (int j = 0; j < 6; ++j) v[j] = 2.0 * rng.next_double() - 1.0;

  VectorXd two_step = apply_semigroup(b, apply_semigroup(b, v, 0.02), 0.03);
  VectorXd one_step = apply_semigroup(b, v, 0.05);
  CHECK((two_step - one_step).norm() < 1e-15 * one_step.norm() + 1e-300);

  VectorXd ident = apply_semigroup(b, v, 0.0);
  CHECK((ident - v).norm() == 0.0);

  CHECK_THROWS_AS(apply_semigroup(b, v, -1e-9), std::domain_error);
}

TEST_CASE("fractional powers compose and realize the norm") {
  auto b = SpectralBasis::dirichlet_laplacian(10);
  RngStream rng(7773, 0);
  VectorXd v(10);
  for (int j = 0; j < 10; ++j) v[j] = 2.0 * rng.next_double() - 1.0;

  VectorXd half = apply_fractional_power(b, v, 0.5);
  for (int j = 0; j < 10; ++j)
    CHECK(half[j] == doctest::Approx(std::sqrt(b.lambda(j)) * v[j]).epsilon(1e-14));

  VectorXd back = apply_fractional_power(b, half, -0.5);
  CHECK((back - v).norm() < 1e-14 * v.norm());

  for (double rho : {-1.0, 0.7, 2.0}) {
    VectorXd w = apply_fractional_power(b, v, rho / 2.0);
    CHECK(w.norm() == doctest::Approx(hdot_norm(b, v, rho)).epsilon(1e-13));
  }
}

TEST_CASE("smoothing bound: measured sup sits under the scalar envelope") {
  auto b = SpectralBasis::dirichlet_laplacian(64);
  auto grid = log_grid(1e-7, 10.0, 4000);

  CHECK(smoothing_envelope(0.0) == 1.0);
  CHECK(smoothing_envelope(1.0) == doctest::Approx(0.4288819424803534).epsilon(1e-15));
  CHECK(smoothing_envelope(2.0) == doctest::Approx(0.36787944117144233).epsilon(1e-15));

  for (double rho : {0.5, 1.0, 2.0}) {
    double measured = smoothing_sup(b, rho, grid);
    double env = smoothing_envelope(rho);
    CHECK(measured <= env + 1e-9);
    // Dense grids nearly attain the envelope (y = lambda t sweeps through
    // the maximizer rho/2 for every mode).
    CHECK(measured >= 0.999 * env);
  }
  // The envelope for rho = 2 also sits under the looser constant 2/e.
  CHECK(smoothing_sup(b, 2.0, grid) <= 2.0 / std::numbers::e + 1e-9);

  CHECK_THROWS_AS(smoothing_envelope(-0.1), std::domain_error);
  CHECK_THROWS_AS(smoothing_sup(b, 1.0, std::vector<double>{0.0}), std::domain_error);
}

TEST_CASE("semigroup continuity bound near t = 0") {
  auto b = SpectralBasis::dirichlet_laplacian(64);
  auto grid = log_grid(1e-7, 10.0, 4000);

  CHECK(continuity_envelope(2.0) == 1.0);
  CHECK(continuity_envelope(1.0) == doctest::Approx(0.6381726863389515).epsilon(1e-12));
  CHECK(continuity_envelope(0.5) == doctest::Approx(0.7306463362509676).epsilon(1e-12));

  for (double rho : {0.5, 1.0, 2.0}) {
    double measured = continuity_sup(b, rho, grid);
    CHECK(measured <= continuity_envelope(rho) + 1e-9);
    CHECK(measured >= 0.99 * continuity_envelope(rho));
  }

  CHECK_THROWS_AS(continuity_envelope(0.0), std::domain_error);
  CHECK_THROWS_AS(continuity_envelope(2.5), std::domain_error);
}

TEST_CASE("pointwise evaluation of eigen expansions") {
  auto b = SpectralBasis::dirichlet_laplacian(4);
  VectorXd c = VectorXd::Zero(4);
  c[0] = 1.0;
  CHECK(evaluate_at(b, c, 0.5) == doctest::Approx(std::numbers::sqrt2).epsilon(1e-15));
  CHECK(evaluate_at(b, c, 0.0) == doctest::Approx(0.0).epsilon(1e-15));

  c = VectorXd::Zero(4);
  c[1] = 3.0; // sqrt(2)*3*sin(2 pi xi)
  CHECK(evaluate_at(b, c, 0.25) == doctest::Approx(3.0 * std::numbers::sqrt2).epsilon(1e-14));

  auto custom = SpectralBasis::from_eigenvalues({1.0, 2.0, 3.0, 4.0});
  CHECK_THROWS_AS(evaluate_at(custom, c, 0.5), std::logic_error);
}

TEST_CASE("sine transform: round trip, direct-sum agreement, Parseval") {
  const int K = 37;
  auto b = SpectralBasis::dirichlet_laplacian(K);
  SineTransform st(K);
  RngStream rng(7774, 0);
  VectorXd c(K);
  for (int j = 0; j < K; ++j) c[j] = 2.0 * rng.next_double() - 1.0;

  VectorXd vals(K), back(K);
  st.to_physical(c, vals);
  st.to_coefficients(vals, back);
  CHECK((back - c).norm() < 1e-12 * c.norm());

  // Grid values must equal the direct eigenfunction summation.
  for (int i : {0, 10, 36}) {
    CHECK(vals[i] == doctest::Approx(evaluate_at(b, c, st.grid_point(i))).epsilon(1e-12));
    CHECK(st.grid_point(i) == doctest::Approx(double(i + 1) / (K + 1)).epsilon(1e-15));
  }

  // Discrete Parseval: (1/(K+1)) sum_i u(xi_i)^2 = sum_j c_j^2 exactly on
  // the interior grid (trapezoid weights, boundary values vanish).
  double grid_energy = vals.squaredNorm() / (K + 1);
  CHECK(grid_energy == doctest::Approx(c.squaredNorm()).epsilon(1e-12));

  CHECK_THROWS_AS(SineTransform(0), std::invalid_argument);
}
