#pragma once
// Majorant recursions behind the a-priori bounds used in the test suite.
//
// Discrete form: the extremal sequence of
//
//   phi_m = A + B k sum_{i=0}^{m-1} t_{m-i}^(-1+beta) phi_i,   t_m = m k,
//
// dominates every sequence satisfying the same inequality, and its sup is
// C(B,T,beta) * A with C independent of the step size.  Continuous form:
// the Volterra iteration of
//
//   phi(t,s) = A (t-s)^(-1+alpha) + B int_s^t (t-r)^(-1+beta) phi(r,s) dr
//
// on a uniform grid, whose normalized sup likewise stabilizes under grid
// refinement.  Both are diagnostics: they expose the stability constants
// that the convergence analysis leaves implicit.

#include <cmath>
#include <stdexcept>
#include <vector>

namespace levyheat {

// Equality case of the discrete recursion; phi_0 = A.
inline std::vector<double> discrete_majorant(double A, double B, double beta,
                                             double k, int M) {
  if (!(A >= 0.0) || !(B >= 0.0))
    throw std::invalid_argument("discrete_majorant: A, B must be >= 0");
  if (!(beta > 0.0) || beta > 1.0)
    throw std::invalid_argument("discrete_majorant: beta must be in (0,1]");
  if (!(k > 0.0) || M < 0)
    throw std::invalid_argument("discrete_majorant: need k > 0, M >= 0");
  std::vector<double> phi(static_cast<std::size_t>(M) + 1);
  phi[0] = A;
  for (int m = 1; m <= M; ++m) {
    double acc = 0.0;
    for (int i = 0; i < m; ++i)
      acc += std::pow((m - i) * k, beta - 1.0) * phi[i];
    phi[m] = A + B * k * acc;
  }
  return phi;
}

// sup_m phi_m / A for the extremal sequence (A cancels; use A = 1).
inline double discrete_majorant_constant(double B, double beta, double k,
                                         int M) {
  auto phi = discrete_majorant(1.0, B, beta, k, M);
  double mx = 0.0;
  for (double v : phi) mx = std::max(mx, v);
  return mx;
}

// Volterra iteration of the continuous inequality with s = 0 on an n-cell
// grid over [0, T]; returns phi at the grid points t_1..t_n scaled by
// t^(1-alpha) (the normalized profile whose sup estimates C * A).  The
// weakly singular kernel is integrated exactly against a piecewise
// constant interpolant of phi; the Picard sweeps converge for every B
// because the Volterra operator is quasi-nilpotent (Neumann series with
// factorial decay), so a fixed sweep budget is ample.
inline std::vector<double> continuous_majorant_profile(double A, double B,
                                                       double alpha,
                                                       double beta, double T,
                                                       int n_cells,
                                                       int sweeps = 64) {
  if (!(alpha > 0.0) || !(beta > 0.0))
    throw std::invalid_argument(
        "continuous_majorant_profile: alpha, beta must be > 0");
  if (!(T > 0.0) || n_cells < 1)
    throw std::invalid_argument(
        "continuous_majorant_profile: need T > 0 and n_cells >= 1");
  double dt = T / n_cells;
  std::vector<double> phi(static_cast<std::size_t>(n_cells));
  for (int m = 1; m <= n_cells; ++m)
    phi[m - 1] = A * std::pow(m * dt, alpha - 1.0);
  // phi approximated as constant on ((i-1)dt, i dt]; the kernel factor
  // integrates to ((t-r_lo)^beta - (t-r_hi)^beta)/beta exactly.
  for (int it = 0; it < sweeps; ++it) {
    for (int m = 1; m <= n_cells; ++m) {
      double t = m * dt;
      double acc = 0.0;
      for (int i = 1; i <= m; ++i) {
        double lo = (i - 1) * dt, hi = std::min(i * dt, t);
        double w =
            (std::pow(t - lo, beta) - std::pow(t - hi, beta)) / beta;
        acc += w * phi[i - 1];
      }
      phi[m - 1] = A * std::pow(t, alpha - 1.0) + B * acc;
    }
  }
  std::vector<double> out(phi.size());
  for (int m = 1; m <= n_cells; ++m)
    out[m - 1] = phi[m - 1] * std::pow(m * dt, 1.0 - alpha);
  return out;
}

} // namespace levyheat
