#pragma once
// Time steppers for the jump-forced semilinear heat equation.
//
// Scheme (both backends): one implicit Euler step per cell,
//
//   X^m = (I + dt A_h)^(-1) P_h ( X^(m-1) + dt F(X^(m-1)) + dL_m ),
//
// where dL_m collects the marks in ((m-1) dt, m dt].  The spectral backend
// diagonalizes the step to coefficients x_j / (1 + dt lambda_j); the mesh
// backend solves (M + dt S) w = M (u + dt f(u)) + jump loads.
//
// Reference integrator (spectral only): exponential stepping that treats
// the linear part and every jump exactly,
//
//   c(t+D) = e^(-lambda D) c(t) + (1 - e^(-lambda D))/lambda * F(c(t))
//            + sum_{tau in (t, t+D]} a e^(-lambda (t+D-tau)),
//
// with the drift frozen at the substep start.  With zero drift this is the
// exact mild solution restricted to the leading modes; with drift the only
// error is first order in the substep from the frozen-drift quadrature.
//
// The nonlinearity acts by collocation: transform to the interior grid,
// apply f pointwise, transform back (the mesh backend applies f at nodes).
// Marks on modes beyond a spectral resolution are annihilated by the
// projection; runs count them so callers can tell exact truncation from
// accidental under-resolution.

#include <levyheat/fem.hpp>
#include <levyheat/levy.hpp>
#include <levyheat/problem.hpp>
#include <levyheat/spectral.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <vector>

namespace levyheat {

using StepObserver =
    std::function<void(int step, double time, const Eigen::VectorXd& state)>;

struct SchemeResult {
  Eigen::VectorXd final_state; // eigen coefficients or nodal values
  int steps = 0;
  int dropped_marks = 0; // marks annihilated by the spectral projection
};

inline int checked_step_count(double horizon, double dt) {
  if (!(horizon > 0.0) || !(dt > 0.0))
    throw std::invalid_argument("time stepping: horizon and dt must be > 0");
  double ratio = horizon / dt;
  int steps = static_cast<int>(std::llround(ratio));
  if (steps < 1 || std::abs(steps * dt - horizon) > 1e-9 * horizon)
    throw std::invalid_argument("time stepping: dt must divide the horizon");
  return steps;
}

// Piecewise-constant read-out index: largest grid time <= t, with snapping
// for times that are a rounding error away from a grid point.
inline int step_index_for_time(double t, double dt, int n_steps) {
  if (t < -1e-12 || t > n_steps * dt * (1.0 + 1e-12))
    throw std::invalid_argument("step_index_for_time: t outside the run");
  int i = static_cast<int>(std::floor(t / dt + 1e-9));
  return std::min(std::max(i, 0), n_steps);
}

struct TrajectoryRecorder {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> states;
  StepObserver observer() {
    return [this](int, double t, const Eigen::VectorXd& x) {
      times.push_back(t);
      states.push_back(x);
    };
  }
};

// ---- spectral backend -------------------------------------------------------

class SpectralSolver {
public:
  explicit SpectralSolver(int n_modes)
      : basis_(SpectralBasis::dirichlet_laplacian(n_modes)),
        transform_(n_modes) {}

  int n_modes() const { return basis_.size(); }
  const SpectralBasis& basis() const { return basis_; }
  const SineTransform& transform() const { return transform_; }

  // Collocation Nemytskii map in coefficient space.
  void apply_drift(const Drift& f, const Eigen::Ref<const Eigen::VectorXd>& x,
                   Eigen::Ref<Eigen::VectorXd> out) const {
    if (f.is_zero()) {
      out.setZero();
      return;
    }
    Eigen::VectorXd phys(n_modes());
    transform_.to_physical(x, phys);
    for (int i = 0; i < phys.size(); ++i) phys[i] = f(phys[i]);
    transform_.to_coefficients(phys, out);
  }

  SchemeResult run_scheme(double dt, double horizon, const Drift& f,
                          const InitialData& x0, const JumpPath& path,
                          const StepObserver& observe = {}) const {
    int steps = checked_step_count(horizon, dt);
    int K = n_modes();
    Eigen::VectorXd decay(K);
    for (int j = 0; j < K; ++j) decay[j] = 1.0 / (1.0 + dt * basis_.lambda(j));

    Eigen::VectorXd x = x0.spectral_coefficients(K);
    Eigen::VectorXd fc(K);
    SchemeResult res;
    res.steps = steps;
    if (observe) observe(0, 0.0, x);

    std::size_t ptr = 0;
    for (int m = 1; m <= steps; ++m) {
      double tm = m * dt;
      apply_drift(f, x, fc);
      x += dt * fc;
      while (ptr < path.atoms.size() && path.atoms[ptr].time <= tm) {
        const auto& a = path.atoms[ptr];
        if (a.mode <= K)
          x[a.mode - 1] += a.amplitude;
        else
          ++res.dropped_marks;
        ++ptr;
      }
      x.array() *= decay.array();
      if (observe) observe(m, tm, x);
    }
    res.final_state = std::move(x);
    return res;
  }

  SchemeResult run_reference(int n_substeps, double horizon, const Drift& f,
                             const InitialData& x0, const JumpPath& path,
                             const StepObserver& observe = {}) const {
    if (n_substeps < 1)
      throw std::invalid_argument("run_reference: need at least one substep");
    int K = n_modes();
    double dt = horizon / n_substeps;
    Eigen::VectorXd expo(K), phi1(K);
    for (int j = 0; j < K; ++j) {
      double lam = basis_.lambda(j);
      expo[j] = std::exp(-lam * dt);
      phi1[j] = -std::expm1(-lam * dt) / lam;
    }

    Eigen::VectorXd x = x0.spectral_coefficients(K);
    Eigen::VectorXd fc(K);
    SchemeResult res;
    res.steps = n_substeps;
    res.dropped_marks = count_modes_above(path, K);
    if (observe) observe(0, 0.0, x);

    std::size_t ptr = 0;
    for (int i = 1; i <= n_substeps; ++i) {
      double ti = i * dt;
      apply_drift(f, x, fc);
      x.array() = expo.array() * x.array() + phi1.array() * fc.array();
      while (ptr < path.atoms.size() && path.atoms[ptr].time <= ti) {
        const auto& a = path.atoms[ptr];
        if (a.mode <= K)
          x[a.mode - 1] +=
              a.amplitude * std::exp(-basis_.lambda(a.mode - 1) * (ti - a.time));
        ++ptr;
      }
      if (observe) observe(i, ti, x);
    }
    res.final_state = std::move(x);
    return res;
  }

private:
  SpectralBasis basis_;
  SineTransform transform_;
};

// ---- mesh backend -----------------------------------------------------------

class FemSolver {
public:
  // Loads for modes 1..n_cached_loads are precomputed; higher modes are
  // assembled on the fly (every mode has an exact load on the mesh).
  explicit FemSolver(int n_cells, int n_cached_loads = 0)
      : mesh_(n_cells), mass_(Tridiag::mass(mesh_)),
        stiffness_(Tridiag::stiffness(mesh_)) {
    loads_.reserve(n_cached_loads);
    for (int j = 1; j <= n_cached_loads; ++j)
      loads_.push_back(sine_load(mesh_, j));
  }

  const FemMesh& mesh() const { return mesh_; }

  SchemeResult run_scheme(double dt, double horizon, const Drift& f,
                          const InitialData& x0, const JumpPath& path,
                          const StepObserver& observe = {}) const {
    int steps = checked_step_count(horizon, dt);
    int n = mesh_.n_dof();
    TridiagSolver step(mass_.plus_scaled(dt, stiffness_));

    Eigen::VectorXd u = project_l2(mesh_, [&x0](double xi) { return x0(xi); });
    Eigen::VectorXd work(n), b(n);
    SchemeResult res;
    res.steps = steps;
    if (observe) observe(0, 0.0, u);

    std::size_t ptr = 0;
    for (int m = 1; m <= steps; ++m) {
      double tm = m * dt;
      if (f.is_zero()) {
        work = u;
      } else {
        for (int i = 0; i < n; ++i) work[i] = u[i] + dt * f(u[i]);
      }
      mass_.apply(work, b);
      while (ptr < path.atoms.size() && path.atoms[ptr].time <= tm) {
        const auto& a = path.atoms[ptr];
        add_mode_load(a.mode, a.amplitude, b);
        ++ptr;
      }
      step.solve_in_place(b);
      u = b;
      if (observe) observe(m, tm, u);
    }
    res.final_state = std::move(u);
    return res;
  }

private:
  void add_mode_load(int mode, double amplitude, Eigen::VectorXd& b) const {
    if (mode <= static_cast<int>(loads_.size())) {
      b += amplitude * loads_[mode - 1];
    } else {
      b += amplitude * sine_load(mesh_, mode);
    }
  }

  FemMesh mesh_;
  Tridiag mass_, stiffness_;
  std::vector<Eigen::VectorXd> loads_;
};

} // namespace levyheat
