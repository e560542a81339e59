#pragma once
// Observables of a simulated field: spectral probes <X(t), psi>, scalar
// test functions applied to probe values, two-time products, and the time
// integration used by the path-seminorm diagnostics.
//
// A probe is a coefficient vector psi; pairing a state of different
// resolution truncates to the common leading modes, i.e. evaluates
// <P X, psi> = <X, P psi> for the shared projection P.  On the mesh
// backend the pairing contracts the nodal vector against the exact load of
// psi, so both backends report the same continuous functional of their
// respective fields.

#include <levyheat/fem.hpp>
#include <levyheat/solver.hpp>

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace levyheat {

// ---- probes -----------------------------------------------------------------

// Equal weight on the first n modes, unit norm.
inline Eigen::VectorXd flat_probe(int n_modes) {
  if (n_modes < 1) throw std::invalid_argument("flat_probe: need modes");
  return Eigen::VectorXd::Constant(n_modes, 1.0 / std::sqrt(double(n_modes)));
}

// Truncated coefficient expansion of the constant function 1, so the
// read-out <x, psi> is the spatial mean.  Coefficients decay like 1/j
// (odd modes only), which keeps many modes in play without pinning the
// read-out to any mesh's resolvability edge.
inline Eigen::VectorXd constant_probe(int n_modes) {
  if (n_modes < 1) throw std::invalid_argument("constant_probe: need modes");
  Eigen::VectorXd psi = Eigen::VectorXd::Zero(n_modes);
  for (int j = 1; j <= n_modes; j += 2)
    psi[j - 1] = 2.0 * std::numbers::sqrt2 / (j * std::numbers::pi);
  return psi;
}

inline Eigen::VectorXd mode_probe(int n_modes, int mode) {
  if (mode < 1 || mode > n_modes)
    throw std::invalid_argument("mode_probe: mode out of range");
  Eigen::VectorXd psi = Eigen::VectorXd::Zero(n_modes);
  psi[mode - 1] = 1.0;
  return psi;
}

inline double probe_value(const Eigen::Ref<const Eigen::VectorXd>& psi,
                          const Eigen::Ref<const Eigen::VectorXd>& coeffs) {
  int n = static_cast<int>(std::min(psi.size(), coeffs.size()));
  return psi.head(n).dot(coeffs.head(n));
}

// Mesh-side realization of a spectral probe: one load vector, then plain
// dot products against nodal states.
inline Eigen::VectorXd fem_probe_load(const FemMesh& mesh,
                                      const Eigen::Ref<const Eigen::VectorXd>& psi) {
  Eigen::VectorXd load = Eigen::VectorXd::Zero(mesh.n_dof());
  for (int j = 0; j < psi.size(); ++j)
    if (psi[j] != 0.0) load += psi[j] * sine_load(mesh, j + 1);
  return load;
}

// ---- scalar test functions --------------------------------------------------

class ScalarFunction {
public:
  enum class Kind { identity, square, smooth_square };

  static ScalarFunction identity() { return ScalarFunction(Kind::identity); }
  static ScalarFunction square() { return ScalarFunction(Kind::square); }
  // Bounded smooth saturation of s^2 with bounded derivatives.
  static ScalarFunction smooth_square() { return ScalarFunction(Kind::smooth_square); }

  Kind kind() const { return kind_; }

  double operator()(double s) const {
    switch (kind_) {
      case Kind::identity: return s;
      case Kind::square: return s * s;
      case Kind::smooth_square: return s * s / (1.0 + s * s);
    }
    return 0.0;
  }
  double derivative(double s) const {
    switch (kind_) {
      case Kind::identity: return 1.0;
      case Kind::square: return 2.0 * s;
      case Kind::smooth_square: {
        double d = 1.0 + s * s;
        return 2.0 * s / (d * d);
      }
    }
    return 0.0;
  }

private:
  explicit ScalarFunction(Kind k) : kind_(k) {}
  Kind kind_;
};

// ---- probe collection during a run -----------------------------------------

struct ProbeRequest {
  double time = 0.0;
  Eigen::VectorXd psi;
};

namespace detail {
inline std::vector<int> probe_steps(const std::vector<ProbeRequest>& reqs,
                                    double dt, int n_steps) {
  std::vector<int> steps(reqs.size());
  for (std::size_t r = 0; r < reqs.size(); ++r)
    steps[r] = step_index_for_time(reqs[r].time, dt, n_steps);
  return steps;
}
} // namespace detail

// Captures <state, psi_r> at the read-out step of each request while a
// solver runs; values are aligned with the request order.
class SpectralProbeObserver {
public:
  SpectralProbeObserver(std::vector<ProbeRequest> reqs, double dt, int n_steps)
      : reqs_(std::move(reqs)),
        steps_(detail::probe_steps(reqs_, dt, n_steps)),
        values_(reqs_.size(), 0.0) {}

  StepObserver observer() {
    return [this](int m, double, const Eigen::VectorXd& state) {
      for (std::size_t r = 0; r < reqs_.size(); ++r)
        if (steps_[r] == m) values_[r] = probe_value(reqs_[r].psi, state);
    };
  }
  const std::vector<double>& values() const { return values_; }

private:
  std::vector<ProbeRequest> reqs_;
  std::vector<int> steps_;
  std::vector<double> values_;
};

class FemProbeObserver {
public:
  FemProbeObserver(const FemMesh& mesh, const std::vector<ProbeRequest>& reqs,
                   double dt, int n_steps)
      : steps_(detail::probe_steps(reqs, dt, n_steps)),
        values_(reqs.size(), 0.0) {
    loads_.reserve(reqs.size());
    for (const auto& r : reqs) loads_.push_back(fem_probe_load(mesh, r.psi));
  }

  StepObserver observer() {
    return [this](int m, double, const Eigen::VectorXd& state) {
      for (std::size_t r = 0; r < loads_.size(); ++r)
        if (steps_[r] == m) values_[r] = loads_[r].dot(state);
    };
  }
  const std::vector<double>& values() const { return values_; }

private:
  std::vector<Eigen::VectorXd> loads_;
  std::vector<int> steps_;
  std::vector<double> values_;
};

// ---- weak observables -------------------------------------------------------

struct WeakFunctional {
  enum class Kind { linear_terminal, smooth_terminal, product_two_time };

  Kind kind = Kind::linear_terminal;
  std::vector<ProbeRequest> requests;
  ScalarFunction g = ScalarFunction::identity();

  static WeakFunctional linear_terminal(double T, Eigen::VectorXd psi) {
    WeakFunctional w;
    w.kind = Kind::linear_terminal;
    w.requests = {{T, std::move(psi)}};
    return w;
  }
  static WeakFunctional smooth_terminal(double T, Eigen::VectorXd psi) {
    WeakFunctional w;
    w.kind = Kind::smooth_terminal;
    w.requests = {{T, std::move(psi)}};
    w.g = ScalarFunction::smooth_square();
    return w;
  }
  static WeakFunctional product_two_time(double t1, Eigen::VectorXd psi1,
                                         double t2, Eigen::VectorXd psi2) {
    if (!(t1 <= t2))
      throw std::invalid_argument("product_two_time: needs t1 <= t2");
    WeakFunctional w;
    w.kind = Kind::product_two_time;
    w.requests = {{t1, std::move(psi1)}, {t2, std::move(psi2)}};
    return w;
  }

  double evaluate(const std::vector<double>& probe_vals) const {
    if (probe_vals.size() != requests.size())
      throw std::invalid_argument("WeakFunctional: probe count mismatch");
    switch (kind) {
      case Kind::linear_terminal: return probe_vals[0];
      case Kind::smooth_terminal: return g(probe_vals[0]);
      case Kind::product_two_time: return probe_vals[0] * probe_vals[1];
    }
    return 0.0;
  }
};

// Two-time covariance target Cov(<X(t1),psi1>, <X(t2),psi2>).
struct CovarianceSpec {
  double t1 = 0.0, t2 = 0.0;
  Eigen::VectorXd psi1, psi2;

  std::vector<ProbeRequest> requests() const {
    if (!(t1 <= t2)) throw std::invalid_argument("CovarianceSpec: needs t1 <= t2");
    return {{t1, psi1}, {t2, psi2}};
  }
};

// ---- piecewise-constant trajectory records ---------------------------------

// Grid states X^0..X^M read as the left-continuous step function: value X^m
// on [t_m, t_{m+1}), value X^M at the right endpoint.
struct TrajectoryRecord {
  double dt = 0.0;
  std::vector<Eigen::VectorXd> states;

  int steps() const { return static_cast<int>(states.size()) - 1; }
  double horizon() const { return dt * steps(); }
  void validate() const {
    if (!(dt > 0.0) || states.empty())
      throw std::invalid_argument("TrajectoryRecord: need dt > 0 and states");
  }
  const Eigen::VectorXd& eval(double t) const {
    return states[static_cast<std::size_t>(step_index_for_time(t, dt, steps()))];
  }
};

// ---- finite time measures ---------------------------------------------------

// Finitely many weighted time points plus a constant density.
struct TimeMeasure {
  std::vector<std::pair<double, double>> atoms; // (time, weight >= 0)
  double lebesgue_density = 0.0;

  static TimeMeasure dirac(double t, double w = 1.0) {
    TimeMeasure mu;
    mu.atoms = {{t, w}};
    return mu;
  }
  static TimeMeasure lebesgue(double density) {
    TimeMeasure mu;
    mu.lebesgue_density = density;
    return mu;
  }

  void validate(double horizon) const {
    if (!(lebesgue_density >= 0.0))
      throw std::invalid_argument("TimeMeasure: density must be >= 0");
    for (const auto& [t, w] : atoms) {
      if (!(t >= 0.0) || t > horizon * (1.0 + 1e-12))
        throw std::invalid_argument("TimeMeasure: atom outside [0, horizon]");
      if (!(w >= 0.0))
        throw std::invalid_argument("TimeMeasure: atom weight must be >= 0");
    }
  }
  double total_mass(double horizon) const {
    double m = lebesgue_density * horizon;
    for (const auto& [t, w] : atoms) { (void)t; m += w; }
    return m;
  }
};

// Exact integral of the step function against the measure: atom part by
// read-out, Lebesgue part as dt * sum of the per-cell values.
inline Eigen::VectorXd integrate_record(const TrajectoryRecord& rec,
                                        const TimeMeasure& mu) {
  rec.validate();
  mu.validate(rec.horizon());
  Eigen::VectorXd y = Eigen::VectorXd::Zero(rec.states.front().size());
  for (const auto& [t, w] : mu.atoms) y += w * rec.eval(t);
  if (mu.lebesgue_density > 0.0) {
    Eigen::VectorXd run = Eigen::VectorXd::Zero(y.size());
    for (int m = 0; m < rec.steps(); ++m) run += rec.states[m];
    y += (mu.lebesgue_density * rec.dt) * run;
  }
  return y;
}

// ---- path functionals -------------------------------------------------------

// F(x) = phi( <y_1, psi_1>, ..., <y_n, psi_n> ) with y_i the integral of the
// path against measure i.  The outer maps are built-ins with exact gradients
// and globally Lipschitz derivative:
//   linear              z_1
//   bilinear_product    z_1 * z_2
//   smoothed_quadratic  S / (1 + eps sqrt(S)),  S = sum z_i^2
struct FunctionalField {
  TimeMeasure measure;
  Eigen::VectorXd psi;
};

class PathFunctional {
public:
  enum class Outer { linear, bilinear_product, smoothed_quadratic };

  static PathFunctional linear(TimeMeasure mu, Eigen::VectorXd psi) {
    PathFunctional f(Outer::linear);
    f.fields_.push_back({std::move(mu), std::move(psi)});
    return f;
  }
  static PathFunctional bilinear_product(TimeMeasure mu1, Eigen::VectorXd psi1,
                                         TimeMeasure mu2, Eigen::VectorXd psi2) {
    PathFunctional f(Outer::bilinear_product);
    f.fields_.push_back({std::move(mu1), std::move(psi1)});
    f.fields_.push_back({std::move(mu2), std::move(psi2)});
    return f;
  }
  static PathFunctional smoothed_quadratic(std::vector<FunctionalField> fields,
                                           double eps) {
    if (fields.empty() || fields.size() > 4)
      throw std::invalid_argument("smoothed_quadratic: 1..4 fields");
    if (!(eps >= 0.0))
      throw std::invalid_argument("smoothed_quadratic: eps must be >= 0");
    PathFunctional f(Outer::smoothed_quadratic);
    f.fields_ = std::move(fields);
    f.eps_ = eps;
    return f;
  }

  Outer outer() const { return outer_; }
  double eps() const { return eps_; }
  const std::vector<FunctionalField>& fields() const { return fields_; }

  double phi(const std::vector<double>& z) const {
    check(z);
    switch (outer_) {
      case Outer::linear: return z[0];
      case Outer::bilinear_product: return z[0] * z[1];
      case Outer::smoothed_quadratic: {
        double S = 0.0;
        for (double v : z) S += v * v;
        return S / (1.0 + eps_ * std::sqrt(S));
      }
    }
    return 0.0;
  }

  std::vector<double> phi_gradient(const std::vector<double>& z) const {
    check(z);
    switch (outer_) {
      case Outer::linear: return {1.0};
      case Outer::bilinear_product: return {z[1], z[0]};
      case Outer::smoothed_quadratic: {
        double S = 0.0;
        for (double v : z) S += v * v;
        double r = std::sqrt(S), d = 1.0 + eps_ * r;
        std::vector<double> g(z.size());
        for (std::size_t i = 0; i < z.size(); ++i)
          g[i] = z[i] * (2.0 + eps_ * r) / (d * d);
        return g;
      }
    }
    return {};
  }

  // Direct evaluation on a coefficient-space record.
  double evaluate(const TrajectoryRecord& rec) const {
    std::vector<double> z(fields_.size());
    for (std::size_t i = 0; i < fields_.size(); ++i)
      z[i] = probe_value(fields_[i].psi, integrate_record(rec, fields_[i].measure));
    return phi(z);
  }

private:
  explicit PathFunctional(Outer o) : outer_(o) {}
  void check(const std::vector<double>& z) const {
    if (z.size() != fields_.size())
      throw std::invalid_argument("PathFunctional: field count mismatch");
  }

  Outer outer_;
  double eps_ = 0.0;
  std::vector<FunctionalField> fields_;
};

// The three functionals whose means combine into the two-time covariance
// error: E[f1] - E[f2] E[f3] on each resolution.
inline std::array<PathFunctional, 3> covariance_triple(double t1, double t2,
                                                       Eigen::VectorXd psi1,
                                                       Eigen::VectorXd psi2) {
  if (!(t1 > 0.0) || !(t2 > 0.0))
    throw std::invalid_argument("covariance_triple: times must be > 0");
  return {PathFunctional::bilinear_product(TimeMeasure::dirac(t1), psi1,
                                           TimeMeasure::dirac(t2), psi2),
          PathFunctional::linear(TimeMeasure::dirac(t1), std::move(psi1)),
          PathFunctional::linear(TimeMeasure::dirac(t2), std::move(psi2))};
}

// ---- streaming field pairing ------------------------------------------------

// Accumulates z_i = <integral of the path against measure i, pairing_i>
// while a solver runs, without storing the trajectory.  The caller supplies
// one pairing vector per field, sized for the backend's states (coefficient
// probe or mesh load).  Exactly reproduces evaluate() on the stored record.
class MeasureProbeAccumulator {
public:
  MeasureProbeAccumulator(const PathFunctional& f,
                          std::vector<Eigen::VectorXd> pairings, double dt,
                          int n_steps)
      : pairings_(std::move(pairings)), z_(f.fields().size(), 0.0) {
    const auto& fields = f.fields();
    if (pairings_.size() != fields.size())
      throw std::invalid_argument("MeasureProbeAccumulator: pairing count");
    weights_.assign(fields.size(),
                    std::vector<double>(static_cast<std::size_t>(n_steps) + 1, 0.0));
    for (std::size_t i = 0; i < fields.size(); ++i) {
      fields[i].measure.validate(dt * n_steps);
      if (fields[i].measure.lebesgue_density > 0.0)
        for (int m = 0; m < n_steps; ++m)
          weights_[i][m] += fields[i].measure.lebesgue_density * dt;
      for (const auto& [t, w] : fields[i].measure.atoms)
        weights_[i][static_cast<std::size_t>(step_index_for_time(t, dt, n_steps))] += w;
    }
  }

  StepObserver observer() {
    return [this](int m, double, const Eigen::VectorXd& state) {
      for (std::size_t i = 0; i < weights_.size(); ++i) {
        double w = weights_[i][static_cast<std::size_t>(m)];
        if (w != 0.0) z_[i] += w * pairings_[i].dot(state);
      }
    };
  }
  const std::vector<double>& scalars() const { return z_; }

private:
  std::vector<Eigen::VectorXd> pairings_;
  std::vector<std::vector<double>> weights_;
  std::vector<double> z_;
};

// Pads or truncates a probe to a backend dimension so the accumulator can
// use a plain dot product.
inline Eigen::VectorXd padded_probe(const Eigen::Ref<const Eigen::VectorXd>& psi,
                                    int n) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  int m = static_cast<int>(std::min<std::ptrdiff_t>(psi.size(), n));
  out.head(m) = psi.head(m);
  return out;
}

// ---- trajectory text format -------------------------------------------------

// Columnar text: one comment header, then "t c_1 ... c_n" per grid step with
// shortest round-trip number formatting, so re-reading reproduces the record
// bit for bit.
inline void write_trajectory(std::ostream& os, const TrajectoryRecord& rec) {
  rec.validate();
  os << "# trajectory steps=" << rec.steps() << " dim=" << rec.states[0].size()
     << " dt=" << detail::shortest_double(rec.dt) << "\n";
  for (int m = 0; m < static_cast<int>(rec.states.size()); ++m) {
    os << detail::shortest_double(m * rec.dt);
    const auto& x = rec.states[static_cast<std::size_t>(m)];
    for (int j = 0; j < x.size(); ++j)
      os << ' ' << detail::shortest_double(x[j]);
    os << "\n";
  }
}

inline TrajectoryRecord read_trajectory(std::istream& is) {
  std::string line;
  // Skip any preceding comment lines (artifacts prepend provenance headers).
  while (std::getline(is, line)) {
    if (line.rfind("# trajectory ", 0) == 0) break;
    if (line.empty() || line[0] == '#') continue;
    throw std::invalid_argument("read_trajectory: missing header");
  }
  if (line.rfind("# trajectory ", 0) != 0)
    throw std::invalid_argument("read_trajectory: missing header");
  auto field = [&line](const char* key) {
    auto pos = line.find(key);
    if (pos == std::string::npos)
      throw std::invalid_argument("read_trajectory: malformed header");
    pos += std::string(key).size();
    auto end = line.find(' ', pos);
    return line.substr(pos, end == std::string::npos ? end : end - pos);
  };
  int steps = std::stoi(field("steps="));
  int dim = std::stoi(field("dim="));
  TrajectoryRecord rec;
  rec.dt = detail::parse_double(field("dt="));
  for (int m = 0; m <= steps; ++m) {
    if (!std::getline(is, line))
      throw std::invalid_argument("read_trajectory: truncated body");
    std::istringstream row(line);
    std::string tok;
    if (!(row >> tok)) throw std::invalid_argument("read_trajectory: empty row");
    Eigen::VectorXd x(dim);
    for (int j = 0; j < dim; ++j) {
      if (!(row >> tok))
        throw std::invalid_argument("read_trajectory: short row");
      x[j] = detail::parse_double(tok);
    }
    rec.states.push_back(std::move(x));
  }
  rec.validate();
  return rec;
}

// ---- time integration -------------------------------------------------------

// Fixed-panel midpoint rule on [0, T].  For integrands that are constant on
// the cells of a coarser dyadic grid (panel count a multiple of the cell
// count) the rule is exact.
inline double midpoint_integrate(const std::function<double(double)>& fn,
                                 double T, int panels = 64) {
  if (!(T > 0.0) || panels < 1)
    throw std::invalid_argument("midpoint_integrate: bad horizon or panels");
  double dt = T / panels, sum = 0.0;
  for (int p = 0; p < panels; ++p) sum += fn((p + 0.5) * dt);
  return sum * dt;
}

// Exact integral of a per-cell-constant function given its cell values.
inline double piecewise_constant_integral(const std::vector<double>& cell_values,
                                          double T) {
  if (cell_values.empty())
    throw std::invalid_argument("piecewise_constant_integral: no cells");
  double sum = 0.0;
  for (double v : cell_values) sum += v;
  return sum * (T / cell_values.size());
}

} // namespace levyheat
