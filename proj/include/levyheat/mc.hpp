#pragma once
// Coupled Monte Carlo over resolution ladders.
//
// One jump path per sample drives every rung of a ladder plus one finer
// comparator run, so the estimated errors are differences of coupled
// trajectories, not differences of independent means.  Reductions follow a
// fixed layout: each sample writes into its own slot of a preallocated
// buffer and the statistics fold the slots in sample order afterwards, so
// the output is bitwise independent of the worker count.
//
// Two comparator flavours:
//   scheme - one scheme run of the same backend at a finer resolution
//            (space sweeps keep the same time step, so the common time
//            error cancels in the coupled difference);
//   mild   - the exponential-integrator reference on the leading modes.
// Both are quality-gated before sampling: the comparator is rerun with
// doubled settings on a handful of pilot paths, and the observed shift must
// be a small fraction of the finest rung's measured error.  For the mild
// reference the shift bounds its own discretization error (factor 0.1); for
// a scheme comparator the rung/comparator/truth geometry is nested, so a
// shift fraction rho deflates the finest estimate by about rho^2/2 and a
// looser factor (0.3, i.e. ~5% deflation) suffices.  A failed gate throws
// with the measurement attached.
//
// Rate fits are weighted least squares on log(error) vs log(scale); rungs
// whose standard error exceeds 30% of the estimate carry no usable rate
// information and are excluded (the "statistical void" rule) but still
// reported.

#include <levyheat/fem.hpp>
#include <levyheat/functionals.hpp>
#include <levyheat/levy.hpp>
#include <levyheat/problem.hpp>
#include <levyheat/rng.hpp>
#include <levyheat/solver.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace levyheat {

// ---- hashing ----------------------------------------------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

inline std::string hex16(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

// Digest of a jump path's full content (horizon plus every atom).
inline std::uint64_t path_digest(const JumpPath& path) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::uint64_t v) { h = fnv1a64(&v, sizeof v, h); };
  mix(std::bit_cast<std::uint64_t>(path.horizon));
  for (const auto& a : path.atoms) {
    mix(std::bit_cast<std::uint64_t>(a.time));
    mix(static_cast<std::uint64_t>(a.mode));
    mix(std::bit_cast<std::uint64_t>(a.amplitude));
  }
  return h;
}

// ---- problem bundle ---------------------------------------------------------

struct McProblem {
  LevyModel model;
  Drift drift;
  InitialData x0;
  double horizon = 1.0;

  void validate() const {
    if (!(horizon > 0.0))
      throw std::invalid_argument("McProblem: horizon must be > 0");
  }

  std::string canonical() const {
    std::string s = "beta=" + detail::shortest_double(model.regularity());
    s += "|T=" + detail::shortest_double(horizon);
    s += "|rate=" + detail::shortest_double(model.rate());
    s += "|alpha=" + detail::shortest_double(model.mode_exponent());
    s += "|modes=" + std::to_string(model.n_modes());
    s += "|drift=";
    s += drift.is_zero() ? "zero" : "sine:" + detail::shortest_double(drift.scale());
    s += "|x0=" + detail::shortest_double(x0.scale());
    return s;
  }
};

// ---- resolution ladders -----------------------------------------------------

enum class BackendKind { spectral, fem };
enum class SweepMode { space, time, diagonal };
enum class ComparatorKind { scheme, mild };

inline const char* to_string(BackendKind b) {
  return b == BackendKind::spectral ? "spectral" : "fem";
}
inline const char* to_string(SweepMode m) {
  switch (m) {
    case SweepMode::space: return "space";
    case SweepMode::time: return "time";
    case SweepMode::diagonal: return "diagonal";
  }
  return "?";
}
inline const char* to_string(ComparatorKind c) {
  return c == ComparatorKind::scheme ? "scheme" : "mild";
}

struct Rung {
  int resolution = 0; // mode count (spectral) or cell count (fem)
  double h = 0.0;     // reported spatial parameter, 1/resolution
  double dt = 0.0;
};

// A sweep plan: which variable moves, which runs realize it, and which finer
// run serves as the comparator.  "Strictly finer" is enforced in the swept
// variable(s); the pinned variable may be shared so its error cancels in the
// coupled difference.
struct ResolutionLadder {
  BackendKind backend = BackendKind::spectral;
  SweepMode mode = SweepMode::space;
  std::vector<Rung> rungs;

  ComparatorKind comparator = ComparatorKind::mild;
  int comparator_resolution = 0; // scheme comparator
  double comparator_dt = 0.0;
  int reference_modes = 0; // mild comparator
  int reference_substeps = 0;

  static ResolutionLadder space_ladder(BackendKind b, const std::vector<int>& res,
                                       double k_pin) {
    ResolutionLadder lad;
    lad.backend = b;
    lad.mode = SweepMode::space;
    for (int r : res) lad.rungs.push_back({r, 1.0 / r, k_pin});
    return lad;
  }

  static ResolutionLadder time_ladder(BackendKind b, int resolution,
                                      const std::vector<double>& dts) {
    ResolutionLadder lad;
    lad.backend = b;
    lad.mode = SweepMode::time;
    for (double k : dts) lad.rungs.push_back({resolution, 1.0 / resolution, k});
    return lad;
  }

  static ResolutionLadder diagonal_ladder(BackendKind b, const std::vector<int>& res,
                                          double dt_over_h2) {
    ResolutionLadder lad;
    lad.backend = b;
    lad.mode = SweepMode::diagonal;
    for (int r : res) {
      double h = 1.0 / r;
      lad.rungs.push_back({r, h, dt_over_h2 * h * h});
    }
    return lad;
  }

  ResolutionLadder& with_scheme_comparator(int resolution, double dt) {
    comparator = ComparatorKind::scheme;
    comparator_resolution = resolution;
    comparator_dt = dt;
    return *this;
  }

  ResolutionLadder& with_mild_reference(int n_modes, int n_substeps) {
    comparator = ComparatorKind::mild;
    reference_modes = n_modes;
    reference_substeps = n_substeps;
    return *this;
  }

  double min_dt() const {
    double k = rungs.at(0).dt;
    for (const auto& r : rungs) k = std::min(k, r.dt);
    return k;
  }
  int max_resolution() const {
    int n = rungs.at(0).resolution;
    for (const auto& r : rungs) n = std::max(n, r.resolution);
    return n;
  }
  // Finest rung in the swept variable: minimal dt for time sweeps, maximal
  // resolution otherwise (the diagonal refines both together).
  const Rung& finest() const {
    const Rung* best = &rungs.at(0);
    for (const auto& r : rungs) {
      bool finer = mode == SweepMode::time ? r.dt < best->dt
                                           : r.resolution > best->resolution;
      if (finer) best = &r;
    }
    return *best;
  }

  void validate(double horizon) const {
    if (rungs.empty())
      throw std::invalid_argument("ladder: no rungs");
    for (const auto& r : rungs) {
      int min_res = backend == BackendKind::fem ? 2 : 1;
      if (r.resolution < min_res)
        throw std::invalid_argument("ladder: rung resolution too small");
      if (!(r.dt > 0.0) || !(r.h > 0.0))
        throw std::invalid_argument("ladder: rung h and dt must be > 0");
      if (std::abs(r.h * r.resolution - 1.0) > 1e-12)
        throw std::invalid_argument("ladder: rung h must equal 1/resolution");
      checked_step_count(horizon, r.dt);
    }
    auto close = [](double a, double b, double tol) {
      return std::abs(a - b) <= tol * std::max(std::abs(a), std::abs(b));
    };
    if (mode == SweepMode::space) {
      for (const auto& r : rungs)
        if (!close(r.dt, rungs[0].dt, 1e-12))
          throw std::invalid_argument("space sweep: all rungs share one dt");
    } else if (mode == SweepMode::time) {
      for (const auto& r : rungs)
        if (r.resolution != rungs[0].resolution)
          throw std::invalid_argument("time sweep: all rungs share one resolution");
    } else {
      for (const auto& r : rungs) {
        double want = rungs[0].dt * (r.h * r.h) / (rungs[0].h * rungs[0].h);
        if (!close(r.dt, want, 1e-9))
          throw std::invalid_argument("diagonal sweep: dt must scale as h^2");
      }
    }
    if (comparator == ComparatorKind::scheme) {
      if (comparator_resolution < 1 || !(comparator_dt > 0.0))
        throw std::invalid_argument("scheme comparator: settings missing");
      checked_step_count(horizon, comparator_dt);
      bool space_strict = comparator_resolution >= 2 * max_resolution();
      bool time_strict = comparator_dt <= min_dt() / 2.0 * (1.0 + 1e-12);
      bool space_ge = comparator_resolution >= max_resolution();
      bool time_ge = comparator_dt <= min_dt() * (1.0 + 1e-12);
      bool ok = mode == SweepMode::space    ? space_strict && time_ge
                : mode == SweepMode::time   ? time_strict && space_ge
                                            : space_strict && time_strict;
      if (!ok)
        throw std::invalid_argument(
            "scheme comparator: must be strictly finer in the swept variable");
      if (backend == BackendKind::fem)
        for (const auto& r : rungs)
          if (comparator_resolution % r.resolution != 0)
            throw std::invalid_argument(
                "scheme comparator: mesh must nest every rung mesh");
    } else {
      if (reference_modes < 1 || reference_substeps < 1)
        throw std::invalid_argument("mild reference: settings missing");
      double sub = horizon / reference_substeps;
      bool space_strict = reference_modes >= 2 * max_resolution();
      bool time_strict = sub <= min_dt() / 2.0 * (1.0 + 1e-12);
      bool space_ge = reference_modes >= max_resolution();
      bool time_ge = sub <= min_dt() * (1.0 + 1e-12);
      bool ok = mode == SweepMode::space    ? space_strict && time_ge
                : mode == SweepMode::time   ? time_strict && space_ge
                                            : space_strict && time_strict;
      if (!ok)
        throw std::invalid_argument(
            "mild reference: must be strictly finer in the swept variable");
    }
  }

  std::string canonical() const {
    std::string s = "backend=";
    s += to_string(backend);
    s += "|mode=";
    s += to_string(mode);
    s += "|rungs=";
    for (std::size_t i = 0; i < rungs.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(rungs[i].resolution) + ":" + detail::shortest_double(rungs[i].dt);
    }
    s += "|cmp=";
    s += to_string(comparator);
    if (comparator == ComparatorKind::scheme)
      s += ":" + std::to_string(comparator_resolution) + ":" +
           detail::shortest_double(comparator_dt);
    else
      s += ":" + std::to_string(reference_modes) + ":" +
           std::to_string(reference_substeps);
    return s;
  }
};

// Human-readable description of the pinned variable, for table headers.
inline std::string pinned_description(const ResolutionLadder& lad) {
  switch (lad.mode) {
    case SweepMode::space:
      return "k=" + detail::shortest_double(lad.rungs.at(0).dt);
    case SweepMode::time:
      return std::string(lad.backend == BackendKind::fem ? "cells=" : "N=") +
             std::to_string(lad.rungs.at(0).resolution);
    case SweepMode::diagonal: {
      const Rung& r = lad.rungs.at(0);
      return "k/h^2=" + detail::shortest_double(r.dt / (r.h * r.h));
    }
  }
  return "?";
}

// ---- worker pool ------------------------------------------------------------

// Runs body(s) for s in [0, n).  Workers claim sample indices from a shared
// counter; the body must only write to per-sample slots, so the result of
// any later reduction cannot depend on the worker count.  The first thrown
// exception is rethrown on the calling thread after all workers stop.
inline void parallel_samples(long n, int n_workers,
                             const std::function<void(long)>& body) {
  if (n <= 0) return;
  if (n_workers <= 1 || n == 1) {
    for (long s = 0; s < n; ++s) body(s);
    return;
  }
  std::atomic<long> next{0};
  std::mutex mtx;
  std::exception_ptr first_error;
  auto worker = [&] {
    while (true) {
      long s = next.fetch_add(1, std::memory_order_relaxed);
      if (s >= n) break;
      try {
        body(s);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mtx);
        if (!first_error) first_error = std::current_exception();
        next.store(n, std::memory_order_relaxed); // drain the queue
        break;
      }
    }
  };
  std::vector<std::thread> pool;
  int count = static_cast<int>(std::min<long>(n_workers, n));
  pool.reserve(static_cast<std::size_t>(count));
  for (int w = 0; w < count; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---- self-convergence gate --------------------------------------------------

struct GateReport {
  double shift = 0.0;       // comparator vs doubled-comparator RMS distance
  double finest_error = 0.0; // finest rung vs comparator RMS distance
  double ratio = 0.0;
  double threshold = 0.0;
  int samples = 0;
  bool pass = false;
  std::string detail;
};

class SelfConvergenceError : public std::runtime_error {
public:
  explicit SelfConvergenceError(GateReport r)
      : std::runtime_error("comparator failed its self-convergence gate: " +
                           r.detail),
        report(std::move(r)) {}
  GateReport report;
};

// ---- rate fitting -----------------------------------------------------------

inline constexpr double kVoidFraction = 0.3; // SE above this fraction of the
                                             // estimate voids a rung

struct RatePoint {
  double scale = 0.0;
  double error = 0.0;
  double se = 0.0;
};

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  std::vector<int> excluded; // indices dropped by the void / positivity rules
  bool ok = false;
  std::string note;
};

// Weighted least squares of log(error) on log(scale); weights are inverse
// variances of log(error) via the delta method, se_log = se / error.
inline RateFit fit_rate(const std::vector<RatePoint>& pts) {
  RateFit fit;
  std::vector<double> x, y, w;
  for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
    const RatePoint& p = pts[static_cast<std::size_t>(i)];
    bool bad = !(p.scale > 0.0) || !std::isfinite(p.error) || p.error <= 0.0 ||
               !std::isfinite(p.se) || p.se < 0.0;
    if (bad || p.se > kVoidFraction * p.error) {
      fit.excluded.push_back(i);
      continue;
    }
    double se_log = p.se / p.error;
    x.push_back(std::log(p.scale));
    y.push_back(std::log(p.error));
    w.push_back(1.0 / (se_log * se_log + 1e-24));
  }
  if (x.size() < 3) {
    fit.note = "fewer than 3 usable rungs";
    return fit;
  }
  double sw = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
  }
  double xbar = sx / sw, ybar = sy / sw;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += w[i] * (x[i] - xbar) * (x[i] - xbar);
    sxy += w[i] * (x[i] - xbar) * (y[i] - ybar);
  }
  if (!(sxx > 1e-12 * sw)) { // no usable spread in log(scale)
    fit.note = "degenerate abscissae";
    return fit;
  }
  fit.slope = sxy / sxx;
  fit.intercept = ybar - fit.slope * xbar;
  double ssres = 0.0, sstot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double r = y[i] - (fit.intercept + fit.slope * x[i]);
    ssres += w[i] * r * r;
    sstot += w[i] * (y[i] - ybar) * (y[i] - ybar);
  }
  fit.r2 = sstot > 0.0 ? 1.0 - ssres / sstot : 1.0;
  fit.ok = true;
  return fit;
}

// ---- error tables -----------------------------------------------------------

struct ErrorRow {
  double h = 0.0;
  double k = 0.0;
  std::string estimator;
  double estimate = 0.0;
  double se = 0.0;
  long n_samples = 0;
  bool voided = false;
};

struct ErrorTable {
  std::string sweep; // "strong" | "weak" | "covariance"
  SweepMode mode = SweepMode::space;
  std::string pinned;
  std::vector<ErrorRow> rows;
  RateFit fit;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t paths_digest = 0;
  long warning_count = 0; // marks annihilated by under-resolved projections
  std::string gate_note;
  // The comparator's own value of the estimated quantity (weak functional
  // mean or covariance), when the sweep produces one.
  double comparator_value = std::numeric_limits<double>::quiet_NaN();
  double comparator_se = std::numeric_limits<double>::quiet_NaN();
};

// Deterministic CSV: '#' comment header carrying the run identity, then one
// row per rung.  No timestamps, shortest round-trip number formatting; equal
// inputs produce byte-identical files.
inline void write_error_table_csv(std::ostream& os, const ErrorTable& tab) {
  os << "# sweep=" << tab.sweep << " mode=" << to_string(tab.mode)
     << " pinned=" << tab.pinned << "\n";
  os << "# seed=" << tab.seed << " config=" << hex16(tab.config_hash)
     << " paths=" << hex16(tab.paths_digest) << " warnings=" << tab.warning_count
     << "\n";
  os << "# gate=" << (tab.gate_note.empty() ? "none" : tab.gate_note) << "\n";
  if (std::isfinite(tab.comparator_value))
    os << "# comparator value=" << detail::shortest_double(tab.comparator_value)
       << " se=" << detail::shortest_double(tab.comparator_se) << "\n";
  os << "# fit slope=" << detail::shortest_double(tab.fit.slope)
     << " intercept=" << detail::shortest_double(tab.fit.intercept)
     << " r2=" << detail::shortest_double(tab.fit.r2) << " ok="
     << (tab.fit.ok ? 1 : 0) << " excluded=";
  if (tab.fit.excluded.empty()) {
    os << "-";
  } else {
    for (std::size_t i = 0; i < tab.fit.excluded.size(); ++i)
      os << (i ? "," : "") << tab.fit.excluded[i];
  }
  if (!tab.fit.note.empty()) os << " note=" << tab.fit.note;
  os << "\n";
  os << "h,k,estimator,estimate,se,n_samples,voided\n";
  for (const auto& r : tab.rows)
    os << detail::shortest_double(r.h) << ',' << detail::shortest_double(r.k)
       << ',' << r.estimator << ',' << detail::shortest_double(r.estimate)
       << ',' << detail::shortest_double(r.se) << ',' << r.n_samples << ','
       << (r.voided ? 1 : 0) << "\n";
}

// Companion plot data: one (x, y, yerr) triplet per rung against the swept
// scale, consumable by any plotting tool.  Voided rungs are kept (flagged
// rows are cheap to filter downstream); the header names the abscissa.
inline void write_plot_data(std::ostream& os, const ErrorTable& tab) {
  os << "# plot sweep=" << tab.sweep << " mode=" << to_string(tab.mode)
     << " x=" << (tab.mode == SweepMode::time ? "k" : "h")
     << " seed=" << tab.seed << " config=" << hex16(tab.config_hash) << "\n";
  os << "x,y,yerr\n";
  for (const auto& r : tab.rows)
    os << detail::shortest_double(tab.mode == SweepMode::time ? r.k : r.h) << ','
       << detail::shortest_double(r.estimate) << ','
       << detail::shortest_double(r.se) << "\n";
}

// ---- per-resolution engines -------------------------------------------------

namespace detail {

// One concrete run configuration, prebuilt once and shared read-only across
// worker threads.
struct ResolutionEngine {
  BackendKind backend = BackendKind::spectral;
  bool mild = false;
  int resolution = 0;
  double dt = 0.0;
  int steps = 0;
  double horizon = 0.0;
  std::shared_ptr<const SpectralSolver> sp;
  std::shared_ptr<const FemSolver> fem;

  static ResolutionEngine scheme(BackendKind b, int resolution, double dt,
                                 double horizon, int cached_loads) {
    ResolutionEngine e;
    e.backend = b;
    e.resolution = resolution;
    e.dt = dt;
    e.steps = checked_step_count(horizon, dt);
    e.horizon = horizon;
    if (b == BackendKind::spectral)
      e.sp = std::make_shared<SpectralSolver>(resolution);
    else
      e.fem = std::make_shared<FemSolver>(resolution, cached_loads);
    return e;
  }

  static ResolutionEngine reference(int n_modes, int n_substeps, double horizon) {
    ResolutionEngine e;
    e.backend = BackendKind::spectral;
    e.mild = true;
    e.resolution = n_modes;
    e.steps = n_substeps;
    e.dt = horizon / n_substeps;
    e.horizon = horizon;
    e.sp = std::make_shared<SpectralSolver>(n_modes);
    return e;
  }

  Eigen::VectorXd pairing(const Eigen::VectorXd& psi) const {
    return backend == BackendKind::spectral ? padded_probe(psi, resolution)
                                            : modal_load(fem->mesh(), psi);
  }

  // Runs the configured solver on one path.  Captures the state at
  // t_capture (piecewise-constant read-out; pass a negative time to skip)
  // and feeds every step to the accumulator when one is given.
  Eigen::VectorXd run(const McProblem& p, const JumpPath& path, double t_capture,
                      MeasureProbeAccumulator* acc, long& dropped) const {
    int want = t_capture >= 0.0 ? step_index_for_time(t_capture, dt, steps) : -1;
    Eigen::VectorXd captured;
    StepObserver acc_obs = acc ? acc->observer() : StepObserver{};
    StepObserver obs = [&](int m, double t, const Eigen::VectorXd& x) {
      if (acc_obs) acc_obs(m, t, x);
      if (m == want) captured = x;
    };
    SchemeResult res =
        mild ? sp->run_reference(steps, horizon, p.drift, p.x0, path, obs)
        : backend == BackendKind::spectral
            ? sp->run_scheme(dt, horizon, p.drift, p.x0, path, obs)
            : fem->run_scheme(dt, horizon, p.drift, p.x0, path, obs);
    dropped += res.dropped_marks;
    return captured;
  }
};

// L^2 distance between states of a rung and of its (at least as fine)
// comparator, each in its own discrete space.
inline double state_distance(const ResolutionEngine& rung, const Eigen::VectorXd& u,
                             const ResolutionEngine& cmp, const Eigen::VectorXd& v) {
  if (rung.backend == BackendKind::spectral && cmp.backend == BackendKind::spectral) {
    int n = static_cast<int>(std::max(u.size(), v.size()));
    return (padded_probe(u, n) - padded_probe(v, n)).norm();
  }
  if (rung.backend == BackendKind::fem && cmp.backend == BackendKind::fem) {
    Eigen::VectorXd up = prolong_nested(rung.fem->mesh(), cmp.fem->mesh(), u);
    return l2_norm_fem(cmp.fem->mesh(), up - v);
  }
  if (rung.backend == BackendKind::fem && cmp.backend == BackendKind::spectral)
    return l2_distance_to_modes(rung.fem->mesh(), u, cmp.sp->basis(), v);
  throw std::invalid_argument("state_distance: spectral rungs need a spectral comparator");
}

inline ResolutionEngine comparator_engine(const McProblem& p,
                                          const ResolutionLadder& lad) {
  if (lad.comparator == ComparatorKind::scheme)
    return ResolutionEngine::scheme(lad.backend, lad.comparator_resolution,
                                    lad.comparator_dt, p.horizon,
                                    p.model.n_modes());
  return ResolutionEngine::reference(lad.reference_modes, lad.reference_substeps,
                                     p.horizon);
}

// The comparator rebuilt with doubled settings, refining the swept
// variable(s) only.
inline ResolutionEngine doubled_comparator_engine(const McProblem& p,
                                                  const ResolutionLadder& lad) {
  if (lad.comparator == ComparatorKind::mild)
    return ResolutionEngine::reference(2 * lad.reference_modes,
                                       2 * lad.reference_substeps, p.horizon);
  switch (lad.mode) {
    case SweepMode::space:
      return ResolutionEngine::scheme(lad.backend, 2 * lad.comparator_resolution,
                                      lad.comparator_dt, p.horizon,
                                      p.model.n_modes());
    case SweepMode::time:
      return ResolutionEngine::scheme(lad.backend, lad.comparator_resolution,
                                      lad.comparator_dt / 2.0, p.horizon,
                                      p.model.n_modes());
    case SweepMode::diagonal:
      return ResolutionEngine::scheme(lad.backend, 2 * lad.comparator_resolution,
                                      lad.comparator_dt / 4.0, p.horizon,
                                      p.model.n_modes());
  }
  throw std::logic_error("doubled_comparator_engine: bad mode");
}

inline constexpr std::uint64_t kGateStreamBase = 0x8000000000000000ull;

// Content fingerprint of a path functional (outer kind, smoothing, and every
// field's measure and probe), for config hashes.
inline std::uint64_t functional_fingerprint(const PathFunctional& f) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    h = fnv1a64(&bits, sizeof bits, h);
  };
  mix(static_cast<double>(static_cast<int>(f.outer())));
  mix(f.eps());
  for (const auto& field : f.fields()) {
    mix(field.measure.lebesgue_density);
    for (const auto& [t, w] : field.measure.atoms) {
      mix(t);
      mix(w);
    }
    for (int j = 0; j < field.psi.size(); ++j) mix(field.psi[j]);
  }
  return h;
}

} // namespace detail

// ---- sweep settings ---------------------------------------------------------

struct SweepSettings {
  long n_samples = 0;
  std::uint64_t seed = 0;
  int n_workers = 1;
  int gate_samples = 8;
  double gate_threshold = 0.0; // 0 selects the comparator-kind default
  bool skip_gate = false;
};

// Pilot check that the comparator has converged relative to the signal it
// will measure.  States are compared at t_eval on a few dedicated paths
// (a disjoint stream family, so gate paths never reuse sample paths).
inline GateReport self_convergence_gate(const McProblem& p,
                                        const ResolutionLadder& lad,
                                        double t_eval, const SweepSettings& s) {
  using detail::ResolutionEngine;
  double threshold = s.gate_threshold > 0.0
                         ? s.gate_threshold
                         : (lad.comparator == ComparatorKind::mild ? 0.1 : 0.3);
  ResolutionEngine cmp = detail::comparator_engine(p, lad);
  ResolutionEngine dbl = detail::doubled_comparator_engine(p, lad);
  const Rung& fr = lad.finest();
  ResolutionEngine fine = ResolutionEngine::scheme(lad.backend, fr.resolution,
                                                   fr.dt, p.horizon,
                                                   p.model.n_modes());
  int g = std::max(2, s.gate_samples);
  double ss = 0.0, ee = 0.0;
  long dropped = 0;
  for (int i = 0; i < g; ++i) {
    RngStream rng(s.seed, detail::kGateStreamBase + static_cast<std::uint64_t>(i));
    JumpPath path = sample_jump_path(p.model, rng, p.horizon);
    Eigen::VectorXd uc = cmp.run(p, path, t_eval, nullptr, dropped);
    Eigen::VectorXd ud = dbl.run(p, path, t_eval, nullptr, dropped);
    Eigen::VectorXd uf = fine.run(p, path, t_eval, nullptr, dropped);
    double shift = detail::state_distance(cmp, uc, dbl, ud);
    double err = detail::state_distance(fine, uf, cmp, uc);
    ss += shift * shift;
    ee += err * err;
  }
  GateReport rep;
  rep.samples = g;
  rep.threshold = threshold;
  rep.shift = std::sqrt(ss / g);
  rep.finest_error = std::sqrt(ee / g);
  rep.ratio = rep.finest_error > 0.0
                  ? rep.shift / rep.finest_error
                  : (rep.shift == 0.0 ? 0.0
                                      : std::numeric_limits<double>::infinity());
  rep.pass = rep.shift <= threshold * rep.finest_error ||
             (rep.shift == 0.0 && rep.finest_error == 0.0);
  rep.detail = std::string(to_string(lad.comparator)) +
               " shift=" + detail::shortest_double(rep.shift) +
               " finest=" + detail::shortest_double(rep.finest_error) +
               " ratio=" + detail::shortest_double(rep.ratio) +
               " threshold=" + detail::shortest_double(threshold) +
               " samples=" + std::to_string(g);
  return rep;
}

// ---- sweeps -----------------------------------------------------------------

namespace detail {

struct SweepFrame {
  ErrorTable table;
  ResolutionEngine cmp;
  std::vector<ResolutionEngine> engines;
};

inline SweepFrame open_sweep(const char* name, const McProblem& p,
                             const ResolutionLadder& lad, double gate_t,
                             const SweepSettings& s, const std::string& extra) {
  p.validate();
  lad.validate(p.horizon);
  if (s.n_samples < 2)
    throw std::invalid_argument("sweep: need at least 2 samples");
  if (s.n_workers < 1)
    throw std::invalid_argument("sweep: need at least 1 worker");
  SweepFrame fr;
  fr.table.sweep = name;
  fr.table.mode = lad.mode;
  fr.table.pinned = pinned_description(lad);
  fr.table.seed = s.seed;
  fr.table.config_hash = fnv1a64(std::string(name) + "|" + p.canonical() + "|" +
                                 lad.canonical() + "|n=" +
                                 std::to_string(s.n_samples) + extra);
  fr.cmp = comparator_engine(p, lad);
  for (const auto& r : lad.rungs)
    fr.engines.push_back(ResolutionEngine::scheme(lad.backend, r.resolution,
                                                  r.dt, p.horizon,
                                                  p.model.n_modes()));
  if (s.skip_gate) {
    fr.table.gate_note = "skipped";
  } else {
    GateReport rep = self_convergence_gate(p, lad, gate_t, s);
    if (!rep.pass) throw SelfConvergenceError(rep);
    fr.table.gate_note = rep.detail;
  }
  return fr;
}

// Folds per-sample slots (sample-major layout) into per-rung mean and
// standard error, in fixed sample order.
struct MeanSE {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSE reduce_column(const std::vector<double>& slots, long n, int width,
                            int col) {
  double sum = 0.0;
  for (long s = 0; s < n; ++s) sum += slots[static_cast<std::size_t>(s * width + col)];
  double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (long s = 0; s < n; ++s) {
    double d = slots[static_cast<std::size_t>(s * width + col)] - mean;
    ss += d * d;
  }
  double var = n > 1 ? ss / static_cast<double>(n - 1) : 0.0;
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

inline double sweep_scale(SweepMode mode, const ErrorRow& row) {
  return mode == SweepMode::time ? row.k : row.h;
}

inline void finish_table(ErrorTable& tab, const std::vector<std::uint64_t>& hashes,
                         const std::vector<long>& dropped) {
  tab.paths_digest = fnv1a64(hashes.data(), hashes.size() * sizeof(std::uint64_t));
  tab.warning_count = 0;
  for (long d : dropped) tab.warning_count += d;
  std::vector<RatePoint> pts;
  for (const auto& r : tab.rows) pts.push_back({sweep_scale(tab.mode, r), r.estimate, r.se});
  tab.fit = fit_rate(pts);
  for (std::size_t i = 0; i < tab.rows.size(); ++i) {
    const ErrorRow& r = tab.rows[i];
    tab.rows[i].voided = !(r.estimate > 0.0) || !std::isfinite(r.estimate) ||
                         r.se > kVoidFraction * r.estimate;
  }
}

} // namespace detail

// Root-mean-square coupled L^2 error at t_eval, per rung, with a rate fit
// against the swept scale.
inline ErrorTable strong_error_sweep(const McProblem& p, const ResolutionLadder& lad,
                                     double t_eval, const SweepSettings& s) {
  if (!(t_eval > 0.0) || t_eval > p.horizon * (1.0 + 1e-12))
    throw std::invalid_argument("strong_error_sweep: t_eval must lie in (0, T]");
  detail::SweepFrame fr = detail::open_sweep(
      "strong", p, lad, t_eval, s, "|teval=" + detail::shortest_double(t_eval));
  const int R = static_cast<int>(fr.engines.size());
  const long n = s.n_samples;
  std::vector<double> d2(static_cast<std::size_t>(n) * static_cast<std::size_t>(R));
  std::vector<std::uint64_t> hashes(static_cast<std::size_t>(n));
  std::vector<long> dropped(static_cast<std::size_t>(n), 0);
  parallel_samples(n, s.n_workers, [&](long si) {
    RngStream rng(s.seed, static_cast<std::uint64_t>(si));
    JumpPath path = sample_jump_path(p.model, rng, p.horizon);
    std::uint64_t before = path_digest(path);
    long drop = 0;
    Eigen::VectorXd uc = fr.cmp.run(p, path, t_eval, nullptr, drop);
    for (int r = 0; r < R; ++r) {
      Eigen::VectorXd ur = fr.engines[static_cast<std::size_t>(r)].run(
          p, path, t_eval, nullptr, drop);
      double d = detail::state_distance(fr.engines[static_cast<std::size_t>(r)],
                                        ur, fr.cmp, uc);
      d2[static_cast<std::size_t>(si * R + r)] = d * d;
    }
    if (path_digest(path) != before)
      throw std::logic_error("coupling violated: the sample's path changed");
    hashes[static_cast<std::size_t>(si)] = before;
    dropped[static_cast<std::size_t>(si)] = drop;
  });
  for (int r = 0; r < R; ++r) {
    detail::MeanSE m = detail::reduce_column(d2, n, R, r);
    double est = std::sqrt(std::max(m.mean, 0.0));
    double se = est > 0.0 ? m.se / (2.0 * est) : 0.0;
    const Rung& rg = lad.rungs[static_cast<std::size_t>(r)];
    fr.table.rows.push_back({rg.h, rg.dt, "strong_rms", est, se, n, false});
  }
  detail::finish_table(fr.table, hashes, dropped);
  return fr.table;
}

// Coupled weak-error sweep: per rung, |mean of F(rung) - F(comparator)|.
inline ErrorTable weak_error_sweep(const McProblem& p, const ResolutionLadder& lad,
                                   const PathFunctional& f, const SweepSettings& s) {
  detail::SweepFrame fr = detail::open_sweep(
      "weak", p, lad, p.horizon, s,
      "|F=" + hex16(detail::functional_fingerprint(f)));
  const int R = static_cast<int>(fr.engines.size());
  const long n = s.n_samples;
  std::vector<Eigen::VectorXd> cmp_pairs;
  std::vector<std::vector<Eigen::VectorXd>> rung_pairs(static_cast<std::size_t>(R));
  for (const auto& field : f.fields()) {
    cmp_pairs.push_back(fr.cmp.pairing(field.psi));
    for (int r = 0; r < R; ++r)
      rung_pairs[static_cast<std::size_t>(r)].push_back(
          fr.engines[static_cast<std::size_t>(r)].pairing(field.psi));
  }
  std::vector<double> diffs(static_cast<std::size_t>(n) * static_cast<std::size_t>(R));
  std::vector<double> cmp_vals(static_cast<std::size_t>(n));
  std::vector<std::uint64_t> hashes(static_cast<std::size_t>(n));
  std::vector<long> dropped(static_cast<std::size_t>(n), 0);
  parallel_samples(n, s.n_workers, [&](long si) {
    RngStream rng(s.seed, static_cast<std::uint64_t>(si));
    JumpPath path = sample_jump_path(p.model, rng, p.horizon);
    std::uint64_t before = path_digest(path);
    long drop = 0;
    MeasureProbeAccumulator cacc(f, cmp_pairs, fr.cmp.dt, fr.cmp.steps);
    fr.cmp.run(p, path, -1.0, &cacc, drop);
    double fc = f.phi(cacc.scalars());
    cmp_vals[static_cast<std::size_t>(si)] = fc;
    for (int r = 0; r < R; ++r) {
      const auto& eng = fr.engines[static_cast<std::size_t>(r)];
      MeasureProbeAccumulator racc(f, rung_pairs[static_cast<std::size_t>(r)],
                                   eng.dt, eng.steps);
      eng.run(p, path, -1.0, &racc, drop);
      diffs[static_cast<std::size_t>(si * R + r)] = f.phi(racc.scalars()) - fc;
    }
    if (path_digest(path) != before)
      throw std::logic_error("coupling violated: the sample's path changed");
    hashes[static_cast<std::size_t>(si)] = before;
    dropped[static_cast<std::size_t>(si)] = drop;
  });
  for (int r = 0; r < R; ++r) {
    detail::MeanSE m = detail::reduce_column(diffs, n, R, r);
    const Rung& rg = lad.rungs[static_cast<std::size_t>(r)];
    fr.table.rows.push_back(
        {rg.h, rg.dt, "weak_mean_abs", std::abs(m.mean), m.se, n, false});
  }
  detail::MeanSE cv = detail::reduce_column(cmp_vals, n, 1, 0);
  fr.table.comparator_value = cv.mean;
  fr.table.comparator_se = cv.se;
  detail::finish_table(fr.table, hashes, dropped);
  return fr.table;
}

// ---- covariance sweep -------------------------------------------------------

struct CovarianceSettings {
  double t1 = 0.0;
  double t2 = 0.0;
  Eigen::VectorXd psi1, psi2;
  int n_batches = 20; // batch-means blocks for the standard error
};

// Error of the estimated two-time covariance Cov(<X(t1),psi1>, <X(t2),psi2>)
// against the comparator's, per rung.  The covariance on each resolution
// combines three sample means (product and both factors); standard errors
// come from batch means over a fixed sample partition.
inline ErrorTable covariance_error_sweep(const McProblem& p,
                                         const ResolutionLadder& lad,
                                         const CovarianceSettings& cs,
                                         const SweepSettings& s) {
  if (!(cs.t1 > 0.0) || !(cs.t2 > 0.0) || cs.t1 > p.horizon * (1.0 + 1e-12) ||
      cs.t2 > p.horizon * (1.0 + 1e-12))
    throw std::invalid_argument("covariance sweep: times must lie in (0, T]");
  if (cs.n_batches < 2)
    throw std::invalid_argument("covariance sweep: need at least 2 batches");
  PathFunctional f = covariance_triple(cs.t1, cs.t2, cs.psi1, cs.psi2)[0];
  detail::SweepFrame fr = detail::open_sweep(
      "covariance", p, lad, std::max(cs.t1, cs.t2), s,
      "|F=" + hex16(detail::functional_fingerprint(f)) +
          "|B=" + std::to_string(cs.n_batches));
  if (s.n_samples < 2 * cs.n_batches)
    throw std::invalid_argument("covariance sweep: need >= 2 samples per batch");
  const int R = static_cast<int>(fr.engines.size());
  const int C = R + 1; // comparator occupies the last column
  const long n = s.n_samples;
  std::vector<Eigen::VectorXd> cmp_pairs;
  std::vector<std::vector<Eigen::VectorXd>> rung_pairs(static_cast<std::size_t>(R));
  for (const auto& field : f.fields()) {
    cmp_pairs.push_back(fr.cmp.pairing(field.psi));
    for (int r = 0; r < R; ++r)
      rung_pairs[static_cast<std::size_t>(r)].push_back(
          fr.engines[static_cast<std::size_t>(r)].pairing(field.psi));
  }
  std::vector<double> z1(static_cast<std::size_t>(n) * static_cast<std::size_t>(C));
  std::vector<double> z2(z1.size());
  std::vector<std::uint64_t> hashes(static_cast<std::size_t>(n));
  std::vector<long> dropped(static_cast<std::size_t>(n), 0);
  parallel_samples(n, s.n_workers, [&](long si) {
    RngStream rng(s.seed, static_cast<std::uint64_t>(si));
    JumpPath path = sample_jump_path(p.model, rng, p.horizon);
    std::uint64_t before = path_digest(path);
    long drop = 0;
    auto record = [&](const detail::ResolutionEngine& eng,
                      const std::vector<Eigen::VectorXd>& pairs, int col) {
      MeasureProbeAccumulator acc(f, pairs, eng.dt, eng.steps);
      eng.run(p, path, -1.0, &acc, drop);
      z1[static_cast<std::size_t>(si * C + col)] = acc.scalars()[0];
      z2[static_cast<std::size_t>(si * C + col)] = acc.scalars()[1];
    };
    for (int r = 0; r < R; ++r)
      record(fr.engines[static_cast<std::size_t>(r)],
             rung_pairs[static_cast<std::size_t>(r)], r);
    record(fr.cmp, cmp_pairs, R);
    if (path_digest(path) != before)
      throw std::logic_error("coupling violated: the sample's path changed");
    hashes[static_cast<std::size_t>(si)] = before;
    dropped[static_cast<std::size_t>(si)] = drop;
  });
  auto cov_of = [&](int col, long lo, long hi) {
    double s1 = 0.0, s2 = 0.0, s12 = 0.0;
    for (long i = lo; i < hi; ++i) {
      double a = z1[static_cast<std::size_t>(i * C + col)];
      double b = z2[static_cast<std::size_t>(i * C + col)];
      s1 += a;
      s2 += b;
      s12 += a * b;
    }
    double m = static_cast<double>(hi - lo);
    return s12 / m - (s1 / m) * (s2 / m);
  };
  const int B = cs.n_batches;
  auto batch_bounds = [&](int b) {
    long base = n / B, rem = n % B;
    long lo = b * base + std::min<long>(b, rem);
    long hi = lo + base + (b < rem ? 1 : 0);
    return std::pair<long, long>(lo, hi);
  };
  double cov_cmp = cov_of(R, 0, n);
  std::vector<double> cmp_batches(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    auto [lo, hi] = batch_bounds(b);
    cmp_batches[static_cast<std::size_t>(b)] = cov_of(R, lo, hi);
  }
  auto batch_sd = [&](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1) /
                     static_cast<double>(v.size()));
  };
  for (int r = 0; r < R; ++r) {
    double err = std::abs(cov_of(r, 0, n) - cov_cmp);
    std::vector<double> vb(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
      auto [lo, hi] = batch_bounds(b);
      vb[static_cast<std::size_t>(b)] =
          cov_of(r, lo, hi) - cmp_batches[static_cast<std::size_t>(b)];
    }
    const Rung& rg = lad.rungs[static_cast<std::size_t>(r)];
    fr.table.rows.push_back(
        {rg.h, rg.dt, "cov_abs_err", err, batch_sd(vb), n, false});
  }
  fr.table.comparator_value = cov_cmp;
  fr.table.comparator_se = batch_sd(cmp_batches);
  detail::finish_table(fr.table, hashes, dropped);
  return fr.table;
}

// ---- weak / strong slope ratio ----------------------------------------------

struct RatioReport {
  bool defined = false;
  double strong_slope = 0.0;
  double weak_slope = 0.0;
  double ratio = 0.0;
  std::string note;
};

// The headline comparison: fitted weak slope over fitted strong slope for
// sweeps of the same mode.  Undefined when either fit failed or the strong
// slope sits at the noise floor.
inline RatioReport weak_strong_ratio(const ErrorTable& strong,
                                     const ErrorTable& weak) {
  RatioReport rep;
  rep.strong_slope = strong.fit.slope;
  rep.weak_slope = weak.fit.slope;
  if (strong.mode != weak.mode) {
    rep.note = "undefined: sweeps refine different variables";
    return rep;
  }
  if (!strong.fit.ok) {
    rep.note = "undefined: strong fit unusable (" +
               (strong.fit.note.empty() ? std::string("no fit") : strong.fit.note) +
               ")";
    return rep;
  }
  if (!weak.fit.ok) {
    rep.note = "undefined: weak fit unusable (" +
               (weak.fit.note.empty() ? std::string("no fit") : weak.fit.note) + ")";
    return rep;
  }
  if (std::abs(rep.strong_slope) < 0.05) {
    rep.note = "undefined: strong slope at the noise floor";
    return rep;
  }
  rep.ratio = rep.weak_slope / rep.strong_slope;
  rep.defined = true;
  return rep;
}

} // namespace levyheat
