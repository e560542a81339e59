#pragma once
// Line-oriented experiment configuration: [section] headers and key = value
// pairs, hand-editable and diffable.  '#' or ';' start a comment.  Numeric
// values accept plain decimals and exact fractions ("1/4096"), so dyadic
// steps survive the text round trip bit for bit.  Every violation is
// reported with the offending section.key named.

#include <levyheat/functionals.hpp>
#include <levyheat/mc.hpp>

#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace levyheat {

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline double parse_number(const std::string& raw, const std::string& key) {
  std::string s = trim(raw);
  auto bad = [&] {
    throw ConfigError("config: " + key + ": not a number: '" + raw + "'");
  };
  auto plain = [&](const std::string& t) {
    if (t.empty()) bad();
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(t, &used);
    } catch (const std::exception&) {
      bad();
    }
    if (used != t.size()) bad();
    return v;
  };
  auto slash = s.find('/');
  if (slash == std::string::npos) return plain(s);
  double num = plain(trim(s.substr(0, slash)));
  double den = plain(trim(s.substr(slash + 1)));
  if (den == 0.0) bad();
  return num / den;
}

inline long parse_integer(const std::string& raw, const std::string& key) {
  double v = parse_number(raw, key);
  long n = std::lround(v);
  if (std::abs(v - static_cast<double>(n)) > 1e-9)
    throw ConfigError("config: " + key + ": expected an integer, got '" + raw + "'");
  return n;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  return out;
}

} // namespace detail

// Typed view of one experiment file.  Defaults reproduce the standard
// benchmark problem: beta = 1/2 noise with rate 50 over 512 modes, drift
// 0.5 sin(u), parabola initial value, unit horizon.
struct ExperimentConfig {
  // [problem]
  double beta = 0.5;
  double horizon = 1.0;
  std::string drift_name = "sine"; // sine | zero
  double drift_amplitude = 0.5;
  std::string x0_name = "parabola"; // parabola | zero
  double x0_amplitude = 1.0;
  // [noise]
  double rate = 50.0;
  double alpha = 1.1;
  int k_noise = 512;
  std::string amplitude_law = "rademacher";
  // [discretization] - defaults give the benchmark space sweep: mesh rungs
  // against a step-matched finer mesh, all at the pinned step.
  std::string backend = "fem";                   // fem | spectral
  std::string sweep = "space";                   // space | time | diagonal
  std::vector<int> resolutions = {4, 8, 16, 32}; // space/diagonal rungs
  std::vector<double> steps;                     // time-sweep step list
  int resolution_pin = 0;                        // time sweep: fixed resolution
  double k_pin = 1.0 / 2048;                     // space sweep: fixed step
  double diag_ratio = 1.0;                       // diagonal sweep: dt / h^2
  std::string comparator;        // scheme | mild ("" = per-sweep default)
  int comparator_resolution = 0;
  double comparator_dt = 0.0;
  int reference_modes = 0;
  int reference_substeps = 0;
  // [mc]
  long n_samples = 1000;
  std::uint64_t seed = 1;
  int workers = 0; // 0 = available parallelism
  int gate_samples = 8;
  bool skip_gate = false;
  // [functional]
  std::string functional_name = "linear"; // linear | product | smoothed
  int probe_mode = 1;
  int probe_mode2 = 1;
  double t1 = 0.0; // 0 = horizon
  double t2 = 0.0;
  double eps = 0.1;
  int n_batches = 20;
  // [malliavin]
  double p_exponent = 2.0;
  double q_exponent = 1.5;
  int malliavin_modes = 16;
  int malliavin_steps = 64;
  long malliavin_pairs = 2000;
  // [output]
  std::string out_dir = ".";

  // -- assembly into library objects ---------------------------------------

  McProblem problem() const {
    Drift f = drift_name == "zero" || drift_amplitude == 0.0
                  ? Drift::zero()
                  : Drift::sine(drift_amplitude);
    double x0 = x0_name == "zero" ? 0.0 : x0_amplitude;
    return McProblem{LevyModel(rate, k_noise, alpha, beta), f, InitialData(x0),
                     horizon};
  }

  BackendKind backend_kind() const {
    return backend == "spectral" ? BackendKind::spectral : BackendKind::fem;
  }

  ResolutionLadder ladder() const {
    ResolutionLadder lad;
    if (sweep == "space") {
      lad = ResolutionLadder::space_ladder(backend_kind(), resolutions, k_pin);
    } else if (sweep == "time") {
      lad = ResolutionLadder::time_ladder(backend_kind(), resolution_pin, steps);
    } else {
      lad = ResolutionLadder::diagonal_ladder(backend_kind(), resolutions,
                                              diag_ratio);
    }
    std::string kind = comparator.empty()
                           ? (sweep == "space" ? "scheme" : "mild")
                           : comparator;
    if (kind == "scheme") {
      int res = comparator_resolution > 0 ? comparator_resolution
                                          : 8 * lad.max_resolution();
      double dt = comparator_dt > 0.0 ? comparator_dt : default_comparator_dt(lad);
      lad.with_scheme_comparator(res, dt);
    } else {
      int modes = reference_modes > 0
                      ? reference_modes
                      : std::max(k_noise, 2 * lad.max_resolution());
      int sub = reference_substeps > 0
                    ? reference_substeps
                    : 4 * static_cast<int>(std::llround(horizon / lad.min_dt()));
      lad.with_mild_reference(modes, sub);
    }
    return lad;
  }

  SweepSettings sweep_settings() const {
    SweepSettings s;
    s.n_samples = n_samples;
    s.seed = seed;
    s.n_workers = workers > 0
                      ? workers
                      : std::max(1u, std::thread::hardware_concurrency());
    s.gate_samples = gate_samples;
    s.skip_gate = skip_gate;
    return s;
  }

  PathFunctional functional() const {
    double u = t1 > 0.0 ? t1 : horizon;
    double v = t2 > 0.0 ? t2 : horizon;
    Eigen::VectorXd psi1 = probe(probe_mode);
    Eigen::VectorXd psi2 = probe(probe_mode2);
    if (functional_name == "product")
      return PathFunctional::bilinear_product(TimeMeasure::dirac(u), psi1,
                                              TimeMeasure::dirac(v), psi2);
    if (functional_name == "smoothed")
      return PathFunctional::smoothed_quadratic(
          {{TimeMeasure::dirac(u), psi1}, {TimeMeasure::dirac(v), psi2}}, eps);
    return PathFunctional::linear(TimeMeasure::dirac(u), psi1);
  }

  CovarianceSettings covariance() const {
    CovarianceSettings cs;
    cs.t1 = t1 > 0.0 ? t1 : horizon;
    cs.t2 = t2 > 0.0 ? t2 : horizon;
    cs.psi1 = probe(probe_mode);
    cs.psi2 = probe(probe_mode2);
    cs.n_batches = n_batches;
    return cs;
  }

  // -- identity -------------------------------------------------------------

  std::string canonical() const {
    std::string s = problem().canonical();
    s += "|sweep=" + sweep + "|" + ladder().canonical();
    s += "|functional=" + functional_name +
         ":" + std::to_string(probe_mode) + "," + std::to_string(probe_mode2);
    s += "|t1=" + detail::shortest_double(t1) +
         "|t2=" + detail::shortest_double(t2);
    s += "|eps=" + detail::shortest_double(eps);
    s += "|n=" + std::to_string(n_samples);
    s += "|pq=" + detail::shortest_double(p_exponent) + "," +
         detail::shortest_double(q_exponent);
    return s;
  }

  std::uint64_t config_hash() const { return fnv1a64(canonical()); }

  // -- validation -----------------------------------------------------------

  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
    if (!(beta > 0.0) || beta > 1.0)
      fail("problem.beta must lie in (0, 1], got " + detail::shortest_double(beta));
    if (!(horizon > 0.0)) fail("problem.T must be > 0");
    if (drift_name != "sine" && drift_name != "zero")
      fail("problem.drift must be 'sine' or 'zero', got '" + drift_name + "'");
    if (x0_name != "parabola" && x0_name != "zero")
      fail("problem.x0 must be 'parabola' or 'zero', got '" + x0_name + "'");
    if (!(rate > 0.0)) fail("noise.rate must be > 0");
    if (!(alpha > 1.0)) fail("noise.alpha must be > 1");
    if (k_noise < 1) fail("noise.k_noise must be >= 1");
    if (amplitude_law != "rademacher")
      fail("noise.amplitude_law: only the symmetric 'rademacher' law is "
           "supported, got '" +
           amplitude_law + "'");
    if (backend != "fem" && backend != "spectral")
      fail("discretization.backend must be 'fem' or 'spectral', got '" +
           backend + "'");
    if (sweep != "space" && sweep != "time" && sweep != "diagonal")
      fail("discretization.sweep must be 'space', 'time', or 'diagonal', got '" +
           sweep + "'");
    if (sweep == "time") {
      if (steps.empty()) fail("discretization.steps: a time sweep needs steps");
      if (resolution_pin < 1)
        fail("discretization.resolution: a time sweep needs the pinned resolution");
      // Pinning policy for time sweeps: every mark must be resolved on the
      // pinned grid, else truncation noise contaminates the time rate.
      if (k_noise > resolution_pin)
        fail("noise.k_noise must not exceed discretization.resolution on a "
             "time sweep (marks would be dropped); got k_noise=" +
             std::to_string(k_noise) + ", resolution=" +
             std::to_string(resolution_pin));
    } else {
      if (resolutions.empty())
        fail("discretization.rungs: a " + sweep + " sweep needs rung resolutions");
      if (sweep == "space" && !(k_pin > 0.0))
        fail("discretization.k_pin: a space sweep needs the pinned step");
      if (sweep == "diagonal" && !(diag_ratio > 0.0))
        fail("discretization.diag_ratio must be > 0");
      int max_res = 0;
      for (int r : resolutions) max_res = std::max(max_res, r);
      // Truncation policy: the noise must stay rougher than the finest grid
      // (K_noise >= 4 / h_min), else the sweep resolves the noise exactly
      // and measures nothing.
      if (k_noise < 4 * max_res)
        fail("noise.k_noise must be at least 4/h_min = " +
             std::to_string(4 * max_res) + " for a " + sweep +
             " sweep, got " + std::to_string(k_noise));
    }
    if (!comparator.empty() && comparator != "scheme" && comparator != "mild")
      fail("discretization.comparator must be 'scheme' or 'mild', got '" +
           comparator + "'");
    if (n_samples < 2) fail("mc.n_samples must be >= 2");
    if (workers < 0) fail("mc.workers must be >= 0");
    if (gate_samples < 2) fail("mc.gate_samples must be >= 2");
    if (functional_name != "linear" && functional_name != "product" &&
        functional_name != "smoothed")
      fail("functional.name must be 'linear', 'product', or 'smoothed', got '" +
           functional_name + "'");
    if (probe_mode < 0 || probe_mode2 < 0)
      fail("functional.mode indices must be >= 0 (0 selects the flat probe)");
    if (t1 < 0.0 || t1 > horizon || t2 < 0.0 || t2 > horizon)
      fail("functional.t1/t2 must lie in [0, T] (0 selects T)");
    if (!(eps >= 0.0)) fail("functional.eps must be >= 0");
    if (n_batches < 2) fail("functional.batches must be >= 2");
    if (!(p_exponent >= 1.0)) fail("malliavin.p must be >= 1");
    if (beta < 1.0) {
      double qmax = 2.0 / (1.0 - beta);
      if (!(q_exponent > 1.0) || !(q_exponent < qmax))
        fail("malliavin.q out of the admissible range (1, " +
             detail::shortest_double(qmax) + "), got " +
             detail::shortest_double(q_exponent));
    } else if (!(q_exponent > 1.0)) {
      fail("malliavin.q must be > 1");
    }
    if (malliavin_modes < 1 || malliavin_steps < 1 || malliavin_pairs < 2)
      fail("malliavin.modes/steps/pairs must be positive (pairs >= 2)");
    // Ladder coherence (nesting, strict refinement, step divisibility).
    try {
      ladder().validate(horizon);
    } catch (const std::invalid_argument& e) {
      fail(std::string("discretization: ") + e.what());
    }
  }

private:
  // mode >= 1 selects a single eigenmode; mode 0 selects an equal-weight
  // spread over the leading 64 modes.  The spread keeps unresolved-mode
  // content in the read-out on every benchmark mesh, so quadratic
  // functionals see the noise-truncation error rather than only the
  // smooth h^2 bias of the resolved modes.
  Eigen::VectorXd probe(int mode) const {
    if (mode == 0) return flat_probe(std::min(k_noise, 64));
    Eigen::VectorXd v = Eigen::VectorXd::Zero(mode);
    v[mode - 1] = 1.0;
    return v;
  }

  double default_comparator_dt(const ResolutionLadder& lad) const {
    return lad.mode == SweepMode::space ? lad.rungs.at(0).dt
                                        : lad.min_dt() / 4.0;
  }
};

// Parses the documented text format.  Unknown sections or keys are errors
// that name the offender; values are re-validated as a whole afterwards.
inline ExperimentConfig parse_config(std::istream& is) {
  ExperimentConfig cfg;
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string s = detail::trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']')
        throw ConfigError("config: line " + std::to_string(lineno) +
                          ": malformed section header '" + s + "'");
      section = detail::trim(s.substr(1, s.size() - 2));
      if (section != "problem" && section != "noise" &&
          section != "discretization" && section != "mc" &&
          section != "functional" && section != "malliavin" &&
          section != "output")
        throw ConfigError("config: unknown section '[" + section + "]'");
      continue;
    }
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) +
                        ": expected 'key = value', got '" + s + "'");
    std::string key = detail::trim(s.substr(0, eq));
    std::string val = detail::trim(s.substr(eq + 1));
    std::string qual = section + "." + key;
    auto num = [&] { return detail::parse_number(val, qual); };
    auto integer = [&] { return detail::parse_integer(val, qual); };
    auto int_list = [&] {
      std::vector<int> out;
      for (const auto& item : detail::split_list(val))
        out.push_back(static_cast<int>(detail::parse_integer(item, qual)));
      return out;
    };
    auto num_list = [&] {
      std::vector<double> out;
      for (const auto& item : detail::split_list(val))
        out.push_back(detail::parse_number(item, qual));
      return out;
    };

    if (qual == "problem.beta") cfg.beta = num();
    else if (qual == "problem.T") cfg.horizon = num();
    else if (qual == "problem.drift") cfg.drift_name = val;
    else if (qual == "problem.drift_amplitude") cfg.drift_amplitude = num();
    else if (qual == "problem.x0") cfg.x0_name = val;
    else if (qual == "problem.x0_amplitude") cfg.x0_amplitude = num();
    else if (qual == "noise.rate") cfg.rate = num();
    else if (qual == "noise.alpha") cfg.alpha = num();
    else if (qual == "noise.k_noise") cfg.k_noise = static_cast<int>(integer());
    else if (qual == "noise.amplitude_law") cfg.amplitude_law = val;
    else if (qual == "discretization.backend") cfg.backend = val;
    else if (qual == "discretization.sweep") cfg.sweep = val;
    else if (qual == "discretization.rungs") cfg.resolutions = int_list();
    else if (qual == "discretization.steps") cfg.steps = num_list();
    else if (qual == "discretization.resolution")
      cfg.resolution_pin = static_cast<int>(integer());
    else if (qual == "discretization.k_pin") cfg.k_pin = num();
    else if (qual == "discretization.diag_ratio") cfg.diag_ratio = num();
    else if (qual == "discretization.comparator") cfg.comparator = val;
    else if (qual == "discretization.comparator_resolution")
      cfg.comparator_resolution = static_cast<int>(integer());
    else if (qual == "discretization.comparator_dt") cfg.comparator_dt = num();
    else if (qual == "discretization.reference_modes")
      cfg.reference_modes = static_cast<int>(integer());
    else if (qual == "discretization.reference_substeps")
      cfg.reference_substeps = static_cast<int>(integer());
    else if (qual == "mc.n_samples") cfg.n_samples = integer();
    else if (qual == "mc.seed") cfg.seed = static_cast<std::uint64_t>(integer());
    else if (qual == "mc.workers") cfg.workers = static_cast<int>(integer());
    else if (qual == "mc.gate_samples")
      cfg.gate_samples = static_cast<int>(integer());
    else if (qual == "mc.skip_gate")
      cfg.skip_gate = val == "true" || val == "1" || val == "yes";
    else if (qual == "functional.name") cfg.functional_name = val;
    else if (qual == "functional.mode")
      cfg.probe_mode = static_cast<int>(integer());
    else if (qual == "functional.mode2")
      cfg.probe_mode2 = static_cast<int>(integer());
    else if (qual == "functional.t1") cfg.t1 = num();
    else if (qual == "functional.t2") cfg.t2 = num();
    else if (qual == "functional.eps") cfg.eps = num();
    else if (qual == "functional.batches")
      cfg.n_batches = static_cast<int>(integer());
    else if (qual == "malliavin.p") cfg.p_exponent = num();
    else if (qual == "malliavin.q") cfg.q_exponent = num();
    else if (qual == "malliavin.modes")
      cfg.malliavin_modes = static_cast<int>(integer());
    else if (qual == "malliavin.steps")
      cfg.malliavin_steps = static_cast<int>(integer());
    else if (qual == "malliavin.pairs") cfg.malliavin_pairs = integer();
    else if (qual == "output.dir") cfg.out_dir = val;
    else
      throw ConfigError("config: unknown key '" + qual + "'");
  }
  return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  return parse_config(in);
}

} // namespace levyheat
