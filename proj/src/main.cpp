// levyheat: command-line front end of the jump-noise heat-equation laboratory.
//
// Reads one experiment file (or the built-in defaults), dispatches a run
// mode, and writes deterministic text artifacts: identical config + seed
// give byte-identical files, and every artifact starts with a comment line
// carrying the config hash and the seed.
//
// Exit codes: 0 success; 2 validation error (bad config, bad flags);
// 3 statistical failure (comparator gate, voided fit, undefined ratio);
// 4 identity-check failure (verification report with a failing line).

#include <CLI11.hpp>

#include <levyheat/config.hpp>
#include <levyheat/fem.hpp>
#include <levyheat/malliavin.hpp>
#include <levyheat/spectral.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace levyheat;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 2;
constexpr int kStatistical = 3;
constexpr int kIdentity = 4;

// Output directory precedence: --out flag, then this variable, then the
// [output] dir key of the experiment file.
constexpr const char* kOutEnvVar = "LEVYHEAT_OUT";

std::string fmt(double v) { return detail::shortest_double(v); }

std::string provenance_line(const ExperimentConfig& cfg) {
  return "# config=" + hex16(cfg.config_hash()) +
         " seed=" + std::to_string(cfg.seed) + "\n";
}

void write_artifact(const fs::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open output file '" + path.string() + "'");
  os << content;
  if (!os) throw ConfigError("failed writing '" + path.string() + "'");
}

fs::path ensure_out_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec)
    throw ConfigError("cannot create output directory '" + dir +
                      "': " + ec.message());
  return p;
}

// ---- verification report lines ----------------------------------------------

// One structured check: `cmp` names the predicate relating lhs and rhs.
//   within: |lhs - rhs| <= tol      below: lhs <= rhs + tol
//   equal:  lhs == rhs exactly (tol = 0)
struct CheckLine {
  std::string name;
  std::string cmp;
  double lhs = 0.0;
  double rhs = 0.0;
  double tol = 0.0;
  bool pass = false;
};

CheckLine check_within(std::string name, double lhs, double rhs, double tol) {
  return {std::move(name), "within", lhs, rhs, tol, std::abs(lhs - rhs) <= tol};
}

CheckLine check_below(std::string name, double lhs, double rhs, double tol) {
  return {std::move(name), "below", lhs, rhs, tol, lhs <= rhs + tol};
}

CheckLine check_equal(std::string name, double lhs, double rhs) {
  return {std::move(name), "equal", lhs, rhs, 0.0, lhs == rhs};
}

std::string render_report(const ExperimentConfig& cfg,
                          const std::vector<CheckLine>& lines) {
  std::ostringstream os;
  os << provenance_line(cfg);
  os << "# check cmp lhs rhs tol status\n";
  for (const auto& c : lines)
    os << c.name << " cmp=" << c.cmp << " lhs=" << fmt(c.lhs)
       << " rhs=" << fmt(c.rhs) << " tol=" << fmt(c.tol)
       << " status=" << (c.pass ? "pass" : "fail") << "\n";
  return os.str();
}

int emit_report(const ExperimentConfig& cfg, const fs::path& out,
                const std::string& filename,
                const std::vector<CheckLine>& lines) {
  std::string report = render_report(cfg, lines);
  write_artifact(out / filename, report);
  std::cout << report;
  int failures = 0;
  for (const auto& c : lines)
    if (!c.pass) ++failures;
  std::cout << "wrote " << (out / filename).string() << " (" << lines.size()
            << " checks, " << failures << " failing)\n";
  return failures == 0 ? kOk : kIdentity;
}

// ---- shared sweep plumbing --------------------------------------------------

void print_table(const ErrorTable& tab) {
  std::cout << tab.sweep << " error, " << to_string(tab.mode)
            << " sweep, pinned " << tab.pinned << ", "
            << (tab.rows.empty() ? 0 : tab.rows.front().n_samples)
            << " coupled paths per rung\n";
  for (const auto& r : tab.rows) {
    std::cout << "  h=" << fmt(r.h) << " k=" << fmt(r.k)
              << " estimate=" << fmt(r.estimate) << " se=" << fmt(r.se);
    if (r.voided) std::cout << "  [voided: se > 0.3 * estimate]";
    std::cout << "\n";
  }
  if (std::isfinite(tab.comparator_value))
    std::cout << "  comparator value=" << fmt(tab.comparator_value)
              << " se=" << fmt(tab.comparator_se) << "\n";
  std::cout << "  gate: " << (tab.gate_note.empty() ? "none" : tab.gate_note)
            << "\n";
  if (tab.warning_count > 0)
    std::cout << "  projection warnings: " << tab.warning_count
              << " marks fell outside a resolution's range\n";
  if (tab.fit.ok) {
    std::cout << "  fit: slope=" << fmt(tab.fit.slope)
              << " r2=" << fmt(tab.fit.r2);
    if (!tab.fit.excluded.empty()) {
      std::cout << " excluded=";
      for (std::size_t i = 0; i < tab.fit.excluded.size(); ++i)
        std::cout << (i ? "," : "") << tab.fit.excluded[i];
    }
    std::cout << "\n";
  } else {
    std::cout << "  fit unusable: " << tab.fit.note << "\n";
  }
}

void write_table_artifacts(const ExperimentConfig& cfg, const ErrorTable& tab,
                           const fs::path& out, const std::string& stem) {
  {
    std::ostringstream os;
    os << provenance_line(cfg);
    write_error_table_csv(os, tab);
    write_artifact(out / (stem + ".csv"), os.str());
  }
  {
    std::ostringstream os;
    os << provenance_line(cfg);
    write_plot_data(os, tab);
    write_artifact(out / (stem + "_plot.csv"), os.str());
  }
  std::cout << "wrote " << (out / (stem + ".csv")).string() << " and "
            << (out / (stem + "_plot.csv")).string() << "\n";
}

// Exit policy for a finished sweep: an unusable fit is a statistical
// failure, a usable fit (even with voided rungs reported) is success.
int table_exit(const ErrorTable& tab) {
  if (!tab.fit.ok) {
    std::cout << "statistical void: " << tab.fit.note << "\n";
    return kStatistical;
  }
  return kOk;
}

// ---- subcommands ------------------------------------------------------------

int cmd_describe(const ExperimentConfig& cfg) {
  McProblem p = cfg.problem();
  ResolutionLadder lad = cfg.ladder();
  SweepSettings s = cfg.sweep_settings();

  std::cout << "plan: " << to_string(lad.mode) << " sweep on "
            << to_string(lad.backend) << " backend, pinned "
            << pinned_description(lad) << "\n";
  std::cout << "problem: beta=" << fmt(cfg.beta) << " T=" << fmt(cfg.horizon)
            << " rate=" << fmt(cfg.rate) << " alpha=" << fmt(cfg.alpha)
            << " mark_modes=" << cfg.k_noise << " drift="
            << (p.drift.is_zero() ? "zero"
                                  : "sine:" + fmt(cfg.drift_amplitude))
            << " x0=" << cfg.x0_name << ":" << fmt(cfg.x0_amplitude) << "\n";

  auto steps_of = [&](double dt) {
    return static_cast<long long>(std::llround(cfg.horizon / dt));
  };
  int i = 0;
  for (const auto& r : lad.rungs) {
    std::cout << "rung " << ++i << ": resolution=" << r.resolution
              << " h=" << fmt(r.h) << " k=" << fmt(r.dt)
              << " steps=" << steps_of(r.dt);
    if (lad.mode == SweepMode::diagonal)
      std::cout << " k/h^2=" << fmt(r.dt / (r.h * r.h));
    std::cout << "\n";
  }

  double cmp_cost = 0.0;
  if (lad.comparator == ComparatorKind::scheme) {
    std::cout << "comparator: scheme resolution=" << lad.comparator_resolution
              << " k=" << fmt(lad.comparator_dt)
              << " steps=" << steps_of(lad.comparator_dt) << "\n";
    cmp_cost = static_cast<double>(steps_of(lad.comparator_dt)) *
               lad.comparator_resolution;
  } else {
    std::cout << "comparator: mild reference modes=" << lad.reference_modes
              << " substeps=" << lad.reference_substeps << "\n";
    cmp_cost = static_cast<double>(lad.reference_substeps) * lad.reference_modes;
  }

  std::cout << "mc: n_samples=" << s.n_samples << " workers=" << s.n_workers
            << " gate_samples=" << s.gate_samples
            << (s.skip_gate ? " (gate skipped)" : "") << "\n";
  std::cout << "functional: " << cfg.functional_name
            << " mode=" << cfg.probe_mode << " mode2=" << cfg.probe_mode2
            << " t1=" << fmt(cfg.t1 > 0.0 ? cfg.t1 : cfg.horizon)
            << " t2=" << fmt(cfg.t2 > 0.0 ? cfg.t2 : cfg.horizon) << "\n";

  double units = 0.0;
  for (const auto& r : lad.rungs)
    units += static_cast<double>(s.n_samples) * steps_of(r.dt) * r.resolution;
  units += static_cast<double>(s.n_samples) * cmp_cost;
  if (!s.skip_gate) units += 5.0 * s.gate_samples * cmp_cost;
  std::cout << "estimated work units: "
            << static_cast<long long>(std::llround(units))
            << " (state updates x state size)\n";
  return kOk;
}

int cmd_solve(const ExperimentConfig& cfg, const fs::path& out) {
  McProblem p = cfg.problem();
  ResolutionLadder lad = cfg.ladder();
  const Rung& rung = lad.finest();

  RngStream rng(cfg.seed, 0); // same stream as sample 0 of the sweeps
  JumpPath path = sample_jump_path(p.model, rng, p.horizon);

  TrajectoryRecorder rec;
  SchemeResult res;
  if (lad.backend == BackendKind::spectral) {
    SpectralSolver solver(rung.resolution);
    res = solver.run_scheme(rung.dt, p.horizon, p.drift, p.x0, path,
                            rec.observer());
  } else {
    FemSolver solver(rung.resolution);
    res = solver.run_scheme(rung.dt, p.horizon, p.drift, p.x0, path,
                            rec.observer());
  }

  TrajectoryRecord record;
  record.dt = rung.dt;
  record.states = rec.states;

  std::ostringstream os;
  os << provenance_line(cfg);
  write_trajectory(os, record);
  write_artifact(out / "trajectory.txt", os.str());

  std::cout << "solved " << to_string(lad.backend) << " resolution "
            << rung.resolution << ", " << res.steps << " steps of k="
            << fmt(rung.dt) << ", " << path.atoms.size() << " jumps ("
            << res.dropped_marks << " outside the resolved range)\n";
  std::cout << "wrote " << (out / "trajectory.txt").string() << " ("
            << record.states.size() << " rows, dim "
            << record.states.front().size() << ")\n";
  return kOk;
}

int cmd_strong(const ExperimentConfig& cfg, const fs::path& out) {
  ErrorTable tab = strong_error_sweep(cfg.problem(), cfg.ladder(), cfg.horizon,
                                      cfg.sweep_settings());
  print_table(tab);
  write_table_artifacts(cfg, tab, out, "strong_rates");
  return table_exit(tab);
}

int cmd_weak(const ExperimentConfig& cfg, const fs::path& out) {
  ErrorTable tab = weak_error_sweep(cfg.problem(), cfg.ladder(),
                                    cfg.functional(), cfg.sweep_settings());
  print_table(tab);
  write_table_artifacts(cfg, tab, out, "weak_rates");
  return table_exit(tab);
}

int cmd_covariance(const ExperimentConfig& cfg, const fs::path& out) {
  ErrorTable tab = covariance_error_sweep(cfg.problem(), cfg.ladder(),
                                          cfg.covariance(),
                                          cfg.sweep_settings());
  print_table(tab);
  write_table_artifacts(cfg, tab, out, "covariance");
  return table_exit(tab);
}

int cmd_ratio(const ExperimentConfig& cfg, const fs::path& out) {
  McProblem p = cfg.problem();
  ResolutionLadder lad = cfg.ladder();
  SweepSettings s = cfg.sweep_settings();

  ErrorTable strong = strong_error_sweep(p, lad, cfg.horizon, s);
  print_table(strong);
  write_table_artifacts(cfg, strong, out, "ratio_strong");

  ErrorTable weak = weak_error_sweep(p, lad, cfg.functional(), s);
  print_table(weak);
  write_table_artifacts(cfg, weak, out, "ratio_weak");

  RatioReport rep = weak_strong_ratio(strong, weak);
  std::ostringstream os;
  os << provenance_line(cfg);
  os << "strong_slope=" << fmt(rep.strong_slope) << "\n";
  os << "weak_slope=" << fmt(rep.weak_slope) << "\n";
  os << "ratio=" << (rep.defined ? fmt(rep.ratio) : "undefined") << "\n";
  os << "defined=" << (rep.defined ? 1 : 0) << "\n";
  if (!rep.note.empty()) os << "note=" << rep.note << "\n";
  write_artifact(out / "ratio_report.txt", os.str());

  if (rep.defined) {
    std::cout << "weak/strong slope ratio: " << fmt(rep.ratio) << " (strong "
              << fmt(rep.strong_slope) << ", weak " << fmt(rep.weak_slope)
              << ")\n";
  } else {
    std::cout << "weak/strong slope ratio undefined: " << rep.note << "\n";
  }
  std::cout << "wrote " << (out / "ratio_report.txt").string() << "\n";
  return rep.defined ? kOk : kStatistical;
}

int cmd_malliavin(const ExperimentConfig& cfg, const fs::path& out) {
  const int K = cfg.malliavin_modes;
  const int M = cfg.malliavin_steps;
  const double T = cfg.horizon;
  const double dt = T / M;
  McProblem base = cfg.problem();
  LevyModel model(cfg.rate, K, cfg.alpha, cfg.beta);
  SpectralSolver solver(K);
  SchemeDef def{K, dt, T, base.drift, base.x0};

  Eigen::VectorXd flat = Eigen::VectorXd::Constant(K, 1.0);
  auto mode_probe = [&](int j) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(K);
    v[j - 1] = 1.0;
    return v;
  };
  auto random_mode = [&](RngStream& rng) {
    return 1 + std::min(K - 1, static_cast<int>(rng.next_double() * K));
  };

  std::vector<CheckLine> lines;

  // The two independent routes to the add-one-jump state derivative agree.
  // The gap is measured against the perturbation's own scale at injection
  // (its post-resolvent mass): deep-decayed insertions would otherwise
  // compare cancellation noise against a vanishing derivative.
  {
    double worst = 0.0;
    RngStream rng(cfg.seed, 0x4d31);
    for (int i = 0; i < 20; ++i) {
      JumpPath path = sample_jump_path(model, rng, T);
      int cell = 1 + std::min(M - 1, static_cast<int>(rng.next_double() * M));
      int mode = random_mode(rng);
      double sgn = rng.next_double() < 0.5 ? -1.0 : 1.0;
      JumpAtom atom{(cell - 0.5) * dt, mode, sgn * model.sigma(mode)};
      StateDerivativePair pair =
          solution_derivative_routes(solver, def, path, atom);
      double injected =
          model.sigma(mode) / (1.0 + dt * solver.basis().lambda(mode - 1));
      double denom =
          std::max({pair.rerun.norm(), pair.recursion.norm(), injected});
      worst = std::max(worst, (pair.rerun - pair.recursion).norm() / denom);
    }
    lines.push_back(check_below("state-derivative-two-routes", worst, 0.0, 1e-10));
  }

  // Insertions after the read-out time leave the functional untouched.
  {
    double worst = 0.0;
    RngStream rng(cfg.seed, 0x4d33);
    WeakFunctional w =
        WeakFunctional::linear_terminal((M / 2) * dt, mode_probe(1));
    for (int i = 0; i < 5; ++i) {
      JumpPath path = sample_jump_path(model, rng, T);
      worst = std::max(worst, adaptedness_max_abs(model, solver, def, w, path));
    }
    lines.push_back(check_equal("adaptedness-after-readout", worst, 0.0));
  }

  // Finite-difference chain rule: D(g(F)) = g(F + DF) - g(F) to roundoff.
  {
    double worst = 0.0;
    RngStream rng(cfg.seed, 0x4d32);
    for (int i = 0; i < 5; ++i) {
      JumpPath path = sample_jump_path(model, rng, T);
      WeakFunctional w =
          i % 2 == 0 ? WeakFunctional::linear_terminal(T, flat)
                     : WeakFunctional::product_two_time((M / 2) * dt, flat, T,
                                                        flat);
      ScalarFunction g = i < 3 ? ScalarFunction::smooth_square()
                               : ScalarFunction::square();
      worst = std::max(worst,
                       chain_rule_max_gap(model, solver, def, w, g, path));
    }
    lines.push_back(check_below("chain-rule", worst, 0.0, 1e-12));
  }

  // Duality: E[F * integral(phi dN~)] = E[integral(DF * phi)] for four
  // integrand shapes against the nonlinear-drift scheme.
  {
    std::vector<DualityPair> pairs;
    {
      DualityPair pr;
      pr.name = "linear-flat";
      pr.functional = WeakFunctional::linear_terminal(T, flat);
      pr.blocks = {{0.0, (M / 2) * dt, {}, 2.0, false, false}};
      pairs.push_back(pr);
    }
    {
      DualityPair pr;
      pr.name = "two-time-product";
      pr.functional =
          WeakFunctional::product_two_time((M / 2) * dt, flat, T, flat);
      std::vector<int> modes = {1};
      if (K >= 2) modes.push_back(2);
      pr.blocks = {{(M / 4) * dt, (3 * (M / 4)) * dt, modes, 1.0, false, false}};
      pairs.push_back(pr);
    }
    {
      DualityPair pr;
      pr.name = "smooth-signed";
      pr.functional = WeakFunctional::smooth_terminal(T, flat);
      pr.blocks = {{0.0, T, {1}, 1.5, true, false}};
      pairs.push_back(pr);
    }
    {
      DualityPair pr;
      pr.name = "count-weighted";
      pr.functional =
          WeakFunctional::linear_terminal(T, mode_probe(std::min(2, K)));
      pr.blocks = {{(M / 2) * dt, T, {}, 1.0, false, true}};
      pairs.push_back(pr);
    }
    RngStream rng(cfg.seed, 0x4d34);
    auto stats = duality_check(model, solver, def, pairs,
                               static_cast<int>(cfg.malliavin_pairs), rng);
    for (const auto& st : stats)
      lines.push_back(check_within("duality-" + st.name, st.lhs_mean,
                                   st.rhs_mean, 3.0 * st.diff_se + 1e-12));
  }

  // Zero-drift linear case: the derivative side is deterministic and has a
  // closed form; the sample side must agree with it within noise.
  {
    SchemeDef def_zero{K, dt, T, Drift::zero(), base.x0};
    const double v = 0.8;
    DualityPair pr;
    pr.name = "closed-form";
    pr.functional = WeakFunctional::linear_terminal(T, mode_probe(1));
    pr.blocks = {{0.0, T, {1}, v, true, false}};
    RngStream rng(cfg.seed, 0x4d35);
    auto stats = duality_check(model, solver, def_zero, {pr},
                               static_cast<int>(cfg.malliavin_pairs), rng);
    const auto& st = stats.front();
    double r = 1.0 / (1.0 + dt * solver.basis().lambda(0));
    double geom = r * (1.0 - std::pow(r, M)) / (1.0 - r);
    double closed =
        model.rate() * model.mode_prob(1) * v * model.sigma(1) * dt * geom;
    lines.push_back(check_within("duality-closed-form", st.lhs_mean,
                                 st.rhs_mean, 3.0 * st.diff_se + 1e-12));
    lines.push_back(check_within("closed-form-derivative-side", st.rhs_mean,
                                 closed, 1e-8));
    lines.push_back(check_within("closed-form-sample-side", st.lhs_mean,
                                 closed, 3.0 * st.diff_se + 1e-12));
  }

  // The recorded derivative satisfies its integral equation to first order
  // in the reference substep: halving the substep halves the residual.
  // Insertions stay in the first half of the run so enough quadrature
  // panels remain, and the substep resolves the inserted mode's decay
  // layer (lambda * dt <= 1/8) so the first-order asymptotic shows.
  {
    int base = std::max(256, M);
    Drift f = Drift::sine(1.0);
    InitialData x0(1.0);
    RngStream rng(cfg.seed, 0x4d36);
    double worst_ratio = 2.0, worst_dev = 0.0;
    int probe_modes = std::min(K, 8);
    for (int i = 0; i < 5; ++i) {
      JumpPath path = sample_jump_path(model, rng, T);
      double frac = 0.5 * rng.next_double();
      int mode =
          1 + std::min(probe_modes - 1,
                       static_cast<int>(rng.next_double() * probe_modes));
      int sub = base;
      while (sub < 8.0 * solver.basis().lambda(mode - 1) * T) sub *= 2;
      int cell = std::max(1, static_cast<int>(frac * sub));
      JumpAtom atom{cell * (T / sub), mode, model.sigma(mode)};
      double coarse = reference_derivative_residual(solver, sub, T, f, x0, path, atom);
      double fine = reference_derivative_residual(solver, 2 * sub, T, f, x0, path, atom);
      double ratio = coarse / fine;
      if (std::abs(ratio - 2.0) > worst_dev) {
        worst_dev = std::abs(ratio - 2.0);
        worst_ratio = ratio;
      }
    }
    lines.push_back(
        check_within("derivative-residual-halving", worst_ratio, 2.0, 0.3));
  }

  return emit_report(cfg, out, "malliavin_report.txt", lines);
}

int cmd_operator_checks(const ExperimentConfig& cfg, const fs::path& out) {
  std::vector<CheckLine> lines;

  // Semigroup smoothing: measured sup of t^(rho/2)|A^(rho/2)S(t)| over a log
  // time grid stays below the scalar envelope (rho/2e)^(rho/2).
  {
    SpectralSolver solver(512);
    std::vector<double> tgrid;
    for (int i = 0; i <= 50; ++i)
      tgrid.push_back(1e-4 * std::pow(10.0, 5.0 * i / 50.0));
    for (double rho : {0.0, 0.5, 1.0, 1.5, 2.0}) {
      double sup = smoothing_sup(solver.basis(), rho, tgrid);
      double env = smoothing_envelope(rho);
      lines.push_back(
          check_below("smoothing-sup-rho=" + fmt(rho), sup, env, 1e-9));
    }
  }

  // Discrete smoothing: (t_m)^(rho/2) max_j lambda_j^(rho/2)(1+k lambda_j)^-m
  // bounded over a grid of meshes, steps, and step counts.  The scalar
  // bounds are 1 (rho = 0) and 1/2 (rho = 1, sharp at m = 1).
  {
    double worst0 = 0.0, worst1 = 0.0;
    for (int cells : {16, 64}) {
      auto pencil = pencil_eigenvalues(FemMesh(cells));
      for (double k : {1.0 / 16, 1.0 / 64, 1.0 / 256})
        for (int m = 1; m * k <= 1.0; m *= 2) {
          worst0 = std::max(worst0,
                            discrete_smoothing_constant(pencil, k, m, 0.0));
          worst1 = std::max(worst1,
                            discrete_smoothing_constant(pencil, k, m, 1.0));
        }
    }
    lines.push_back(check_below("discrete-smoothing-rho=0", worst0, 1.0, 1e-12));
    lines.push_back(check_below("discrete-smoothing-rho=1", worst1, 0.5, 1e-12));
  }

  // Error operator at fixed t_m = 1/2: halving h and k together under the
  // h^2 + k envelope shrinks the measured norm by roughly 4.
  {
    std::vector<Eigen::VectorXd> probes;
    probes.push_back(Eigen::VectorXd::Zero(8));
    probes.back()[0] = 1.0;
    probes.push_back(Eigen::VectorXd::Zero(8));
    probes.back()[2] = 1.0;
    Eigen::VectorXd mixed(8);
    for (int j = 0; j < 8; ++j) mixed[j] = 1.0 / (j + 1.0);
    probes.push_back(mixed);

    double coarse = error_operator_norm(1024, 4, 1.0 / 2048, 0.0, 2.0, probes);
    double fine = error_operator_norm(2048, 8, 1.0 / 4096, 0.0, 2.0, probes);
    lines.push_back(check_within("error-operator-refinement-ratio",
                                 coarse / fine, 4.15, 1.15));

    // Terminal-time sweep on the first eigenmode: the norm decays with
    // refinement up to a 10% wobble.
    std::vector<Eigen::VectorXd> e1(1, probes[0]);
    double prev = -1.0, worst_growth = 0.0;
    for (int l : {8, 16, 32, 64}) {
      double e = error_operator_norm(l, l, 1.0 / l, 0.0, 2.0, e1);
      if (prev >= 0.0) worst_growth = std::max(worst_growth, e / prev);
      prev = e;
    }
    lines.push_back(
        check_below("error-operator-terminal-decay", worst_growth, 1.0, 0.1));
  }

  return emit_report(cfg, out, "operator_report.txt", lines);
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Convergence laboratory for an implicit-Euler / Galerkin discretization "
      "of a semilinear heat equation driven by compound-Poisson jump noise.\n"
      "Artifacts are deterministic: identical config + seed give "
      "byte-identical files.\nOutput directory precedence: --out, then the "
      "LEVYHEAT_OUT environment variable, then the config's [output] dir."};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed_override = 0;
  int workers_override = -1;
  std::string out_override;
  app.add_option("--config", config_path, "experiment file (defaults used if absent)")
      ->check(CLI::ExistingFile);
  auto* seed_opt =
      app.add_option("--seed", seed_override, "master seed (overrides config)");
  app.add_option("--workers", workers_override,
                 "worker threads (overrides config; 0 = all cores)");
  app.add_option("--out", out_override, "output directory for artifacts");

  CLI::App* sub_solve =
      app.add_subcommand("solve", "integrate one driven trajectory and write it");
  CLI::App* sub_strong = app.add_subcommand(
      "strong-rates", "coupled Monte Carlo estimate of the pathwise L2 error rate");
  CLI::App* sub_weak = app.add_subcommand(
      "weak-rates", "coupled Monte Carlo estimate of the functional-mean error rate");
  CLI::App* sub_ratio = app.add_subcommand(
      "ratio", "weak and strong sweeps plus their slope ratio");
  CLI::App* sub_cov = app.add_subcommand(
      "covariance", "convergence of the two-point covariance estimator");
  CLI::App* sub_malliavin = app.add_subcommand(
      "malliavin-verify",
      "verify the add-one-jump derivative identities and the duality formula");
  CLI::App* sub_operator = app.add_subcommand(
      "operator-checks", "semigroup smoothing and error-operator bound checks");
  CLI::App* sub_describe = app.add_subcommand(
      "describe", "print the run plan for a config without computing");
  for (CLI::App* sub : {sub_solve, sub_strong, sub_weak, sub_ratio, sub_cov,
                        sub_malliavin, sub_operator, sub_describe})
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kOk : kValidation;
  }

  ExperimentConfig cfg;
  try {
    if (!config_path.empty()) cfg = parse_config_file(config_path);
    if (seed_opt->count() > 0) cfg.seed = seed_override;
    if (workers_override >= 0) cfg.workers = workers_override;
    if (!out_override.empty()) {
      cfg.out_dir = out_override;
    } else if (const char* env = std::getenv(kOutEnvVar); env && *env) {
      cfg.out_dir = env;
    }
    cfg.validate();
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kValidation;
  }

  auto guarded = [&](auto&& body) -> int {
    try {
      return body();
    } catch (const SelfConvergenceError& e) {
      std::cerr << "statistical failure: " << e.what() << "\n";
      return kStatistical;
    } catch (const ConfigError& e) {
      std::cerr << e.what() << "\n";
      return kValidation;
    } catch (const std::invalid_argument& e) {
      std::cerr << "validation error: " << e.what() << "\n";
      return kValidation;
    } catch (const std::logic_error& e) {
      std::cerr << "internal invariant violated: " << e.what() << "\n";
      return kIdentity;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kValidation;
    }
  };

  if (sub_describe->parsed()) return guarded([&] { return cmd_describe(cfg); });

  return guarded([&] {
    fs::path out = ensure_out_dir(cfg.out_dir);
    if (sub_solve->parsed()) return cmd_solve(cfg, out);
    if (sub_strong->parsed()) return cmd_strong(cfg, out);
    if (sub_weak->parsed()) return cmd_weak(cfg, out);
    if (sub_ratio->parsed()) return cmd_ratio(cfg, out);
    if (sub_cov->parsed()) return cmd_covariance(cfg, out);
    if (sub_malliavin->parsed()) return cmd_malliavin(cfg, out);
    return cmd_operator_checks(cfg, out);
  });
}
