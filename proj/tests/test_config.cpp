// Experiment-file parsing, defaults, and validation messages.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <levyheat/config.hpp>

#include <sstream>
#include <string>

using namespace levyheat;

namespace {

ExperimentConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

std::string validation_message(const ExperimentConfig& cfg) {
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

} // namespace

TEST_CASE("number parsing accepts decimals and exact fractions") {
  CHECK(detail::parse_number("0.25", "k") == 0.25);
  CHECK(detail::parse_number("3", "k") == 3.0);
  CHECK(detail::parse_number(" 1/4096 ", "k") == 1.0 / 4096.0); // bit exact
  CHECK(detail::parse_number("3/4", "k") == 0.75);
  CHECK_THROWS_AS(detail::parse_number("1/0", "k"), ConfigError);
  CHECK_THROWS_AS(detail::parse_number("abc", "k"), ConfigError);
  CHECK_THROWS_AS(detail::parse_number("1.5x", "k"), ConfigError);
  CHECK_THROWS_AS(detail::parse_integer("1.5", "k"), ConfigError);
  CHECK(detail::parse_integer("512", "k") == 512);
}

TEST_CASE("an empty file yields the complete benchmark defaults") {
  ExperimentConfig cfg = parse("");
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.beta == 0.5);
  CHECK(cfg.rate == 50.0);
  CHECK(cfg.k_noise == 512);
  CHECK(cfg.sweep == "space");
  ResolutionLadder lad = cfg.ladder();
  CHECK(lad.backend == BackendKind::fem);
  CHECK(lad.mode == SweepMode::space);
  REQUIRE(lad.rungs.size() == 4);
  CHECK(lad.rungs[3].resolution == 32);
  CHECK(lad.rungs[0].dt == 1.0 / 2048);
  CHECK(lad.comparator == ComparatorKind::scheme);
  CHECK(lad.comparator_resolution == 256); // 8x the finest rung
  CHECK(lad.comparator_dt == 1.0 / 2048); // step-matched
  McProblem p = cfg.problem();
  CHECK(p.model.n_modes() == 512);
  CHECK_FALSE(p.drift.is_zero());
}

TEST_CASE("a full file parses every section") {
  ExperimentConfig cfg = parse(R"(# benchmark override
[problem]
beta = 0.75
T = 2
drift = zero
x0 = parabola
x0_amplitude = 3

[noise]
rate = 5
alpha = 1.3
k_noise = 64

[discretization]
backend = spectral
sweep = time
resolution = 64
steps = 1/4, 1/8, 1/16
comparator = mild
reference_modes = 64
reference_substeps = 256

[mc]
n_samples = 500
seed = 99
workers = 2
gate_samples = 4
skip_gate = true

[functional]
name = product
mode = 1
mode2 = 2
t1 = 0.5
t2 = 2
eps = 0.05
batches = 10

[malliavin]
p = 2
q = 2
modes = 8
steps = 32
pairs = 400

[output]
dir = /tmp/artifacts
)");
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.beta == 0.75);
  CHECK(cfg.horizon == 2.0);
  CHECK(cfg.drift_name == "zero");
  CHECK(cfg.x0_amplitude == 3.0);
  CHECK(cfg.k_noise == 64);
  CHECK(cfg.steps.size() == 3);
  CHECK(cfg.steps[2] == 1.0 / 16);
  CHECK(cfg.seed == 99);
  CHECK(cfg.workers == 2);
  CHECK(cfg.skip_gate);
  CHECK(cfg.out_dir == "/tmp/artifacts");

  ResolutionLadder lad = cfg.ladder();
  CHECK(lad.mode == SweepMode::time);
  CHECK(lad.comparator == ComparatorKind::mild);
  CHECK(lad.reference_substeps == 256);
  CHECK_NOTHROW(lad.validate(2.0));

  PathFunctional f = cfg.functional();
  CHECK(f.outer() == PathFunctional::Outer::bilinear_product);
  REQUIRE(f.fields().size() == 2);
  CHECK(f.fields()[0].measure.atoms[0].first == 0.5);
  CHECK(f.fields()[1].measure.atoms[0].first == 2.0);
  CHECK(f.fields()[1].psi.size() == 2);

  SweepSettings s = cfg.sweep_settings();
  CHECK(s.n_workers == 2);
  CHECK(s.skip_gate);

  McProblem p = cfg.problem();
  CHECK(p.drift.is_zero());
  CHECK(p.horizon == 2.0);
}

TEST_CASE("malformed input names the offender") {
  CHECK_THROWS_WITH_AS(parse("[problem]\nbeta == 0.5\n"),
                       doctest::Contains("not a number"), ConfigError);
  CHECK_THROWS_WITH_AS(parse("[problem\nbeta = 0.5\n"),
                       doctest::Contains("malformed section"), ConfigError);
  CHECK_THROWS_WITH_AS(parse("[weather]\nrain = 1\n"),
                       doctest::Contains("unknown section '[weather]'"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse("[noise]\nratee = 50\n"),
                       doctest::Contains("unknown key 'noise.ratee'"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse("[problem]\njust a line\n"),
                       doctest::Contains("expected 'key = value'"), ConfigError);
  CHECK_THROWS_WITH_AS(parse("[mc]\nn_samples = 10.5\n"),
                       doctest::Contains("mc.n_samples"), ConfigError);
}

TEST_CASE("validation rejects out-of-range settings and names the key") {
  ExperimentConfig cfg; // valid defaults

  ExperimentConfig bad = cfg;
  bad.beta = 1.5;
  CHECK(validation_message(bad).find("problem.beta") != std::string::npos);
  bad.beta = 0.0;
  CHECK(validation_message(bad).find("problem.beta") != std::string::npos);

  bad = cfg;
  bad.alpha = 1.0;
  CHECK(validation_message(bad).find("noise.alpha") != std::string::npos);

  bad = cfg;
  bad.amplitude_law = "lognormal"; // asymmetric laws are out of contract
  CHECK(validation_message(bad).find("noise.amplitude_law") != std::string::npos);

  // The noise must stay rougher than the finest mesh of a space sweep.
  bad = cfg;
  bad.k_noise = 100; // finest rung is 32 cells -> needs >= 128
  CHECK(validation_message(bad).find("noise.k_noise") != std::string::npos);
  CHECK(validation_message(bad).find("128") != std::string::npos);

  // On a time sweep the pinned grid must resolve every mark instead.
  bad = cfg;
  bad.sweep = "time";
  bad.steps = {0.25, 0.125};
  bad.resolution_pin = 256;
  bad.backend = "spectral";
  CHECK(validation_message(bad).find("noise.k_noise") != std::string::npos);
  bad.resolution_pin = 512;
  CHECK(validation_message(bad).empty());

  bad = cfg;
  bad.q_exponent = 4.5; // admissible range for beta = 1/2 is (1, 4)
  CHECK(validation_message(bad).find("malliavin.q") != std::string::npos);
  CHECK(validation_message(bad).find("4") != std::string::npos);
  bad.q_exponent = 1.0;
  CHECK(validation_message(bad).find("malliavin.q") != std::string::npos);

  bad = cfg;
  bad.n_samples = 1;
  CHECK(validation_message(bad).find("mc.n_samples") != std::string::npos);

  bad = cfg;
  bad.functional_name = "cubic";
  CHECK(validation_message(bad).find("functional.name") != std::string::npos);

  // Probe mode 0 selects the 64-mode equal-weight probe; negatives are
  // rejected.
  bad = cfg;
  bad.probe_mode = -1;
  CHECK(validation_message(bad).find("functional.mode") != std::string::npos);
  bad.probe_mode = 0;
  CHECK(validation_message(bad).empty());
  const Eigen::VectorXd& spread = bad.functional().fields().at(0).psi;
  CHECK(spread.size() == 64);
  CHECK(spread[0] == doctest::Approx(1.0 / 8.0));
  CHECK(spread[63] == spread[0]);

  // Ladder incoherence surfaces through the shared validator.
  bad = cfg;
  bad.comparator_resolution = 48; // not a multiple of the 32-cell rung
  CHECK(validation_message(bad).find("discretization") != std::string::npos);
}

TEST_CASE("config hash tracks semantics, not formatting") {
  ExperimentConfig a = parse("[problem]\nbeta = 0.5\n");
  ExperimentConfig b = parse("# comment\n\n[problem]\n   beta   =   0.5\n");
  CHECK(a.config_hash() == b.config_hash());
  ExperimentConfig c = parse("[problem]\nbeta = 0.75\n");
  CHECK(a.config_hash() != c.config_hash());
  ExperimentConfig d = parse("[mc]\nseed = 123\n");
  CHECK(a.config_hash() == d.config_hash()); // the seed is reported separately
}
