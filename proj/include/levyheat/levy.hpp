#pragma once
// Compound-Poisson driving noise with spectral marks.
//
// Jumps arrive at rate `rate`; each jump picks eigenmode j with probability
// proportional to j^(-mode_exponent) (j = 1..n_modes), a Rademacher sign,
// and the deterministic magnitude
//
//   sigma_j = lambda_j^((1-regularity)/2),   lambda_j = (j pi)^2,
//
// so every mark a e_j has |mark| = 1 in the weighted norm
// |v|_U^2 = sum_j lambda_j^(regularity-1) <v,e_j>^2.  Consequently the
// second moment of the mark measure is exactly `rate`, independent of the
// mode law, and the driving process is a mean-zero square-integrable
// martingale in that norm.
//
// A path is the finite list of (time, mode, amplitude) atoms on a horizon;
// amplitudes are L^2 coefficients (the mark is amplitude * e_mode).  All
// path functionals here are exact finite sums -- no quadrature enters.

#include <levyheat/rng.hpp>
#include <levyheat/spectral.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

namespace levyheat {

struct JumpAtom {
  double time = 0.0;
  int mode = 1;            // 1-based eigenmode index
  double amplitude = 0.0;  // L^2 coefficient of the mark on e_mode
};

struct JumpPath {
  double horizon = 0.0;
  std::vector<JumpAtom> atoms; // nondecreasing in time
};

class LevyModel {
public:
  LevyModel(double rate, int n_modes, double mode_exponent, double regularity)
      : rate_(rate), n_modes_(n_modes), mode_exponent_(mode_exponent),
        regularity_(regularity) {
    if (!(rate > 0.0))
      throw std::invalid_argument("LevyModel: rate must be > 0");
    if (n_modes < 1)
      throw std::invalid_argument("LevyModel: need at least one mode");
    if (!(regularity > 0.0) || regularity > 1.0)
      throw std::invalid_argument("LevyModel: regularity must lie in (0,1]");
    lambda_.resize(n_modes);
    sigma_.resize(n_modes);
    cum_.resize(n_modes);
    double total = 0.0;
    for (int j = 1; j <= n_modes; ++j) {
      double lam = (j * std::numbers::pi) * (j * std::numbers::pi);
      lambda_[j - 1] = lam;
      sigma_[j - 1] = std::pow(lam, (1.0 - regularity) / 2.0);
      total += std::pow(double(j), -mode_exponent);
      cum_[j - 1] = total;
    }
    for (double& c : cum_) c /= total;
    cum_.back() = 1.0; // guard against rounding at the top bin
  }

  double rate() const { return rate_; }
  int n_modes() const { return n_modes_; }
  double mode_exponent() const { return mode_exponent_; }
  double regularity() const { return regularity_; }

  double lambda_of_mode(int j) const { return lambda_.at(j - 1); }
  double sigma(int j) const { return sigma_.at(j - 1); }
  double mode_prob(int j) const {
    return cum_.at(j - 1) - (j >= 2 ? cum_[j - 2] : 0.0);
  }
  const std::vector<double>& cumulative_mode_law() const { return cum_; }

  // Weighted-norm magnitude of the mark amplitude * e_mode.
  double mark_u_norm(int mode, double amplitude) const {
    return std::abs(amplitude) *
           std::pow(lambda_of_mode(mode), (regularity_ - 1.0) / 2.0);
  }

  // sqrt of the second moment of the mark measure in the weighted norm.
  double second_moment() const { return std::sqrt(rate_); }

private:
  double rate_;
  int n_modes_;
  double mode_exponent_;
  double regularity_;
  std::vector<double> lambda_, sigma_, cum_;
};

// Draw order is fixed (count, all times, all modes, all signs) so a path is
// reproducible from the stream address alone.
inline JumpPath sample_jump_path(const LevyModel& model, RngStream& rng,
                                 double horizon) {
  if (!(horizon > 0.0))
    throw std::invalid_argument("sample_jump_path: horizon must be > 0");
  JumpPath path;
  path.horizon = horizon;
  std::uint64_t n = rng.next_poisson(model.rate() * horizon);
  std::vector<double> times(n);
  for (auto& t : times) t = horizon * rng.next_double_pos();
  std::sort(times.begin(), times.end());
  path.atoms.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    path.atoms[i].time = times[i];
    path.atoms[i].mode =
        1 + rng.next_category(model.cumulative_mode_law());
  }
  for (std::uint64_t i = 0; i < n; ++i) {
    double sign = rng.next_rademacher();
    path.atoms[i].amplitude = sign * model.sigma(path.atoms[i].mode);
  }
  return path;
}

// Insert an extra atom keeping time order; ties go after existing atoms so
// a perturbed path is the original plus one point, never a reshuffle.
inline void insert_atom(JumpPath& path, const JumpAtom& atom) {
  auto it = std::upper_bound(
      path.atoms.begin(), path.atoms.end(), atom,
      [](const JumpAtom& a, const JumpAtom& b) { return a.time < b.time; });
  path.atoms.insert(it, atom);
}

// Sum of mark coefficients over the window (t0, t1], on modes 1..n_out.
inline Eigen::VectorXd increment(const JumpPath& path, double t0, double t1,
                                 int n_out) {
  if (!(t1 >= t0))
    throw std::invalid_argument("increment: window must satisfy t1 >= t0");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n_out);
  for (const auto& a : path.atoms) {
    if (a.time <= t0) continue;
    if (a.time > t1) break;
    if (a.mode <= n_out) out[a.mode - 1] += a.amplitude;
  }
  return out;
}

inline int count_modes_above(const JumpPath& path, int jmax) {
  int n = 0;
  for (const auto& a : path.atoms)
    if (a.mode > jmax) ++n;
  return n;
}

// Closed-form convolution with the heat semigroup: every atom at tau <= t
// contributes amplitude * exp(-lambda_mode (t - tau)) on its own mode.
inline Eigen::VectorXd stochastic_convolution_exact(const LevyModel& model,
                                                    const JumpPath& path,
                                                    double t, int n_out) {
  if (!(t >= 0.0))
    throw std::invalid_argument("stochastic_convolution_exact: t must be >= 0");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n_out);
  for (const auto& a : path.atoms) {
    if (a.time > t) break;
    if (a.mode <= n_out)
      out[a.mode - 1] +=
          a.amplitude * std::exp(-model.lambda_of_mode(a.mode) * (t - a.time));
  }
  return out;
}

// ---- plain-text round trip --------------------------------------------------

namespace detail {
inline std::string shortest_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}
inline double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::runtime_error("jump-path parse: bad number '" + s + "'");
  return v;
}
} // namespace detail

inline void write_jump_path(const JumpPath& path, std::ostream& os) {
  os << "# jump-path horizon=" << detail::shortest_double(path.horizon)
     << " atoms=" << path.atoms.size() << "\n";
  for (const auto& a : path.atoms)
    os << detail::shortest_double(a.time) << ' ' << a.mode << ' '
       << detail::shortest_double(a.amplitude) << "\n";
}

inline JumpPath read_jump_path(std::istream& is) {
  JumpPath path;
  std::string line;
  if (!std::getline(is, line) || line.rfind("# jump-path ", 0) != 0)
    throw std::runtime_error("jump-path parse: missing header");
  std::size_t hpos = line.find("horizon=");
  std::size_t apos = line.find(" atoms=");
  if (hpos == std::string::npos || apos == std::string::npos)
    throw std::runtime_error("jump-path parse: malformed header");
  path.horizon =
      detail::parse_double(line.substr(hpos + 8, apos - (hpos + 8)));
  std::size_t n_atoms = std::stoul(line.substr(apos + 7));
  path.atoms.reserve(n_atoms);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string t_str, m_str, a_str;
    if (!(row >> t_str >> m_str >> a_str))
      throw std::runtime_error("jump-path parse: malformed atom line");
    JumpAtom atom;
    atom.time = detail::parse_double(t_str);
    atom.mode = std::stoi(m_str);
    atom.amplitude = detail::parse_double(a_str);
    path.atoms.push_back(atom);
  }
  if (path.atoms.size() != n_atoms)
    throw std::runtime_error("jump-path parse: atom count mismatch");
  return path;
}

} // namespace levyheat
