#pragma once
// Spectral backbone for -Delta on (0,1) with zero Dirichlet data.
//
//   eigenpairs      lambda_j = (j pi)^2,  e_j(xi) = sqrt(2) sin(j pi xi)
//   fractional norm |v|_rho = ( sum_j lambda_j^rho <v,e_j>^2 )^(1/2)
//   heat semigroup  S(t) e_j = exp(-lambda_j t) e_j
//
// Two scalar envelopes are used as oracles for operator-norm checks.
// Substituting y = lambda t turns both into one-dimensional maximizations:
//
//   sup_t,lambda t^(rho/2) lambda^(rho/2) e^(-lambda t)
//     = sup_y y^(rho/2) e^(-y) = (rho/(2e))^(rho/2)     (max at y = rho/2)
//
//   sup_t,lambda t^(-rho/2) lambda^(-rho/2) (1 - e^(-lambda t))
//     = sup_y y^(-rho/2) (1 - e^(-y))                   (rho in (0,2])
//
// The second sup has no closed form for rho < 2 and is bracketed
// numerically; for rho = 2 it is the limit value 1 at y -> 0.
//
// A basis may also be built from a user-supplied eigenvalue sequence; all
// coefficient-space operations still apply, while pointwise evaluation and
// the sine transform remain tied to the Laplacian eigenfunctions.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace levyheat {

class SpectralBasis {
public:
  static SpectralBasis dirichlet_laplacian(int n_modes) {
    if (n_modes < 1)
      throw std::invalid_argument("SpectralBasis: need at least one mode");
    SpectralBasis b;
    b.lambda_.resize(n_modes);
    for (int j = 0; j < n_modes; ++j) {
      double jp = (j + 1) * std::numbers::pi;
      b.lambda_[j] = jp * jp;
    }
    b.laplacian_ = true;
    return b;
  }

  // Exploratory extension point: any positive nondecreasing sequence.
  static SpectralBasis from_eigenvalues(std::vector<double> lambda) {
    if (lambda.empty())
      throw std::invalid_argument("SpectralBasis: empty eigenvalue list");
    for (std::size_t j = 0; j < lambda.size(); ++j) {
      if (!(lambda[j] > 0.0))
        throw std::invalid_argument("SpectralBasis: eigenvalues must be > 0");
      if (j > 0 && lambda[j] < lambda[j - 1])
        throw std::invalid_argument("SpectralBasis: eigenvalues must be nondecreasing");
    }
    SpectralBasis b;
    b.lambda_ = std::move(lambda);
    b.laplacian_ = false;
    return b;
  }

  int size() const { return static_cast<int>(lambda_.size()); }
  double lambda(int j) const { return lambda_[j]; } // 0-based: mode j+1
  const std::vector<double>& eigenvalues() const { return lambda_; }
  bool is_laplacian() const { return laplacian_; }

private:
  SpectralBasis() = default;
  std::vector<double> lambda_;
  bool laplacian_ = false;
};

inline void check_coeffs(const SpectralBasis& basis,
                         const Eigen::Ref<const Eigen::VectorXd>& coeffs) {
  if (coeffs.size() != basis.size())
    throw std::invalid_argument("coefficient vector does not match basis size");
}

// | A^(rho/2) v |_{L^2}; rho may be negative (eigenvalues are positive).
inline double hdot_norm(const SpectralBasis& basis,
                        const Eigen::Ref<const Eigen::VectorXd>& coeffs,
                        double rho) {
  check_coeffs(basis, coeffs);
  double sum = 0.0;
  for (int j = 0; j < basis.size(); ++j) {
    double w = std::pow(basis.lambda(j), rho);
    sum += w * coeffs[j] * coeffs[j];
  }
  return std::sqrt(sum);
}

inline Eigen::VectorXd apply_semigroup(const SpectralBasis& basis,
                                       const Eigen::Ref<const Eigen::VectorXd>& coeffs,
                                       double t) {
  check_coeffs(basis, coeffs);
  if (!(t >= 0.0))
    throw std::domain_error("apply_semigroup: time must be >= 0");
  Eigen::VectorXd out(basis.size());
  for (int j = 0; j < basis.size(); ++j)
    out[j] = std::exp(-basis.lambda(j) * t) * coeffs[j];
  return out;
}

// A^s v for real s (A^(rho/2) realizes the Hdot^rho pairing).
inline Eigen::VectorXd apply_fractional_power(const SpectralBasis& basis,
                                              const Eigen::Ref<const Eigen::VectorXd>& coeffs,
                                              double s) {
  check_coeffs(basis, coeffs);
  Eigen::VectorXd out(basis.size());
  for (int j = 0; j < basis.size(); ++j)
    out[j] = std::pow(basis.lambda(j), s) * coeffs[j];
  return out;
}

// ---- operator-norm envelopes ------------------------------------------------

inline double smoothing_envelope(double rho) {
  if (rho < 0.0)
    throw std::domain_error("smoothing_envelope: rho must be >= 0");
  if (rho == 0.0) return 1.0;
  return std::pow(rho / (2.0 * std::numbers::e), rho / 2.0);
}

// Measured sup over a time grid of t^(rho/2) |A^(rho/2) S(t)|, the operator
// norm being a max over modes.  Always <= smoothing_envelope(rho).
inline double smoothing_sup(const SpectralBasis& basis, double rho,
                            const std::vector<double>& t_grid) {
  if (rho < 0.0)
    throw std::domain_error("smoothing_sup: rho must be >= 0");
  double sup = 0.0;
  for (double t : t_grid) {
    if (!(t > 0.0))
      throw std::domain_error("smoothing_sup: grid times must be > 0");
    double best = 0.0;
    for (int j = 0; j < basis.size(); ++j) {
      double y = basis.lambda(j) * t;
      best = std::max(best, std::pow(y, rho / 2.0) * std::exp(-y));
    }
    sup = std::max(sup, best);
  }
  return sup;
}

// sup_{y>0} y^(-rho/2) (1 - e^(-y)) for rho in (0,2]; golden-section search
// on the log axis after bracketing (the function is unimodal there).
inline double continuity_envelope(double rho) {
  if (!(rho > 0.0) || rho > 2.0)
    throw std::domain_error("continuity_envelope: rho must be in (0,2]");
  if (rho == 2.0) return 1.0; // limit y -> 0 of (1 - e^-y)/y
  auto g = [rho](double logy) {
    double y = std::exp(logy);
    return std::pow(y, -rho / 2.0) * (1.0 - std::exp(-y));
  };
  double lo = std::log(1e-8), hi = std::log(1e8);
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
  double ga = g(a), gb = g(b);
  for (int it = 0; it < 200; ++it) {
    if (ga < gb) {
      lo = a; a = b; ga = gb;
      b = lo + gr * (hi - lo); gb = g(b);
    } else {
      hi = b; b = a; gb = ga;
      a = hi - gr * (hi - lo); ga = g(a);
    }
  }
  return std::max(ga, gb);
}

inline double continuity_sup(const SpectralBasis& basis, double rho,
                             const std::vector<double>& t_grid) {
  if (!(rho > 0.0) || rho > 2.0)
    throw std::domain_error("continuity_sup: rho must be in (0,2]");
  double sup = 0.0;
  for (double t : t_grid) {
    if (!(t > 0.0))
      throw std::domain_error("continuity_sup: grid times must be > 0");
    double best = 0.0;
    for (int j = 0; j < basis.size(); ++j) {
      double y = basis.lambda(j) * t;
      best = std::max(best, std::pow(y, -rho / 2.0) * (1.0 - std::exp(-y)));
    }
    sup = std::max(sup, best);
  }
  return sup;
}

// ---- physical-space bridge --------------------------------------------------

inline double evaluate_at(const SpectralBasis& basis,
                          const Eigen::Ref<const Eigen::VectorXd>& coeffs,
                          double xi) {
  check_coeffs(basis, coeffs);
  if (!basis.is_laplacian())
    throw std::logic_error("evaluate_at: pointwise values need the Laplacian basis");
  double s = 0.0;
  for (int j = 0; j < basis.size(); ++j)
    s += coeffs[j] * std::sin((j + 1) * std::numbers::pi * xi);
  return std::numbers::sqrt2 * s;
}

// Values on the uniform interior grid xi_i = i/(K+1), i = 1..K, via the
// symmetric sine matrix S_ij = sin(i j pi/(K+1)).  S^2 = (K+1)/2 * Id, so
// the same matrix inverts the transform up to scaling.  Plain dense
// matrix-vector products keep the map exactly the direct summation.
class SineTransform {
public:
  explicit SineTransform(int n_modes) : K_(n_modes), S_(n_modes, n_modes) {
    if (n_modes < 1)
      throw std::invalid_argument("SineTransform: need at least one mode");
    for (int i = 0; i < K_; ++i)
      for (int j = 0; j < K_; ++j)
        S_(i, j) = std::sin((i + 1) * (j + 1) * std::numbers::pi / (K_ + 1));
  }

  int modes() const { return K_; }

  double grid_point(int i) const { return double(i + 1) / (K_ + 1); }

  void to_physical(const Eigen::Ref<const Eigen::VectorXd>& coeffs,
                   Eigen::Ref<Eigen::VectorXd> values) const {
    values.noalias() = S_ * coeffs;
    values *= std::numbers::sqrt2;
  }

  void to_coefficients(const Eigen::Ref<const Eigen::VectorXd>& values,
                       Eigen::Ref<Eigen::VectorXd> coeffs) const {
    coeffs.noalias() = S_ * values;
    coeffs *= std::numbers::sqrt2 / (K_ + 1);
  }

private:
  int K_;
  Eigen::MatrixXd S_;
};

} // namespace levyheat
