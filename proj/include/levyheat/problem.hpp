#pragma once
// Problem data for the semilinear heat equation with jump forcing:
// pointwise drift f(u) and the initial profile.
//
// The drift options are globally Lipschitz; `sine` is the nonlinear
// workhorse f(u) = scale * sin(u).  The initial profile is the parabola
// scale * xi * (1 - xi), whose eigen expansion is closed form:
//
//   <xi(1-xi), e_j> = 4 sqrt(2) / (j pi)^3   for odd j, 0 for even j.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace levyheat {

class Drift {
public:
  enum class Kind { zero, sine };

  static Drift zero() { return Drift(Kind::zero, 0.0); }
  static Drift sine(double scale) { return Drift(Kind::sine, scale); }

  Kind kind() const { return kind_; }
  double scale() const { return scale_; }
  bool is_zero() const { return kind_ == Kind::zero || scale_ == 0.0; }

  double operator()(double u) const {
    switch (kind_) {
      case Kind::zero: return 0.0;
      case Kind::sine: return scale_ * std::sin(u);
    }
    return 0.0;
  }
  double derivative(double u) const {
    switch (kind_) {
      case Kind::zero: return 0.0;
      case Kind::sine: return scale_ * std::cos(u);
    }
    return 0.0;
  }
  // Lipschitz constant (used by the stability-majorant utilities).
  double lipschitz() const { return kind_ == Kind::sine ? std::abs(scale_) : 0.0; }

private:
  Drift(Kind k, double s) : kind_(k), scale_(s) {}
  Kind kind_;
  double scale_;
};

class InitialData {
public:
  explicit InitialData(double scale) : scale_(scale) {}

  double scale() const { return scale_; }
  double operator()(double xi) const { return scale_ * xi * (1.0 - xi); }

  Eigen::VectorXd spectral_coefficients(int n_modes) const {
    Eigen::VectorXd c = Eigen::VectorXd::Zero(n_modes);
    for (int j = 1; j <= n_modes; j += 2) {
      double jpi = j * std::numbers::pi;
      c[j - 1] = scale_ * 4.0 * std::numbers::sqrt2 / (jpi * jpi * jpi);
    }
    return c;
  }

private:
  double scale_;
};

} // namespace levyheat
