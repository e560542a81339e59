#pragma once
// Piecewise-linear finite elements on the uniform mesh of (0,1) with zero
// boundary values.  Everything is tridiagonal:
//
//   mass row       h/6 * [1 4 1]
//   stiffness row  1/h * [-1 2 -1]
//
// The implicit step operator is (M + k S)^(-1) M; applying a projection of
// an outside function v means solving against its load vector <v, phi_i>.
// For eigenmodes the load has a closed form,
//
//   <e_j, phi_i> = sqrt(2) * (4 sin^2(j pi h / 2) / ((j pi)^2 h)) * sin(j pi xi_i),
//
// valid for every j (modes beyond the mesh resolution alias through it, and
// multiples of the cell count load to zero).  The generalized pencil
// S c = mu M c has eigenvalues
//
//   mu_j = (6/h^2) (1 - cos(j pi h)) / (2 + cos(j pi h)),  j = 1..n_dof,
//
// which overestimate (j pi)^2 and converge to it at second order; tests
// cross-check this formula against a dense generalized eigensolver.

#include <levyheat/spectral.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace levyheat {

class FemMesh {
public:
  explicit FemMesh(int n_cells) : n_cells_(n_cells) {
    if (n_cells < 2)
      throw std::invalid_argument("FemMesh: need at least two cells");
    h_ = 1.0 / n_cells;
  }
  int n_cells() const { return n_cells_; }
  int n_dof() const { return n_cells_ - 1; }
  double h() const { return h_; }
  double node(int i) const { return (i + 1) * h_; } // 0-based dof index

private:
  int n_cells_;
  double h_;
};

struct Tridiag {
  // diag[i] = A(i,i); off[i] = A(i,i+1) = A(i+1,i) (symmetric).
  Eigen::VectorXd diag, off;

  static Tridiag mass(const FemMesh& mesh) {
    int n = mesh.n_dof();
    Tridiag t;
    t.diag = Eigen::VectorXd::Constant(n, 4.0 * mesh.h() / 6.0);
    t.off = Eigen::VectorXd::Constant(std::max(n - 1, 0), mesh.h() / 6.0);
    return t;
  }
  static Tridiag stiffness(const FemMesh& mesh) {
    int n = mesh.n_dof();
    Tridiag t;
    t.diag = Eigen::VectorXd::Constant(n, 2.0 / mesh.h());
    t.off = Eigen::VectorXd::Constant(std::max(n - 1, 0), -1.0 / mesh.h());
    return t;
  }

  int size() const { return static_cast<int>(diag.size()); }

  Tridiag plus_scaled(double k, const Tridiag& other) const {
    Tridiag t;
    t.diag = diag + k * other.diag;
    t.off = off + k * other.off;
    return t;
  }

  void apply(const Eigen::Ref<const Eigen::VectorXd>& x,
             Eigen::Ref<Eigen::VectorXd> y) const {
    int n = size();
    for (int i = 0; i < n; ++i) {
      double v = diag[i] * x[i];
      if (i > 0) v += off[i - 1] * x[i - 1];
      if (i + 1 < n) v += off[i] * x[i + 1];
      y[i] = v;
    }
  }
  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    Eigen::VectorXd y(size());
    apply(x, y);
    return y;
  }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(size(), size());
    for (int i = 0; i < size(); ++i) {
      A(i, i) = diag[i];
      if (i + 1 < size()) {
        A(i, i + 1) = off[i];
        A(i + 1, i) = off[i];
      }
    }
    return A;
  }
};

// Thomas elimination without pivoting; safe here because every system we
// factor (M, M + kS) is symmetric positive definite and diagonally
// dominant.  Factor once, solve many.
class TridiagSolver {
public:
  explicit TridiagSolver(const Tridiag& A) : c_(A.off), d_(A.diag) {
    int n = A.size();
    if (n == 0) throw std::invalid_argument("TridiagSolver: empty system");
    w_.resize(std::max(n - 1, 0));
    for (int i = 1; i < n; ++i) {
      double m = A.off[i - 1] / d_[i - 1];
      w_[i - 1] = m;
      d_[i] -= m * A.off[i - 1];
    }
  }

  void solve_in_place(Eigen::Ref<Eigen::VectorXd> b) const {
    int n = static_cast<int>(d_.size());
    for (int i = 1; i < n; ++i) b[i] -= w_[i - 1] * b[i - 1];
    b[n - 1] /= d_[n - 1];
    for (int i = n - 2; i >= 0; --i) b[i] = (b[i] - c_[i] * b[i + 1]) / d_[i];
  }
  Eigen::VectorXd solve(const Eigen::Ref<const Eigen::VectorXd>& b) const {
    Eigen::VectorXd x = b;
    solve_in_place(x);
    return x;
  }

private:
  Eigen::VectorXd c_; // original superdiagonal
  Eigen::VectorXd d_; // pivoted diagonal
  Eigen::VectorXd w_; // elimination multipliers
};

// Exact hat-function load of eigenmode j (any j >= 1).
inline Eigen::VectorXd sine_load(const FemMesh& mesh, int mode) {
  if (mode < 1) throw std::invalid_argument("sine_load: mode must be >= 1");
  int n = mesh.n_dof();
  double h = mesh.h();
  double jpi = mode * std::numbers::pi;
  double s = std::sin(jpi * h / 2.0);
  double factor = std::numbers::sqrt2 * 4.0 * s * s / (jpi * jpi * h);
  Eigen::VectorXd b(n);
  for (int i = 0; i < n; ++i) b[i] = factor * std::sin(jpi * mesh.node(i));
  return b;
}

inline double fem_pencil_eigenvalue(const FemMesh& mesh, int j) {
  if (j < 1 || j > mesh.n_dof())
    throw std::invalid_argument("fem_pencil_eigenvalue: j out of range");
  double th = j * std::numbers::pi * mesh.h();
  return (6.0 / (mesh.h() * mesh.h())) * (1.0 - std::cos(th)) /
         (2.0 + std::cos(th));
}

namespace detail {
// 5-point Gauss-Legendre rule on [-1,1]; exact through degree 9.
struct Gauss5 {
  std::array<double, 5> x, w;
  Gauss5() {
    double a = std::sqrt(5.0 - 2.0 * std::sqrt(10.0 / 7.0)) / 3.0;
    double b = std::sqrt(5.0 + 2.0 * std::sqrt(10.0 / 7.0)) / 3.0;
    x = {-b, -a, 0.0, a, b};
    double wa = (322.0 + 13.0 * std::sqrt(70.0)) / 900.0;
    double wb = (322.0 - 13.0 * std::sqrt(70.0)) / 900.0;
    w = {wb, wa, 128.0 / 225.0, wa, wb};
  }
};
} // namespace detail

// Load vector <v, phi_i> by per-element Gauss quadrature.
inline Eigen::VectorXd assemble_load(const FemMesh& mesh,
                                     const std::function<double(double)>& v) {
  static const detail::Gauss5 q;
  int n = mesh.n_dof();
  double h = mesh.h();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  for (int e = 0; e < mesh.n_cells(); ++e) {
    double xl = e * h, xr = xl + h;
    for (int g = 0; g < 5; ++g) {
      double xi = 0.5 * (xl + xr) + 0.5 * h * q.x[g];
      double wq = 0.5 * h * q.w[g];
      double tl = (xr - xi) / h; // weight of left node phi_{e-1}
      double tr = (xi - xl) / h; // weight of right node phi_e
      double fv = wq * v(xi);
      if (e >= 1) b[e - 1] += fv * tl;
      if (e < n) b[e] += fv * tr;
    }
  }
  return b;
}

// L^2-orthogonal projection onto the mesh space: solve M c = <v, phi>.
inline Eigen::VectorXd project_l2(const FemMesh& mesh,
                                  const std::function<double(double)>& v) {
  TridiagSolver msolve(Tridiag::mass(mesh));
  return msolve.solve(assemble_load(mesh, v));
}

inline double l2_norm_fem(const FemMesh& mesh,
                          const Eigen::Ref<const Eigen::VectorXd>& u) {
  Eigen::VectorXd Mu = Tridiag::mass(mesh).apply(u);
  return std::sqrt(u.dot(Mu));
}

inline double inner_with_mode(const FemMesh& mesh,
                              const Eigen::Ref<const Eigen::VectorXd>& u,
                              int mode) {
  return u.dot(sine_load(mesh, mode));
}

// Exact L^2 distance between a mesh function and an eigen expansion:
// |u|^2 + |c|^2 - 2 sum_j c_j <u, e_j>, every term in closed form.
inline double l2_distance_to_modes(const FemMesh& mesh,
                                   const Eigen::Ref<const Eigen::VectorXd>& u,
                                   const SpectralBasis& basis,
                                   const Eigen::Ref<const Eigen::VectorXd>& c) {
  check_coeffs(basis, c);
  if (!basis.is_laplacian())
    throw std::logic_error("l2_distance_to_modes: needs the Laplacian basis");
  double uu = l2_norm_fem(mesh, u);
  double cross = 0.0;
  for (int j = 0; j < basis.size(); ++j)
    if (c[j] != 0.0) cross += c[j] * inner_with_mode(mesh, u, j + 1);
  double d2 = uu * uu + c.squaredNorm() - 2.0 * cross;
  return std::sqrt(std::max(d2, 0.0));
}

// L^2 projection of an eigen expansion: loads are exact, so the result is
// the exact projector image of the truncated series.
inline Eigen::VectorXd project_spectral(const FemMesh& mesh,
                                        const Eigen::Ref<const Eigen::VectorXd>& c) {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(mesh.n_dof());
  for (int j = 0; j < c.size(); ++j)
    if (c[j] != 0.0) b += c[j] * sine_load(mesh, j + 1);
  return TridiagSolver(Tridiag::mass(mesh)).solve(b);
}

// One application of the implicit step resolvent to a mesh function:
// w = (M + k S)^(-1) M v.
class FemStepOperator {
public:
  FemStepOperator(const FemMesh& mesh, double k)
      : mass_(Tridiag::mass(mesh)), solver_(step_matrix(mesh, k)) {}
  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& v) const {
    return solver_.solve(mass_.apply(v));
  }

private:
  static Tridiag step_matrix(const FemMesh& mesh, double k) {
    if (!(k > 0.0)) throw std::invalid_argument("FemStepOperator: k must be > 0");
    return Tridiag::mass(mesh).plus_scaled(k, Tridiag::stiffness(mesh));
  }

  Tridiag mass_;
  TridiagSolver solver_;
};

// Normalized smoothing quantity of the discrete flow: with the pencil (or
// any supplied) eigenvalues, t_m^(rho/2) * max_j lambda_j^(rho/2) (1 + k
// lambda_j)^(-m).  Bounded in (h, k, m) exactly when the discrete smoothing
// bound holds with constant D_rho.
inline double discrete_smoothing_constant(const std::vector<double>& eigenvalues,
                                          double k, int m, double rho) {
  if (!(k > 0.0) || m < 1 || !(rho >= 0.0))
    throw std::invalid_argument(
        "discrete_smoothing_constant: need k > 0, m >= 1, rho >= 0");
  double mx = 0.0;
  for (double lam : eigenvalues) {
    if (!(lam > 0.0))
      throw std::invalid_argument("discrete_smoothing_constant: eigenvalues > 0");
    double v = std::pow(lam, 0.5 * rho) * std::pow(1.0 + k * lam, -double(m));
    mx = std::max(mx, v);
  }
  return std::pow(m * k, 0.5 * rho) * mx;
}

inline std::vector<double> pencil_eigenvalues(const FemMesh& mesh) {
  std::vector<double> eigs(static_cast<std::size_t>(mesh.n_dof()));
  for (int j = 1; j <= mesh.n_dof(); ++j)
    eigs[static_cast<std::size_t>(j - 1)] = fem_pencil_eigenvalue(mesh, j);
  return eigs;
}

// Load vector of a finite eigen expansion: (modal_load(c))_i = <sum_j c_j e_j,
// phi_i>, so u . modal_load(c) is the exact L^2 pairing of a mesh function
// with the expansion.
inline Eigen::VectorXd modal_load(const FemMesh& mesh,
                                  const Eigen::Ref<const Eigen::VectorXd>& c) {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(mesh.n_dof());
  for (int j = 0; j < c.size(); ++j)
    if (c[j] != 0.0) b += c[j] * sine_load(mesh, j + 1);
  return b;
}

// Nodal values of a coarse mesh function at the interior nodes of a nested
// finer mesh (fine cell count a multiple of the coarse one).  A hat function
// on the coarse mesh is piecewise linear on the fine one, so this is the
// exact embedding of the coarse space into the fine space.  Barycentric
// weights are formed from integer node positions and are exact for dyadic
// refinement ratios.
inline Eigen::VectorXd prolong_nested(const FemMesh& coarse,
                                      const FemMesh& fine,
                                      const Eigen::Ref<const Eigen::VectorXd>& u) {
  int nc = coarse.n_cells(), nf = fine.n_cells();
  if (u.size() != coarse.n_dof())
    throw std::invalid_argument("prolong_nested: size mismatch");
  if (nf % nc != 0)
    throw std::invalid_argument("prolong_nested: meshes are not nested");
  // Coarse nodal value at coarse node index j, with zero boundary values.
  auto at = [&](long j) {
    return (j >= 1 && j <= nc - 1) ? u[static_cast<int>(j) - 1] : 0.0;
  };
  Eigen::VectorXd v(fine.n_dof());
  for (int i = 0; i < fine.n_dof(); ++i) {
    long num = static_cast<long>(i + 1) * nc; // fine node in coarse-cell units
    long cell = num / nf;
    double frac = static_cast<double>(num % nf) / nf;
    v[i] = frac == 0.0 ? at(cell) : (1.0 - frac) * at(cell) + frac * at(cell + 1);
  }
  return v;
}

// Measured operator ratio of the m-step error operator against a fractional
// power: max over probes of |(Shk^m - S(t_m)) A^(rho/2) v| / |v|, with the
// exact flow transferred to the mesh by nodal interpolation.  Decay in
// (t_m, h, k) diagnoses the assumed bound t_m^(-(rho+sigma)/2) (h^sigma +
// k^(sigma/2)).
inline double error_operator_norm(int m, int n_cells, double k, double rho,
                                  double sigma,
                                  const std::vector<Eigen::VectorXd>& probes) {
  if (m < 1) throw std::invalid_argument("error_operator_norm: m >= 1");
  if (!(sigma >= 0.0) || sigma > 2.0)
    throw std::invalid_argument("error_operator_norm: sigma in [0,2]");
  if (rho < -sigma || rho > std::min(1.0, 2.0 - sigma))
    throw std::invalid_argument(
        "error_operator_norm: rho in [-sigma, min(1, 2-sigma)]");
  if (probes.empty())
    throw std::invalid_argument("error_operator_norm: need probes");

  FemMesh mesh(n_cells);
  FemStepOperator step(mesh, k);
  double tm = m * k;
  double worst = 0.0;
  for (const auto& c : probes) {
    double vnorm = c.norm();
    if (!(vnorm > 0.0))
      throw std::invalid_argument("error_operator_norm: zero probe");
    Eigen::VectorXd y(c.size());
    for (int j = 0; j < c.size(); ++j) {
      double lam = (j + 1) * (j + 1) * std::numbers::pi * std::numbers::pi;
      y[j] = c[j] * std::pow(lam, 0.5 * rho);
    }
    // Discrete flow: project once, then m resolvent applications.
    Eigen::VectorXd u = project_spectral(mesh, y);
    for (int i = 0; i < m; ++i) u = step.apply(u);
    // Exact flow, interpolated at the nodes.
    Eigen::VectorXd exact = Eigen::VectorXd::Zero(mesh.n_dof());
    for (int i = 1; i <= mesh.n_dof(); ++i) {
      double xi = mesh.node(i - 1);
      double acc = 0.0;
      for (int j = 0; j < y.size(); ++j) {
        double lam = (j + 1) * (j + 1) * std::numbers::pi * std::numbers::pi;
        acc += y[j] * std::exp(-lam * tm) * std::numbers::sqrt2 *
               std::sin((j + 1) * std::numbers::pi * xi);
      }
      exact[i - 1] = acc;
    }
    worst = std::max(worst, l2_norm_fem(mesh, u - exact) / vnorm);
  }
  return worst;
}

} // namespace levyheat
