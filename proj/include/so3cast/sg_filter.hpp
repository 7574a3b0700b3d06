#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

#include "so3cast/so3.hpp"

namespace so3cast::sg {

using so3::Rotation;
using so3::TangentVec;

/// A window of 2n+1 timestamped rotations with a designated anchor sample.
/// The anchor need not be central: extrapolation windows anchor at the most
/// recent sample.
struct SgWindow {
  int anchor_idx = 0;   // index into times/rotations
  int half_width = 0;   // n; window length is 2n+1
  int order = 2;        // p; polynomial degree in the Lie algebra
  std::vector<double> times;
  std::vector<Rotation> rotations;

  int size() const { return static_cast<int>(times.size()); }
  double anchor_time() const { return times[anchor_idx]; }
  const Rotation& anchor_rot() const { return rotations[anchor_idx]; }

  /// Checks 2n+1 >= p+1, matching array sizes, strictly increasing times,
  /// and that every sample stays below the log singularity relative to the
  /// anchor. Throws on violation.
  void validate() const;
};

/// Per-sample regression weights. The raw parameters are unconstrained;
/// the effective diagonal is softplus(raw) (x) I_3, which keeps the normal
/// equations positive definite for any raw value.
struct SgWeights {
  Eigen::VectorXd raw;

  static SgWeights identity(int window_len);  // softplus(raw) == 1
  Eigen::VectorXd effective() const;          // softplus, elementwise
  Eigen::VectorXd effective_grad() const;     // d softplus / d raw (sigmoid)
};

/// Quadratic Lie-algebra polynomial p(tau) = rho0 + rho1 tau + 1/2 rho2 tau^2
/// anchored at (anchor_time, anchor_rot); the smoothed path is
/// phi(t) = Exp(p(t - anchor_time)) * anchor_rot.
struct SgFit {
  TangentVec rho0 = TangentVec::Zero();
  TangentVec rho1 = TangentVec::Zero();
  TangentVec rho2 = TangentVec::Zero();
  double anchor_time = 0.0;
  Rotation anchor_rot = Rotation::Identity();
  double fd_step = 1e-5;  // time step for the second-derivative differences

  TangentVec poly(double tau) const { return rho0 + rho1 * tau + 0.5 * tau * tau * rho2; }
  TangentVec poly_dot(double tau) const { return rho1 + tau * rho2; }
  Eigen::Matrix<double, 9, 1> stacked() const;
  static SgFit from_stacked(const Eigen::Matrix<double, 9, 1>& rho, double anchor_time,
                            const Rotation& anchor_rot, double fd_step);
};

/// Design matrix A = Ahat (x) I_3 (3(2n+1) x 9) and residual vector b with
/// block m = vee(Log(x_m x_k^-1)). Row block m of Ahat is
/// [1, (t_m - t_k), 1/2 (t_m - t_k)^2].
std::pair<Eigen::MatrixXd, Eigen::VectorXd> build_design(const SgWindow& window);

/// Closed-form weighted least squares rho = (A^T W A)^-1 A^T W b; weights
/// omitted means W = I. Throws SingularNormalEquations if the Cholesky
/// factorization fails (duplicated timestamps).
SgFit fit(const SgWindow& window, const SgWeights* weights = nullptr);

/// phi(t) = Exp(p(t - t_k)) * x_k. Throws PolynomialOutOfInjectiveRange once
/// ||p|| reaches pi.
Rotation eval_path(const SgFit& fit, double t);

/// First derivative analytically via the right Jacobian,
///   dX(t) = Exp(p) hat(Jr(p) pdot) x_k  ( = phi(t) hat(omega_body) ),
/// second derivative by central differences of dX with step fit.fd_step.
void eval_derivatives(const SgFit& fit, double t, Eigen::Matrix3d& dx, Eigen::Matrix3d& d2x);

/// Window over the last 2n+1 samples, anchored at the most recent one.
/// Throws WindowTooLarge if the trajectory is shorter than 2n+1 and
/// NearPiSingularity if any sample is too far from the anchor.
SgWindow extrapolation_window(const std::vector<double>& times,
                              const std::vector<Rotation>& rotations, int n, int order = 2);

/// Exact Jacobian d rho / d w_eff (9 x (2n+1)):
/// column m is (A^T W A)^-1 A_m^T r_m with r = b - A rho. Used to push loss
/// gradients through the closed-form solve into the learnable weights.
Eigen::MatrixXd fit_weight_jacobian(const SgWindow& window, const SgWeights& weights,
                                    const SgFit& fit);

/// 2-norm bound ||(A^T W A)^-1|| * ||A^T W b|| certifying boundedness of the
/// returned coefficients (used by the property suites).
double coefficient_bound(const SgWindow& window, const SgWeights* weights = nullptr);

}  // namespace so3cast::sg
