#include "so3cast/sg_filter.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>

namespace so3cast::sg {

namespace {

double softplus(double x) {
  // overflow-safe: log(1 + e^x) = max(x, 0) + log1p(e^-|x|)
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void SgWindow::validate() const {
  const int len = 2 * half_width + 1;
  if (size() != len || static_cast<int>(rotations.size()) != len) {
    throw Error("SgWindow: times/rotations must hold exactly 2n+1 samples");
  }
  if (len < order + 1) {
    throw Error("SgWindow: need 2n+1 >= p+1 for full column rank");
  }
  if (anchor_idx < 0 || anchor_idx >= len) throw Error("SgWindow: anchor out of range");
  for (int m = 1; m < len; ++m) {
    if (!(times[m] > times[m - 1])) throw Error("SgWindow: times must be strictly increasing");
  }
  for (int m = 0; m < len; ++m) {
    const double angle = so3::rotation_angle(rotations[m] * anchor_rot().transpose());
    if (angle >= M_PI - so3::kLogEps) {
      throw NearPiSingularity("SgWindow: sample " + std::to_string(m) +
                              " is a near-pi rotation away from the anchor");
    }
  }
}

SgWeights SgWeights::identity(int window_len) {
  SgWeights w;
  // softplus(x) = 1  =>  x = log(e - 1)
  w.raw = Eigen::VectorXd::Constant(window_len, std::log(std::exp(1.0) - 1.0));
  return w;
}

Eigen::VectorXd SgWeights::effective() const {
  Eigen::VectorXd e(raw.size());
  for (Eigen::Index i = 0; i < raw.size(); ++i) e[i] = softplus(raw[i]);
  return e;
}

Eigen::VectorXd SgWeights::effective_grad() const {
  Eigen::VectorXd g(raw.size());
  for (Eigen::Index i = 0; i < raw.size(); ++i) g[i] = sigmoid(raw[i]);
  return g;
}

Eigen::Matrix<double, 9, 1> SgFit::stacked() const {
  Eigen::Matrix<double, 9, 1> rho;
  rho << rho0, rho1, rho2;
  return rho;
}

SgFit SgFit::from_stacked(const Eigen::Matrix<double, 9, 1>& rho, double anchor_time,
                          const Rotation& anchor_rot, double fd_step) {
  SgFit f;
  f.rho0 = rho.segment<3>(0);
  f.rho1 = rho.segment<3>(3);
  f.rho2 = rho.segment<3>(6);
  f.anchor_time = anchor_time;
  f.anchor_rot = anchor_rot;
  f.fd_step = fd_step;
  return f;
}

std::pair<Eigen::MatrixXd, Eigen::VectorXd> build_design(const SgWindow& window) {
  window.validate();
  const int len = window.size();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(3 * len, 9);
  Eigen::VectorXd b(3 * len);
  const Rotation anchor_inv = window.anchor_rot().transpose();
  for (int m = 0; m < len; ++m) {
    const double tau = window.times[m] - window.anchor_time();
    a.block<3, 3>(3 * m, 0) = Eigen::Matrix3d::Identity();
    a.block<3, 3>(3 * m, 3) = tau * Eigen::Matrix3d::Identity();
    a.block<3, 3>(3 * m, 6) = 0.5 * tau * tau * Eigen::Matrix3d::Identity();
    b.segment<3>(3 * m) = so3::log_map(window.rotations[m] * anchor_inv);
  }
  return {std::move(a), std::move(b)};
}

namespace {

Eigen::VectorXd expand_weights(const SgWindow& window, const SgWeights* weights) {
  const int len = window.size();
  Eigen::VectorXd w_eff = weights ? weights->effective() : Eigen::VectorXd::Ones(len);
  if (w_eff.size() != len) throw Error("SgWeights: size mismatch with window");
  Eigen::VectorXd w3(3 * len);
  for (int m = 0; m < len; ++m) w3.segment<3>(3 * m).setConstant(w_eff[m]);
  return w3;
}

double window_fd_step(const SgWindow& window) {
  const double span = window.times.back() - window.times.front();
  const double spacing = span / std::max(1, window.size() - 1);
  return std::min(1e-5, spacing / 100.0);
}

}  // namespace

SgFit fit(const SgWindow& window, const SgWeights* weights) {
  const auto [a, b] = build_design(window);
  const Eigen::VectorXd w3 = expand_weights(window, weights);
  const Eigen::MatrixXd awa = a.transpose() * w3.asDiagonal() * a;
  const Eigen::VectorXd awb = a.transpose() * w3.asDiagonal() * b;
  Eigen::LLT<Eigen::MatrixXd> llt(awa);
  if (llt.info() != Eigen::Success) {
    throw SingularNormalEquations("fit: A^T W A is not positive definite");
  }
  const Eigen::VectorXd rho = llt.solve(awb);
  return SgFit::from_stacked(rho, window.anchor_time(), window.anchor_rot(),
                             window_fd_step(window));
}

Rotation eval_path(const SgFit& fit, double t) {
  const TangentVec p = fit.poly(t - fit.anchor_time);
  if (p.norm() >= M_PI) {
    throw PolynomialOutOfInjectiveRange("eval_path: ||p(t)|| reached pi at t = " +
                                        std::to_string(t));
  }
  return so3::exp_map(p) * fit.anchor_rot;
}

namespace {

// d/dt [Exp(p(tau)) x_k] = Exp(p) hat(Jr(p) pdot) x_k
Eigen::Matrix3d path_derivative(const SgFit& fit, double t) {
  const double tau = t - fit.anchor_time;
  const TangentVec p = fit.poly(tau);
  if (p.norm() >= M_PI) {
    throw PolynomialOutOfInjectiveRange("eval_derivatives: ||p(t)|| reached pi at t = " +
                                        std::to_string(t));
  }
  const TangentVec omega = so3::right_jacobian(p) * fit.poly_dot(tau);
  return so3::exp_map(p) * so3::hat(omega) * fit.anchor_rot;
}

}  // namespace

void eval_derivatives(const SgFit& fit, double t, Eigen::Matrix3d& dx, Eigen::Matrix3d& d2x) {
  dx = path_derivative(fit, t);
  const double h = fit.fd_step;
  d2x = (path_derivative(fit, t + h) - path_derivative(fit, t - h)) / (2.0 * h);
}

SgWindow extrapolation_window(const std::vector<double>& times,
                              const std::vector<Rotation>& rotations, int n, int order) {
  const int len = 2 * n + 1;
  if (static_cast<int>(times.size()) < len) {
    throw WindowTooLarge("extrapolation_window: need at least " + std::to_string(len) +
                         " samples, have " + std::to_string(times.size()));
  }
  if (times.size() != rotations.size()) {
    throw Error("extrapolation_window: times/rotations size mismatch");
  }
  SgWindow w;
  w.half_width = n;
  w.order = order;
  w.anchor_idx = len - 1;  // most recent sample
  const std::size_t start = times.size() - static_cast<std::size_t>(len);
  w.times.assign(times.begin() + start, times.end());
  w.rotations.assign(rotations.begin() + start, rotations.end());
  w.validate();
  return w;
}

Eigen::MatrixXd fit_weight_jacobian(const SgWindow& window, const SgWeights& weights,
                                    const SgFit& fit) {
  const auto [a, b] = build_design(window);
  const Eigen::VectorXd w3 = expand_weights(window, &weights);
  const Eigen::MatrixXd awa = a.transpose() * w3.asDiagonal() * a;
  Eigen::LLT<Eigen::MatrixXd> llt(awa);
  if (llt.info() != Eigen::Success) {
    throw SingularNormalEquations("fit_weight_jacobian: A^T W A is not positive definite");
  }
  const Eigen::VectorXd residual = b - a * fit.stacked();
  const int len = window.size();
  Eigen::MatrixXd jac(9, len);
  for (int m = 0; m < len; ++m) {
    const Eigen::Matrix<double, 9, 1> rhs =
        a.middleRows<3>(3 * m).transpose() * residual.segment<3>(3 * m);
    jac.col(m) = llt.solve(rhs);
  }
  return jac;
}

double coefficient_bound(const SgWindow& window, const SgWeights* weights) {
  const auto [a, b] = build_design(window);
  const Eigen::VectorXd w3 = expand_weights(window, weights);
  const Eigen::MatrixXd awa = a.transpose() * w3.asDiagonal() * a;
  const Eigen::VectorXd awb = a.transpose() * w3.asDiagonal() * b;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(awa);
  const double lambda_min = es.eigenvalues().minCoeff();
  if (!(lambda_min > 0.0)) {
    throw SingularNormalEquations("coefficient_bound: A^T W A is not positive definite");
  }
  return awb.norm() / lambda_min;
}

}  // namespace so3cast::sg
