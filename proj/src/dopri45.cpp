#include "so3cast/dopri45.hpp"

#include <algorithm>
#include <cmath>

namespace so3cast::ode {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                 a75 = -2187.0 / 6784, a76 = 11.0 / 84;
// y1 - yhat1 (5th minus embedded 4th order).
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
// dense-output coefficients (Hairer's contd5).
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

constexpr double kSafety = 0.9;
constexpr double kBeta = 0.04;           // PI stabilization
constexpr double kExpo = 0.2 - kBeta * 0.75;
constexpr double kFacMin = 0.2, kFacMax = 10.0;

}  // namespace

Solution integrate_dopri45(const Rhs& f, double t0, const Eigen::VectorXd& y0,
                           double t_end, const Options& opts,
                           const std::vector<double>& dense_times,
                           const PostStep& post_step) {
  const auto n = y0.size();
  Solution sol;
  sol.t.push_back(t0);
  sol.y.push_back(y0);

  Eigen::VectorXd y = y0;
  Eigen::VectorXd k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n);
  Eigen::VectorXd ytmp(n), ynew(n), err(n);
  double t = t0;
  double dt = opts.dt_init;
  if (opts.dt_max > 0.0) dt = std::min(dt, opts.dt_max);
  dt = std::min(dt, t_end - t0);
  double facold = 1e-4;

  f(t, y, k1);
  sol.nfe++;

  std::size_t next_dense = 0;
  while (next_dense < dense_times.size() && dense_times[next_dense] <= t0) {
    sol.dense_y.push_back(y0);  // requested at (or numerically before) t0
    ++next_dense;
  }

  while (t < t_end) {
    if (dt < opts.dt_min) {
      throw StepSizeUnderflow("dopri45: step size underflow at t = " + std::to_string(t));
    }
    if (t + dt > t_end) dt = t_end - t;

    ytmp = y + dt * (a21 * k1);
    f(t + c2 * dt, ytmp, k2);
    ytmp = y + dt * (a31 * k1 + a32 * k2);
    f(t + c3 * dt, ytmp, k3);
    ytmp = y + dt * (a41 * k1 + a42 * k2 + a43 * k3);
    f(t + c4 * dt, ytmp, k4);
    ytmp = y + dt * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    f(t + c5 * dt, ytmp, k5);
    ytmp = y + dt * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    f(t + dt, ytmp, k6);
    ynew = y + dt * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    f(t + dt, ynew, k7);
    sol.nfe += 6;

    err = dt * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double err_norm = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double sc = opts.atol + opts.rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
      const double e = err[i] / sc;
      err_norm += e * e;
    }
    err_norm = std::sqrt(err_norm / static_cast<double>(n));

    if (err_norm <= 1.0) {
      // accepted: emit dense output over (t, t+dt] before advancing.
      if (next_dense < dense_times.size() && dense_times[next_dense] <= t + dt) {
        const Eigen::VectorXd ydiff = ynew - y;
        const Eigen::VectorXd bspl = dt * k1 - ydiff;
        const Eigen::VectorXd cont4 = ydiff - dt * k7 - bspl;
        const Eigen::VectorXd cont5 =
            dt * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
        while (next_dense < dense_times.size() && dense_times[next_dense] <= t + dt) {
          const double th = (dense_times[next_dense] - t) / dt;
          const double th1 = 1.0 - th;
          sol.dense_y.push_back(y + th * (ydiff + th1 * (bspl + th * (cont4 + th1 * cont5))));
          ++next_dense;
        }
      }

      t += dt;
      y = ynew;
      k1 = k7;  // FSAL
      if (post_step && post_step(y)) {
        f(t, y, k1);  // state was touched: the FSAL stage no longer matches
        sol.nfe++;
      }
      sol.t.push_back(t);
      sol.y.push_back(y);
      sol.n_accepted++;

      const double fac11 = std::pow(std::max(err_norm, 1e-10), kExpo);
      double fac = fac11 / std::pow(facold, kBeta);
      fac = std::clamp(fac / kSafety, 1.0 / kFacMax, 1.0 / kFacMin);
      dt = dt / fac;
      if (opts.dt_max > 0.0) dt = std::min(dt, opts.dt_max);
      facold = std::max(err_norm, 1e-4);
    } else {
      sol.n_rejected++;
      const double fac11 = std::pow(err_norm, kExpo);
      dt = dt / std::min(1.0 / kFacMin, fac11 / kSafety);
    }
  }

  // times requested at exactly t_end that were not flushed by the loop
  while (next_dense < dense_times.size()) {
    sol.dense_y.push_back(y);
    ++next_dense;
  }
  return sol;
}

}  // namespace so3cast::ode
