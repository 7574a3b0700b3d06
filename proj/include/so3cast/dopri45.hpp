#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

#include "so3cast/error.hpp"

namespace so3cast::ode {

/// Right-hand side y' = f(t, y) on a flat state vector.
using Rhs = std::function<void(double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy)>;

/// Optional hook applied to the state after every accepted step
/// (used for re-orthonormalizing embedded rotation blocks).
/// Must return true when it modified the state.
using PostStep = std::function<bool(Eigen::VectorXd& y)>;

struct Options {
  double rtol = 1e-6;
  double atol = 1e-9;
  double dt_init = 1e-2;
  double dt_min = 1e-12;   // below this the integration aborts
  double dt_max = 0.0;     // 0 = no cap
};

struct Solution {
  std::vector<double> t;                 // accepted step times, t0 first
  std::vector<Eigen::VectorXd> y;        // states at those times
  std::vector<Eigen::VectorXd> dense_y;  // states at the requested dense times
  long nfe = 0;                          // number of RHS evaluations
  long n_accepted = 0;
  long n_rejected = 0;
};

/// Adaptive Dormand-Prince 4(5) with PI step-size control and the classic
/// quartic dense-output interpolant. `dense_times` must be ascending and lie
/// in [t0, t_end]; each is evaluated from the interpolant of the step that
/// covers it, so output times are hit exactly without constraining the step
/// sequence. Throws StepSizeUnderflow if the controller drives dt below
/// opts.dt_min.
Solution integrate_dopri45(const Rhs& f, double t0, const Eigen::VectorXd& y0,
                           double t_end, const Options& opts,
                           const std::vector<double>& dense_times = {},
                           const PostStep& post_step = nullptr);

}  // namespace so3cast::ode
