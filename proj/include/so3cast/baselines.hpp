#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "so3cast/dataset.hpp"
#include "so3cast/neural_cde.hpp"
#include "so3cast/rigid_body.hpp"
#include "so3cast/sg_filter.hpp"
#include "so3cast/so3.hpp"

namespace so3cast::baselines {

using so3::Rotation;

/// Constant-velocity extrapolation from the last two observations:
/// w = vee(Log(x_N x_{N-1}^-1)) / dt, yhat(t) = Exp((t - t_N) w) x_N.
std::vector<Rotation> constant_velocity_forecast(const std::vector<double>& cond_t,
                                                 const std::vector<Rotation>& cond_x,
                                                 const std::vector<double>& targets);

/// Pure-filter baseline: evaluates the fitted SG path beyond the window.
std::vector<Rotation> sg_extrapolation_forecast(const sg::SgFit& fit,
                                                const std::vector<double>& targets);

/// Momentum-conditioned forward integration: w0 = J^-1 L, then free-rotation
/// dynamics (tau = 0) from (t_last, x_last) via adaptive DOPRI45.
std::vector<Rotation> conservational_forecast(const Rotation& x_last, double t_last,
                                              const Eigen::Vector3d& momentum_body,
                                              const sim::InertiaTensor& inertia,
                                              const std::vector<double>& targets,
                                              double rtol = 1e-9, double atol = 1e-9,
                                              long* nfe = nullptr);

struct EvalRow {
  std::string method;
  std::string scenario;
  double horizon_s = 0.0;
  double rge_mean_deg = 0.0;
  double rge_std_deg = 0.0;  // across per-trajectory means
  long n = 0;                // trajectory count
  double nfe_mean = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
};

struct EvalOptions {
  std::vector<double> horizons = {0.8, 1.2};
  std::string split = "test";
  int segment_stride = 10;   // conditioning-window start offsets
  double cond_span = 1.2;
  int sg_half_width = 6;
  // conservational momentum estimate L = J(w_true + eps) with
  // eps ~ N(0, (noise * |w_true|)^2 I). Negative means "use the dataset's
  // noise level delta"; zero evaluates with ground-truth momentum.
  double momentum_noise = -1.0;
  std::uint64_t seed = 0;
  // neural-CDE evaluation
  const cde::CdeModel* model = nullptr;
  bool adaptive = true;
  double rtol = 1e-5;
  double atol = 1e-7;
  double rk4_dt = 0.025;
  cde::PathKind path = cde::PathKind::SavitzkyGolay;
};

/// method: "cv" | "sg" | "conservational" | "cde". Per trajectory and
/// segment, predicts at t_N + horizon and scores RGE in degrees against the
/// clean channel; aggregates mean over segments per trajectory, then
/// mean +/- std across trajectories, grouped by resolved scenario.
EvalReport evaluate(const std::string& method,
                    const std::vector<data::TrajectoryRecord>& dataset,
                    const EvalOptions& opts);

void write_report_json(const std::string& path, const EvalReport& report);
EvalReport read_report_json(const std::string& path);
std::string format_report_table(const EvalReport& report);

/// Per-horizon CSV of the report rows plus S^2-projected trajectory tracks
/// (unit quaternion vector part, normalized) for the first s2_count
/// trajectories of the dataset when one is given.
void export_plot_data(const EvalReport& report, const std::string& out_dir,
                      const std::vector<data::TrajectoryRecord>* dataset = nullptr,
                      int s2_count = 4);

}  // namespace so3cast::baselines
