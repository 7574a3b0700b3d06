#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "so3cast/dataset.hpp"
#include "so3cast/mlp.hpp"
#include "so3cast/sg_filter.hpp"
#include "so3cast/so3.hpp"

namespace so3cast::cde {

using so3::Rotation;
using Vec10 = Eigen::Matrix<double, 10, 1>;

/// Channel layout of the control path X(t) = (t, flatten9(phi(t))).
inline constexpr int kChannels = 10;

struct CdeConfig {
  int latent_dim = 125;
  int hidden_dim = 128;
  int order = 1;         // 1: dz = f(z) dX; 2: dz = f(z) dX + g(z) d2X
  int sg_half_width = 6; // window 2n+1 over the conditioning samples
  std::uint64_t init_seed = 0;
};

struct CdeModel {
  CdeConfig cfg;
  Mlp encoder;  // 10 -> w, encodes (t0, flatten9(x0))
  Mlp field_f;  // w -> w*10, rows contract against dX
  Mlp field_g;  // w -> w*10, rows contract against d2X (order 2 only)
  Mlp decoder;  // w -> 6, Gram-Schmidt recovers the rotation
  sg::SgWeights sg_weights;

  static CdeModel create(const CdeConfig& cfg);
  long param_count() const;
  bool all_finite() const;
};

/// Second-order copy of a first-order model with g identically zero; its
/// forecasts must reproduce the first-order model's exactly.
CdeModel with_zero_second_order(const CdeModel& first_order);

/// Flat parameter vector in a fixed block order (encoder, f, g, decoder,
/// sg raw); used by the optimizer, checkpoints, and finite-difference tests.
Eigen::VectorXd flatten_params(const CdeModel& model);
void set_params(CdeModel& model, const Eigen::VectorXd& theta);

/// Gradient mirror of the trainable blocks.
struct CdeGradients {
  Mlp encoder, field_f, field_g, decoder;
  Eigen::VectorXd sg_raw;

  static CdeGradients zeros_like(const CdeModel& model);
  void add_scaled(const CdeGradients& other, double scale);
  bool all_finite() const;
};
Eigen::VectorXd flatten_gradients(const CdeModel& model, const CdeGradients& grads);

Eigen::VectorXd encode_initial(const CdeModel& model, double t0, const Rotation& x0);

/// dz = reshape(f(z), w x 10) * dX  [ + reshape(g(z), w x 10) * d2X ].
/// d2x may be null for first-order models (or a zeroed-out second order).
Eigen::VectorXd cde_rhs(const CdeModel& model, const Eigen::VectorXd& z, const Vec10& dx,
                        const Vec10* d2x);

/// Sum over prediction points of ||Log(y_k x_k^-1)||_F = sqrt(2) * angle.
/// Throws NearPiSingularity if any relative angle reaches pi - kLogEps.
double geodesic_loss(const std::vector<Rotation>& preds, const std::vector<Rotation>& truths);

/// Training-time variant: relative angles are clamped to pi - 1e-6 and
/// counted as anomalies instead of raising.
double geodesic_loss_clamped(const std::vector<Rotation>& preds,
                             const std::vector<Rotation>& truths, long* anomaly_count);

enum class PathKind { SavitzkyGolay, Hermite };

struct SolverSpec {
  bool adaptive = false;
  double rk4_dt = 0.025;  // fixed-step grid; targets must land on it
  double rtol = 1e-5;     // adaptive tolerances
  double atol = 1e-7;
};

struct ForecastResult {
  std::vector<double> times;
  std::vector<Rotation> predictions;
  std::vector<double> rge_deg;  // vs. ground truth, when provided
  long nfe = 0;
};

/// Fits the SG control path on the conditioning window, encodes z0 at the
/// first conditioning sample, integrates the CDE over [t0, max target], and
/// decodes 6D -> GSO at each target time. `truths` (optional, aligned with
/// target_times) fills per-step RGE.
ForecastResult solve_forward(const CdeModel& model, const std::vector<double>& cond_t,
                             const std::vector<Rotation>& cond_x,
                             const std::vector<double>& target_times,
                             const SolverSpec& solver = {},
                             PathKind path = PathKind::SavitzkyGolay,
                             const std::vector<Rotation>* truths = nullptr);

/// One conditioning/target segment with ground-truth supervision.
struct Segment {
  std::vector<double> cond_t;
  std::vector<Rotation> cond_x;     // noisy observations
  std::vector<double> target_t;
  std::vector<Rotation> target_x;   // clean ground truth
};

/// Taped fixed-step RK4 forward plus exact reverse-mode gradients through
/// GSO, the decoder, every RK4 stage, the vector fields, the encoder, and
/// the closed-form SG solve into the raw weights. Returns the mean loss
/// over segments; gradients are accumulated with the same 1/batch scale.
double loss_and_gradients(const CdeModel& model, const std::vector<Segment>& batch,
                          double rk4_dt, CdeGradients& grads, long* anomaly_count = nullptr,
                          long* nfe = nullptr);

/// Forward-only mean loss (same solver) for validation logging.
double batch_loss(const CdeModel& model, const std::vector<Segment>& batch, double rk4_dt,
                  long* anomaly_count = nullptr);

struct TrainConfig {
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 16;
  int steps = 1000;
  double cond_span = 1.2;
  double horizon = 0.8;
  double rk4_dt = 0.025;
  std::uint64_t seed = 0;
  int val_segments = 32;  // fixed validation set sampled once at start
};

struct StepLog {
  int step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double mean_nfe = 0.0;
  long anomalies = 0;
};

struct TrainMetrics {
  std::vector<StepLog> steps;
};

/// Adam on mini-batches of (cond_span, horizon) segments sampled uniformly
/// over train-split trajectories and offsets; validation loss on a fixed
/// val-split segment set every step. Deterministic given cfg.seed.
TrainMetrics train(CdeModel& model, const std::vector<data::TrajectoryRecord>& dataset,
                   const TrainConfig& cfg);

/// Cubic Hermite interpolation of the 10 channels (t, flatten9(x)) with
/// backward-difference tangents; constant-velocity linear extension past the
/// last knot. The baseline control path the SG path is compared against.
struct HermitePath {
  std::vector<double> t;
  std::vector<Vec10> x;
  std::vector<Vec10> m;  // knot tangents

  static HermitePath build(const std::vector<double>& times,
                           const std::vector<Rotation>& rotations);
  Vec10 value(double t) const;
  Vec10 deriv(double t) const;
  Vec10 second_deriv(double t) const;
};

/// JSON checkpoint: layer shapes, parameter arrays, sg raw weights, config
/// echo, format version.
void save_checkpoint(const CdeModel& model, const std::string& path);
CdeModel load_checkpoint(const std::string& path);

/// Uniform segment extraction used by train/eval: conditioning samples
/// [offset, offset+cond_len) and targets at the following horizon samples.
Segment make_segment(const data::TrajectoryRecord& rec, int offset, int cond_len,
                     int horizon_steps, bool relative_time = true);

}  // namespace so3cast::cde
