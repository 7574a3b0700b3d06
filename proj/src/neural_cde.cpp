#include "so3cast/neural_cde.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "so3cast/dopri45.hpp"
#include "so3cast/parallel.hpp"

namespace so3cast::cde {

namespace {

using Eigen::Matrix3d;
using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

constexpr double kSqrt2 = 1.4142135623730951;

Vec10 encoder_input(double t0, const Rotation& x0) {
  Vec10 in;
  in[0] = t0;
  in.tail<9>() = so3::flatten9(x0);
  return in;
}

}  // namespace

CdeModel CdeModel::create(const CdeConfig& cfg) {
  if (cfg.order != 1 && cfg.order != 2) throw ConfigError("CdeModel: order must be 1 or 2");
  if (cfg.latent_dim < 1 || cfg.hidden_dim < 1 || cfg.sg_half_width < 1) {
    throw ConfigError("CdeModel: dimensions must be positive");
  }
  CdeModel m;
  m.cfg = cfg;
  std::mt19937_64 rng(mix_seed(cfg.init_seed, 0x4d4f44454cull));
  const int w = cfg.latent_dim, h = cfg.hidden_dim;
  m.encoder = Mlp::create({kChannels, h, h, w}, rng);
  // near-zero output layer keeps the untrained flow close to identity
  m.field_f = Mlp::create({w, h, h, w * kChannels}, rng, 1e-3);
  if (cfg.order == 2) m.field_g = Mlp::create({w, h, h, w * kChannels}, rng, 1e-3);
  m.decoder = Mlp::create({w, h, 6}, rng);
  m.sg_weights = sg::SgWeights::identity(2 * cfg.sg_half_width + 1);
  return m;
}

long CdeModel::param_count() const {
  long count = encoder.param_count() + field_f.param_count() + decoder.param_count() +
               sg_weights.raw.size();
  if (cfg.order == 2) count += field_g.param_count();
  return count;
}

bool CdeModel::all_finite() const {
  if (!encoder.all_finite() || !field_f.all_finite() || !decoder.all_finite()) return false;
  if (cfg.order == 2 && !field_g.all_finite()) return false;
  return sg_weights.raw.allFinite();
}

CdeModel with_zero_second_order(const CdeModel& first_order) {
  if (first_order.cfg.order != 1) throw ConfigError("with_zero_second_order: want order 1");
  CdeModel m = first_order;
  m.cfg.order = 2;
  const int w = m.cfg.latent_dim, h = m.cfg.hidden_dim;
  std::mt19937_64 rng(0);
  m.field_g = Mlp::create({w, h, h, w * kChannels}, rng);
  m.field_g.set_zero();
  return m;
}

namespace {

void append_mlp(const Mlp& net, VectorXd& out, Eigen::Index& at) {
  for (std::size_t i = 0; i < net.w.size(); ++i) {
    for (int r = 0; r < net.w[i].rows(); ++r)
      for (int c = 0; c < net.w[i].cols(); ++c) out[at++] = net.w[i](r, c);
    for (int r = 0; r < net.b[i].size(); ++r) out[at++] = net.b[i][r];
  }
}

void read_mlp(Mlp& net, const VectorXd& in, Eigen::Index& at) {
  for (std::size_t i = 0; i < net.w.size(); ++i) {
    for (int r = 0; r < net.w[i].rows(); ++r)
      for (int c = 0; c < net.w[i].cols(); ++c) net.w[i](r, c) = in[at++];
    for (int r = 0; r < net.b[i].size(); ++r) net.b[i][r] = in[at++];
  }
}

}  // namespace

Eigen::VectorXd flatten_params(const CdeModel& model) {
  VectorXd theta(model.param_count());
  Eigen::Index at = 0;
  append_mlp(model.encoder, theta, at);
  append_mlp(model.field_f, theta, at);
  if (model.cfg.order == 2) append_mlp(model.field_g, theta, at);
  append_mlp(model.decoder, theta, at);
  theta.segment(at, model.sg_weights.raw.size()) = model.sg_weights.raw;
  return theta;
}

void set_params(CdeModel& model, const Eigen::VectorXd& theta) {
  if (theta.size() != model.param_count()) throw Error("set_params: size mismatch");
  Eigen::Index at = 0;
  read_mlp(model.encoder, theta, at);
  read_mlp(model.field_f, theta, at);
  if (model.cfg.order == 2) read_mlp(model.field_g, theta, at);
  read_mlp(model.decoder, theta, at);
  model.sg_weights.raw = theta.segment(at, model.sg_weights.raw.size());
}

CdeGradients CdeGradients::zeros_like(const CdeModel& model) {
  CdeGradients g;
  g.encoder = model.encoder.zeros_like();
  g.field_f = model.field_f.zeros_like();
  if (model.cfg.order == 2) g.field_g = model.field_g.zeros_like();
  g.decoder = model.decoder.zeros_like();
  g.sg_raw = VectorXd::Zero(model.sg_weights.raw.size());
  return g;
}

namespace {

void mlp_add_scaled(Mlp& into, const Mlp& from, double scale) {
  for (std::size_t i = 0; i < into.w.size(); ++i) {
    into.w[i] += scale * from.w[i];
    into.b[i] += scale * from.b[i];
  }
}

}  // namespace

void CdeGradients::add_scaled(const CdeGradients& other, double scale) {
  mlp_add_scaled(encoder, other.encoder, scale);
  mlp_add_scaled(field_f, other.field_f, scale);
  if (!field_g.w.empty()) mlp_add_scaled(field_g, other.field_g, scale);
  mlp_add_scaled(decoder, other.decoder, scale);
  sg_raw += scale * other.sg_raw;
}

bool CdeGradients::all_finite() const {
  if (!encoder.all_finite() || !field_f.all_finite() || !decoder.all_finite()) return false;
  if (!field_g.w.empty() && !field_g.all_finite()) return false;
  return sg_raw.allFinite();
}

Eigen::VectorXd flatten_gradients(const CdeModel& model, const CdeGradients& grads) {
  VectorXd flat(model.param_count());
  Eigen::Index at = 0;
  append_mlp(grads.encoder, flat, at);
  append_mlp(grads.field_f, flat, at);
  if (model.cfg.order == 2) append_mlp(grads.field_g, flat, at);
  append_mlp(grads.decoder, flat, at);
  flat.segment(at, grads.sg_raw.size()) = grads.sg_raw;
  return flat;
}

Eigen::VectorXd encode_initial(const CdeModel& model, double t0, const Rotation& x0) {
  return model.encoder.forward(encoder_input(t0, x0));
}

Eigen::VectorXd cde_rhs(const CdeModel& model, const Eigen::VectorXd& z, const Vec10& dx,
                        const Vec10* d2x) {
  const int w = model.cfg.latent_dim;
  const VectorXd fout = model.field_f.forward(z);
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  VectorXd dz = Eigen::Map<const RowMat>(fout.data(), w, kChannels) * dx;
  if (model.cfg.order == 2 && d2x != nullptr) {
    const VectorXd gout = model.field_g.forward(z);
    dz += Eigen::Map<const RowMat>(gout.data(), w, kChannels) * (*d2x);
  }
  return dz;
}

double geodesic_loss(const std::vector<Rotation>& preds, const std::vector<Rotation>& truths) {
  if (preds.size() != truths.size()) throw Error("geodesic_loss: size mismatch");
  double loss = 0.0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const double theta = so3::rotation_angle(preds[k] * truths[k].transpose());
    if (theta >= M_PI - so3::kLogEps) {
      throw NearPiSingularity("geodesic_loss: relative angle within kLogEps of pi");
    }
    loss += kSqrt2 * theta;
  }
  return loss;
}

double geodesic_loss_clamped(const std::vector<Rotation>& preds,
                             const std::vector<Rotation>& truths, long* anomaly_count) {
  if (preds.size() != truths.size()) throw Error("geodesic_loss_clamped: size mismatch");
  double loss = 0.0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    double theta = so3::rotation_angle(preds[k] * truths[k].transpose());
    if (theta > M_PI - 1e-6) {
      theta = M_PI - 1e-6;
      if (anomaly_count) ++*anomaly_count;
    }
    loss += kSqrt2 * theta;
  }
  return loss;
}

namespace {

// dL/dy of the clamped per-pair loss sqrt(2)*theta(y x^T); sin(theta) is
// floored so the gradient stays finite at both ends of [0, pi].
Matrix3d geodesic_pair_backward(const Rotation& y, const Rotation& x, double& loss,
                                long* anomaly_count) {
  double theta = so3::rotation_angle(y * x.transpose());
  if (theta > M_PI - 1e-6) {
    theta = M_PI - 1e-6;
    if (anomaly_count) ++*anomaly_count;
  }
  loss += kSqrt2 * theta;
  const double s = std::max(std::sin(theta), 1e-6);
  return (-kSqrt2 / (2.0 * s)) * x;
}

// VJP of from_6d_gso: maps dL/dR back to dL/d(6d columns).
so3::Vec6 gso_backward(const so3::Vec6& v, const Matrix3d& dr) {
  const Vector3d v1 = v.head<3>(), v2 = v.tail<3>();
  const double n1 = v1.norm();
  const Vector3d b1 = v1 / n1;
  const Vector3d u2 = v2 - b1.dot(v2) * b1;
  const double n2 = u2.norm();
  const Vector3d b2 = u2 / n2;

  const Vector3d g1 = dr.col(0), g2 = dr.col(1), g3 = dr.col(2);
  Vector3d db1 = g1 + b2.cross(g3);        // b3 = b1 x b2
  const Vector3d db2 = g2 + g3.cross(b1);
  const Vector3d du2 = (db2 - b2 * b2.dot(db2)) / n2;
  const Vector3d dv2 = du2 - b1 * b1.dot(du2);
  db1 += -du2.dot(b1) * v2 - b1.dot(v2) * du2;
  const Vector3d dv1 = (db1 - b1 * b1.dot(db1)) / n1;

  so3::Vec6 out;
  out << dv1, dv2;
  return out;
}

// Control-path channel evaluation: c = (1, flatten9(dX)), c2 = (0, flatten9(d2X)).
struct SgPathEval {
  sg::SgFit fit;
  void eval(double t, Vec10& c, Vec10* c2) const {
    Matrix3d dx, d2x;
    sg::eval_derivatives(fit, t, dx, d2x);
    c[0] = 1.0;
    c.tail<9>() = so3::flatten9(dx);
    if (c2) {
      (*c2)[0] = 0.0;
      c2->tail<9>() = so3::flatten9(d2x);
    }
  }
};

struct HermitePathEval {
  HermitePath path;
  void eval(double t, Vec10& c, Vec10* c2) const {
    c = path.deriv(t);
    if (c2) *c2 = path.second_deriv(t);
  }
};

struct FixedGrid {
  double t0 = 0.0;
  double dt = 0.025;
  int n_steps = 0;
  std::vector<int> target_indices;  // grid index of each target time

  static FixedGrid build(double t0, const std::vector<double>& targets, double dt) {
    FixedGrid g;
    g.t0 = t0;
    g.dt = dt;
    const double t_end = targets.back();
    g.n_steps = static_cast<int>(std::llround((t_end - t0) / dt));
    if (std::abs(t0 + g.n_steps * dt - t_end) > 1e-9) {
      throw ConfigError("fixed-step solve: horizon is not a multiple of rk4_dt");
    }
    for (double tt : targets) {
      const int idx = static_cast<int>(std::llround((tt - t0) / dt));
      if (idx < 0 || idx > g.n_steps || std::abs(t0 + idx * dt - tt) > 1e-9) {
        throw ConfigError("fixed-step solve: target time off the step grid");
      }
      g.target_indices.push_back(idx);
    }
    return g;
  }
  double time_at(int idx) const { return t0 + idx * dt; }
};

// Taped fixed-step RK4 pass. Channel vectors are cached at grid points and
// midpoints; stage slopes k1..k3 are cached per step for the reverse sweep.
struct RkForward {
  FixedGrid grid;
  std::vector<VectorXd> z;             // states at grid points, size n_steps+1
  std::vector<VectorXd> k1, k2, k3;    // per step
  std::vector<Vec10> c_grid, c_mid;    // dX channels
  std::vector<Vec10> c2_grid, c2_mid;  // d2X channels (order 2)
  long nfe = 0;
};

template <typename PathEval>
RkForward rk4_forward(const CdeModel& model, const PathEval& path, const VectorXd& z0,
                      const FixedGrid& grid) {
  const bool second = model.cfg.order == 2;
  RkForward fw;
  fw.grid = grid;
  const int n = grid.n_steps;
  fw.z.reserve(n + 1);
  fw.c_grid.resize(n + 1);
  fw.c_mid.resize(n);
  if (second) {
    fw.c2_grid.resize(n + 1);
    fw.c2_mid.resize(n);
  }
  for (int i = 0; i <= n; ++i) {
    path.eval(grid.time_at(i), fw.c_grid[i], second ? &fw.c2_grid[i] : nullptr);
    if (i < n) {
      path.eval(grid.t0 + (i + 0.5) * grid.dt, fw.c_mid[i], second ? &fw.c2_mid[i] : nullptr);
    }
  }

  VectorXd zc = z0;
  fw.z.push_back(zc);
  const double h = grid.dt;
  for (int i = 0; i < n; ++i) {
    const Vec10* c2g = second ? &fw.c2_grid[i] : nullptr;
    const Vec10* c2m = second ? &fw.c2_mid[i] : nullptr;
    const Vec10* c2g1 = second ? &fw.c2_grid[i + 1] : nullptr;
    const VectorXd s1 = cde_rhs(model, zc, fw.c_grid[i], c2g);
    const VectorXd s2 = cde_rhs(model, zc + 0.5 * h * s1, fw.c_mid[i], c2m);
    const VectorXd s3 = cde_rhs(model, zc + 0.5 * h * s2, fw.c_mid[i], c2m);
    const VectorXd s4 = cde_rhs(model, zc + h * s3, fw.c_grid[i + 1], c2g1);
    fw.nfe += 4;
    fw.k1.push_back(s1);
    fw.k2.push_back(s2);
    fw.k3.push_back(s3);
    zc += (h / 6.0) * (s1 + 2.0 * s2 + 2.0 * s3 + s4);
    if (!zc.allFinite()) throw NonFiniteState("rk4_forward: latent state diverged");
    fw.z.push_back(zc);
  }
  return fw;
}

// VJP of F(z) = f(z) c + g(z) c2 at one stage. Accumulates parameter grads
// and channel adjoints; returns dL/dz for the stage input.
VectorXd vjp_stage(const CdeModel& model, const VectorXd& z_stage, const Vec10& c,
                   const Vec10* c2, const VectorXd& a, CdeGradients& grads, Vec10& dc,
                   Vec10* dc2) {
  const int w = model.cfg.latent_dim;
  Mlp::Tape tape;
  const VectorXd fout = model.field_f.forward(z_stage, tape);
  VectorXd dfout(w * kChannels);
  for (int i = 0; i < w; ++i) {
    dfout.segment<kChannels>(i * kChannels) = a[i] * c;
    dc += a[i] * fout.segment<kChannels>(i * kChannels);
  }
  VectorXd dz = model.field_f.backward(tape, dfout, grads.field_f);
  if (model.cfg.order == 2 && c2 != nullptr) {
    Mlp::Tape tape_g;
    const VectorXd gout = model.field_g.forward(z_stage, tape_g);
    VectorXd dgout(w * kChannels);
    for (int i = 0; i < w; ++i) {
      dgout.segment<kChannels>(i * kChannels) = a[i] * (*c2);
      if (dc2) *dc2 += a[i] * gout.segment<kChannels>(i * kChannels);
    }
    dz += model.field_g.backward(tape_g, dgout, grads.field_g);
  }
  return dz;
}

struct SegmentWork {
  double loss = 0.0;
  CdeGradients grads;
  long anomalies = 0;
  long nfe = 0;
};

// Forward + reverse for one segment against the SG control path.
SegmentWork segment_backward(const CdeModel& model, const Segment& seg, double rk4_dt) {
  SegmentWork out;
  out.grads = CdeGradients::zeros_like(model);

  const auto window =
      sg::extrapolation_window(seg.cond_t, seg.cond_x, model.cfg.sg_half_width);
  const sg::SgFit fit = sg::fit(window, &model.sg_weights);
  SgPathEval path{fit};

  const double t0 = seg.cond_t.front();
  const Vec10 enc_in = encoder_input(t0, seg.cond_x.front());
  Mlp::Tape enc_tape;
  const VectorXd z0 = model.encoder.forward(enc_in, enc_tape);

  const FixedGrid grid = FixedGrid::build(t0, seg.target_t, rk4_dt);
  RkForward fw = rk4_forward(model, path, z0, grid);
  out.nfe = fw.nfe;

  // decode targets, collect per-state adjoints
  const int n = grid.n_steps;
  std::vector<VectorXd> dz_at(n + 1);
  for (std::size_t k = 0; k < seg.target_t.size(); ++k) {
    const int idx = grid.target_indices[k];
    Mlp::Tape dec_tape;
    const VectorXd v6vec = model.decoder.forward(fw.z[idx], dec_tape);
    const so3::Vec6 v6 = v6vec;
    const Rotation y = so3::from_6d_gso(v6);
    const Matrix3d dy = geodesic_pair_backward(y, seg.target_x[k], out.loss, &out.anomalies);
    const so3::Vec6 dv6 = gso_backward(v6, dy);
    const VectorXd dz = model.decoder.backward(dec_tape, dv6, out.grads.decoder);
    if (dz_at[idx].size() == 0) dz_at[idx] = dz;
    else dz_at[idx] += dz;
  }

  // reverse sweep through the RK4 steps
  const bool second = model.cfg.order == 2;
  const double h = grid.dt;
  std::vector<Vec10> dc_grid(n + 1, Vec10::Zero()), dc_mid(n, Vec10::Zero());
  std::vector<Vec10> dc2_grid, dc2_mid;
  if (second) {
    dc2_grid.assign(n + 1, Vec10::Zero());
    dc2_mid.assign(n, Vec10::Zero());
  }
  VectorXd a = VectorXd::Zero(model.cfg.latent_dim);
  if (dz_at[n].size() != 0) a += dz_at[n];
  for (int i = n - 1; i >= 0; --i) {
    const VectorXd& z0i = fw.z[i];
    const Vec10* c2g = second ? &fw.c2_grid[i] : nullptr;
    const Vec10* c2m = second ? &fw.c2_mid[i] : nullptr;
    const Vec10* c2g1 = second ? &fw.c2_grid[i + 1] : nullptr;
    Vec10* dc2g = second ? &dc2_grid[i] : nullptr;
    Vec10* dc2m = second ? &dc2_mid[i] : nullptr;
    Vec10* dc2g1 = second ? &dc2_grid[i + 1] : nullptr;

    VectorXd a_z0 = a;  // direct identity path z1 = z0 + ...
    const VectorXd a_k4 = (h / 6.0) * a;
    const VectorXd dz4 = vjp_stage(model, z0i + h * fw.k3[i], fw.c_grid[i + 1], c2g1, a_k4,
                                   out.grads, dc_grid[i + 1], dc2g1);
    a_z0 += dz4;
    const VectorXd a_k3 = (h / 3.0) * a + h * dz4;
    const VectorXd dz3 = vjp_stage(model, z0i + 0.5 * h * fw.k2[i], fw.c_mid[i], c2m, a_k3,
                                   out.grads, dc_mid[i], dc2m);
    a_z0 += dz3;
    const VectorXd a_k2 = (h / 3.0) * a + 0.5 * h * dz3;
    const VectorXd dz2 = vjp_stage(model, z0i + 0.5 * h * fw.k1[i], fw.c_mid[i], c2m, a_k2,
                                   out.grads, dc_mid[i], dc2m);
    a_z0 += dz2;
    const VectorXd a_k1 = (h / 6.0) * a + 0.5 * h * dz2;
    const VectorXd dz1 =
        vjp_stage(model, z0i, fw.c_grid[i], c2g, a_k1, out.grads, dc_grid[i], dc2g);
    a_z0 += dz1;
    a = a_z0;
    if (dz_at[i].size() != 0) a += dz_at[i];
  }

  // encoder
  model.encoder.backward(enc_tape, a, out.grads.encoder);

  // channel adjoints -> rho via central differences of the path derivatives
  Eigen::Matrix<double, 9, 1> drho = Eigen::Matrix<double, 9, 1>::Zero();
  const Eigen::Matrix<double, 9, 1> rho = fit.stacked();
  for (int j = 0; j < 9; ++j) {
    const double hj = 1e-6 * std::max(1.0, std::abs(rho[j]));
    Eigen::Matrix<double, 9, 1> rp = rho, rm = rho;
    rp[j] += hj;
    rm[j] -= hj;
    const sg::SgFit fp =
        sg::SgFit::from_stacked(rp, fit.anchor_time, fit.anchor_rot, fit.fd_step);
    const sg::SgFit fm =
        sg::SgFit::from_stacked(rm, fit.anchor_time, fit.anchor_rot, fit.fd_step);
    double acc = 0.0;
    auto accumulate = [&](double t, const Vec10& dc, const Vec10* dc2) {
      const bool need_dx = (dc.tail<9>().array() != 0.0).any();
      const bool need_d2x = second && dc2 && (dc2->tail<9>().array() != 0.0).any();
      if (!need_dx && !need_d2x) return;
      Matrix3d dxp, d2xp, dxm, d2xm;
      sg::eval_derivatives(fp, t, dxp, d2xp);
      sg::eval_derivatives(fm, t, dxm, d2xm);
      if (need_dx) {
        acc += dc.tail<9>().dot((so3::flatten9(dxp) - so3::flatten9(dxm)) / (2.0 * hj));
      }
      if (need_d2x) {
        acc += dc2->tail<9>().dot((so3::flatten9(d2xp) - so3::flatten9(d2xm)) / (2.0 * hj));
      }
    };
    for (int i = 0; i <= n; ++i) {
      accumulate(grid.time_at(i), dc_grid[i], second ? &dc2_grid[i] : nullptr);
    }
    for (int i = 0; i < n; ++i) {
      accumulate(grid.t0 + (i + 0.5) * grid.dt, dc_mid[i], second ? &dc2_mid[i] : nullptr);
    }
    drho[j] = acc;
  }

  // rho -> effective weights -> raw weights
  const MatrixXd jac = sg::fit_weight_jacobian(window, model.sg_weights, fit);
  const VectorXd dw_eff = jac.transpose() * drho;
  out.grads.sg_raw += dw_eff.cwiseProduct(model.sg_weights.effective_grad());

  if (!out.grads.all_finite()) {
    throw NonFiniteGradient("segment_backward: non-finite gradient");
  }
  return out;
}

}  // namespace

double loss_and_gradients(const CdeModel& model, const std::vector<Segment>& batch,
                          double rk4_dt, CdeGradients& grads, long* anomaly_count,
                          long* nfe) {
  if (batch.empty()) throw Error("loss_and_gradients: empty batch");
  std::vector<SegmentWork> work(batch.size());
  parallel_for(batch.size(),
               [&](std::size_t i) { work[i] = segment_backward(model, batch[i], rk4_dt); });
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& wk : work) {  // ordered reduction keeps results deterministic
    loss += inv_b * wk.loss;
    grads.add_scaled(wk.grads, inv_b);
    if (anomaly_count) *anomaly_count += wk.anomalies;
    if (nfe) *nfe += wk.nfe;
  }
  return loss;
}

double batch_loss(const CdeModel& model, const std::vector<Segment>& batch, double rk4_dt,
                  long* anomaly_count) {
  if (batch.empty()) throw Error("batch_loss: empty batch");
  std::vector<double> losses(batch.size(), 0.0);
  std::vector<long> anomalies(batch.size(), 0);
  SolverSpec solver;
  solver.adaptive = false;
  solver.rk4_dt = rk4_dt;
  parallel_for(batch.size(), [&](std::size_t i) {
    const auto& seg = batch[i];
    const auto result = solve_forward(model, seg.cond_t, seg.cond_x, seg.target_t, solver);
    losses[i] = geodesic_loss_clamped(result.predictions, seg.target_x, &anomalies[i]);
  });
  double loss = 0.0;
  long anom = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    loss += losses[i];
    anom += anomalies[i];
  }
  if (anomaly_count) *anomaly_count += anom;
  return loss / static_cast<double>(batch.size());
}

namespace {

template <typename PathEval>
ForecastResult solve_with_path(const CdeModel& model, const PathEval& path, double t0,
                               const Eigen::VectorXd& z0,
                               const std::vector<double>& target_times,
                               const SolverSpec& solver) {
  ForecastResult out;
  out.times = target_times;
  std::vector<Eigen::VectorXd> z_targets;

  if (!solver.adaptive) {
    const FixedGrid grid = FixedGrid::build(t0, target_times, solver.rk4_dt);
    const RkForward fw = rk4_forward(model, path, z0, grid);
    out.nfe = fw.nfe;
    for (int idx : grid.target_indices) z_targets.push_back(fw.z[idx]);
  } else {
    const bool second = model.cfg.order == 2;
    ode::Rhs rhs = [&](double t, const Eigen::VectorXd& z, Eigen::VectorXd& dz) {
      Vec10 c;
      Vec10 c2;
      path.eval(t, c, second ? &c2 : nullptr);
      dz = cde_rhs(model, z, c, second ? &c2 : nullptr);
    };
    ode::Options opts;
    opts.rtol = solver.rtol;
    opts.atol = solver.atol;
    opts.dt_init = 0.01;
    const auto sol =
        ode::integrate_dopri45(rhs, t0, z0, target_times.back(), opts, target_times);
    out.nfe = sol.nfe;
    z_targets = sol.dense_y;
  }

  for (const auto& z : z_targets) {
    if (!z.allFinite()) throw NonFiniteState("solve_forward: latent state diverged");
    const so3::Vec6 v6 = model.decoder.forward(z);
    out.predictions.push_back(so3::from_6d_gso(v6));
  }
  return out;
}

}  // namespace

ForecastResult solve_forward(const CdeModel& model, const std::vector<double>& cond_t,
                             const std::vector<Rotation>& cond_x,
                             const std::vector<double>& target_times,
                             const SolverSpec& solver, PathKind path,
                             const std::vector<Rotation>* truths) {
  if (cond_t.size() != cond_x.size() || cond_t.empty()) {
    throw Error("solve_forward: bad conditioning input");
  }
  if (target_times.empty()) throw Error("solve_forward: no target times");

  const double t0 = cond_t.front();
  const Eigen::VectorXd z0 = encode_initial(model, t0, cond_x.front());

  ForecastResult out;
  if (path == PathKind::SavitzkyGolay) {
    const auto window = sg::extrapolation_window(cond_t, cond_x, model.cfg.sg_half_width);
    const SgPathEval pe{sg::fit(window, &model.sg_weights)};
    out = solve_with_path(model, pe, t0, z0, target_times, solver);
  } else {
    const HermitePathEval pe{HermitePath::build(cond_t, cond_x)};
    out = solve_with_path(model, pe, t0, z0, target_times, solver);
  }

  if (truths != nullptr) {
    if (truths->size() != target_times.size()) throw Error("solve_forward: truths size");
    for (std::size_t k = 0; k < out.predictions.size(); ++k) {
      out.rge_deg.push_back(so3::rge(out.predictions[k], (*truths)[k]) * 180.0 / M_PI);
    }
  }
  return out;
}

namespace {

struct Adam {
  double lr, beta1, beta2, eps;
  Eigen::VectorXd m, v;
  long t = 0;

  Adam(double lr_, double b1, double b2, double eps_, Eigen::Index n)
      : lr(lr_), beta1(b1), beta2(b2), eps(eps_), m(Eigen::VectorXd::Zero(n)),
        v(Eigen::VectorXd::Zero(n)) {}

  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& g) {
    ++t;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    const Eigen::VectorXd denom =
        ((v / bc2).cwiseSqrt().array() + eps).matrix();
    theta -= (lr / bc1) * m.cwiseQuotient(denom);
  }
};

int infer_cond_len(const data::TrajectoryRecord& rec, double span) {
  const double obs_dt = rec.t[1] - rec.t[0];
  return static_cast<int>(std::llround(span / obs_dt)) + 1;
}

}  // namespace

Segment make_segment(const data::TrajectoryRecord& rec, int offset, int cond_len,
                     int horizon_steps, bool relative_time) {
  const int total = cond_len + horizon_steps;
  if (offset < 0 || offset + total > static_cast<int>(rec.t.size())) {
    throw Error("make_segment: offset out of range");
  }
  Segment seg;
  const double shift = relative_time ? rec.t[offset] : 0.0;
  for (int i = 0; i < cond_len; ++i) {
    seg.cond_t.push_back(rec.t[offset + i] - shift);
    seg.cond_x.push_back(rec.noisy[offset + i]);
  }
  for (int i = 0; i < horizon_steps; ++i) {
    const int k = offset + cond_len + i;
    seg.target_t.push_back(rec.t[k] - shift);
    seg.target_x.push_back(rec.clean[k]);
  }
  return seg;
}

TrainMetrics train(CdeModel& model, const std::vector<data::TrajectoryRecord>& dataset,
                   const TrainConfig& cfg) {
  const auto train_recs = data::filter_split(dataset, "train");
  const auto val_recs = data::filter_split(dataset, "val");
  if (train_recs.empty()) throw ConfigError("train: dataset has no train split");

  const int cond_len = infer_cond_len(*train_recs.front(), cfg.cond_span);
  const double obs_dt = train_recs.front()->t[1] - train_recs.front()->t[0];
  const int horizon_steps = static_cast<int>(std::llround(cfg.horizon / obs_dt));
  if (std::abs((cond_len - 1) * obs_dt - cfg.cond_span) > 1e-9 ||
      std::abs(horizon_steps * obs_dt - cfg.horizon) > 1e-9) {
    throw ConfigError("train: cond_span and horizon must be multiples of the observation spacing");
  }
  const int total = cond_len + horizon_steps;

  auto draw_segment = [&](const std::vector<const data::TrajectoryRecord*>& recs,
                          std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, recs.size() - 1);
    const auto& rec = *recs[pick(rng)];
    const int max_offset = static_cast<int>(rec.t.size()) - total;
    if (max_offset < 0) throw ConfigError("train: trajectories shorter than one segment");
    std::uniform_int_distribution<int> off(0, max_offset);
    return make_segment(rec, off(rng), cond_len, horizon_steps);
  };

  // fixed validation set, drawn once
  std::vector<Segment> val_batch;
  if (!val_recs.empty() && cfg.val_segments > 0) {
    std::mt19937_64 val_rng(mix_seed(cfg.seed, 0x56414cull));
    for (int i = 0; i < cfg.val_segments; ++i) val_batch.push_back(draw_segment(val_recs, val_rng));
  }

  std::mt19937_64 rng(mix_seed(cfg.seed, 0x545241494eull));
  Eigen::VectorXd theta = flatten_params(model);
  Adam adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, theta.size());

  TrainMetrics metrics;
  metrics.steps.reserve(cfg.steps);
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<Segment> batch;
    batch.reserve(cfg.batch_size);
    for (int i = 0; i < cfg.batch_size; ++i) batch.push_back(draw_segment(train_recs, rng));

    CdeGradients grads = CdeGradients::zeros_like(model);
    long anomalies = 0, nfe = 0;
    const double train_loss = loss_and_gradients(model, batch, cfg.rk4_dt, grads, &anomalies, &nfe);
    const Eigen::VectorXd g = flatten_gradients(model, grads);
    adam.step(theta, g);
    set_params(model, theta);

    StepLog log;
    log.step = step;
    log.train_loss = train_loss;
    log.mean_nfe = static_cast<double>(nfe) / static_cast<double>(batch.size());
    log.anomalies = anomalies;
    if (!val_batch.empty()) log.val_loss = batch_loss(model, val_batch, cfg.rk4_dt);
    metrics.steps.push_back(log);
  }
  return metrics;
}

HermitePath HermitePath::build(const std::vector<double>& times,
                               const std::vector<Rotation>& rotations) {
  if (times.size() != rotations.size() || times.size() < 2) {
    throw Error("HermitePath: need at least two samples");
  }
  HermitePath p;
  p.t = times;
  for (std::size_t i = 0; i < times.size(); ++i) {
    Vec10 xi;
    xi[0] = times[i];
    xi.tail<9>() = so3::flatten9(rotations[i]);
    p.x.push_back(xi);
  }
  p.m.resize(p.x.size());
  p.m[0] = (p.x[1] - p.x[0]) / (times[1] - times[0]);
  for (std::size_t i = 1; i < p.x.size(); ++i) {
    p.m[i] = (p.x[i] - p.x[i - 1]) / (times[i] - times[i - 1]);  // backward difference
  }
  return p;
}

namespace {

// index of the segment [t_i, t_i+1) containing t (clamped to valid range)
std::size_t hermite_segment(const std::vector<double>& ts, double t) {
  if (t <= ts.front()) return 0;
  const auto it = std::upper_bound(ts.begin(), ts.end(), t);
  const std::size_t idx = static_cast<std::size_t>(it - ts.begin());
  return std::min(idx - 1, ts.size() - 2);
}

}  // namespace

Vec10 HermitePath::value(double tq) const {
  if (tq >= t.back()) return x.back() + (tq - t.back()) * m.back();
  const std::size_t i = hermite_segment(t, tq);
  const double h = t[i + 1] - t[i];
  const double s = (tq - t[i]) / h;
  const double s2 = s * s, s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s;
  const double h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
  return h00 * x[i] + h10 * h * m[i] + h01 * x[i + 1] + h11 * h * m[i + 1];
}

Vec10 HermitePath::deriv(double tq) const {
  if (tq >= t.back()) return m.back();
  const std::size_t i = hermite_segment(t, tq);
  const double h = t[i + 1] - t[i];
  const double s = (tq - t[i]) / h;
  const double s2 = s * s;
  const double d00 = (6 * s2 - 6 * s) / h, d10 = 3 * s2 - 4 * s + 1;
  const double d01 = (-6 * s2 + 6 * s) / h, d11 = 3 * s2 - 2 * s;
  return d00 * x[i] + d10 * m[i] + d01 * x[i + 1] + d11 * m[i + 1];
}

Vec10 HermitePath::second_deriv(double tq) const {
  if (tq >= t.back()) return Vec10::Zero();
  const std::size_t i = hermite_segment(t, tq);
  const double h = t[i + 1] - t[i];
  const double s = (tq - t[i]) / h;
  const double a00 = (12 * s - 6) / (h * h), a10 = (6 * s - 4) / h;
  const double a01 = (-12 * s + 6) / (h * h), a11 = (6 * s - 2) / h;
  return a00 * x[i] + a10 * m[i] + a01 * x[i + 1] + a11 * m[i + 1];
}

namespace {

using nlohmann::json;

json mlp_to_json(const Mlp& net) {
  json layers = json::array();
  for (std::size_t i = 0; i < net.w.size(); ++i) {
    json layer;
    layer["shape"] = {net.w[i].rows(), net.w[i].cols()};
    json wj = json::array();
    for (int r = 0; r < net.w[i].rows(); ++r)
      for (int c = 0; c < net.w[i].cols(); ++c) wj.push_back(net.w[i](r, c));
    json bj = json::array();
    for (int r = 0; r < net.b[i].size(); ++r) bj.push_back(net.b[i][r]);
    layer["w"] = std::move(wj);
    layer["b"] = std::move(bj);
    layers.push_back(std::move(layer));
  }
  return layers;
}

// JSON has no NaN/inf; dump() writes them as null. Mapping null back to NaN
// keeps corrupted checkpoints detectable via all_finite().
double json_double(const json& v) {
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

Mlp mlp_from_json(const json& layers) {
  Mlp net;
  for (const auto& layer : layers) {
    const long rows = layer.at("shape").at(0).get<long>();
    const long cols = layer.at("shape").at(1).get<long>();
    Eigen::MatrixXd w(rows, cols);
    const auto& wj = layer.at("w");
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < cols; ++c) w(r, c) = json_double(wj.at(r * cols + c));
    Eigen::VectorXd b(rows);
    const auto& bj = layer.at("b");
    for (long r = 0; r < rows; ++r) b[r] = json_double(bj.at(r));
    net.w.push_back(std::move(w));
    net.b.push_back(std::move(b));
  }
  return net;
}

}  // namespace

void save_checkpoint(const CdeModel& model, const std::string& path) {
  json ckpt;
  ckpt["format_version"] = 1;
  ckpt["config"] = {{"latent_dim", model.cfg.latent_dim},
                    {"hidden_dim", model.cfg.hidden_dim},
                    {"order", model.cfg.order},
                    {"sg_half_width", model.cfg.sg_half_width},
                    {"init_seed", model.cfg.init_seed}};
  ckpt["encoder"] = mlp_to_json(model.encoder);
  ckpt["field_f"] = mlp_to_json(model.field_f);
  if (model.cfg.order == 2) ckpt["field_g"] = mlp_to_json(model.field_g);
  ckpt["decoder"] = mlp_to_json(model.decoder);
  json raw = json::array();
  for (int i = 0; i < model.sg_weights.raw.size(); ++i) raw.push_back(model.sg_weights.raw[i]);
  ckpt["sg_raw"] = std::move(raw);

  std::ofstream out(path);
  if (!out) throw IoError("save_checkpoint: cannot open " + path);
  out << ckpt.dump();
  if (!out) throw IoError("save_checkpoint: write failed for " + path);
}

CdeModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_checkpoint: cannot open " + path);
  json ckpt;
  try {
    in >> ckpt;
  } catch (const json::exception& e) {
    throw IoError("load_checkpoint: parse error in " + path + ": " + e.what());
  }
  if (ckpt.at("format_version").get<int>() != 1) {
    throw IoError("load_checkpoint: unsupported format version");
  }
  CdeModel m;
  try {
  const auto& cfg = ckpt.at("config");
  m.cfg.latent_dim = cfg.at("latent_dim").get<int>();
  m.cfg.hidden_dim = cfg.at("hidden_dim").get<int>();
  m.cfg.order = cfg.at("order").get<int>();
  m.cfg.sg_half_width = cfg.at("sg_half_width").get<int>();
  m.cfg.init_seed = cfg.at("init_seed").get<std::uint64_t>();
  m.encoder = mlp_from_json(ckpt.at("encoder"));
  m.field_f = mlp_from_json(ckpt.at("field_f"));
  if (m.cfg.order == 2) m.field_g = mlp_from_json(ckpt.at("field_g"));
  m.decoder = mlp_from_json(ckpt.at("decoder"));
  const auto& raw = ckpt.at("sg_raw");
  m.sg_weights.raw.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) m.sg_weights.raw[i] = json_double(raw.at(i));
  } catch (const json::exception& e) {
    throw IoError("load_checkpoint: malformed checkpoint " + path + ": " + e.what());
  }
  return m;
}

}  // namespace so3cast::cde
