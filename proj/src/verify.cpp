#include "so3cast/verify.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include "so3cast/baselines.hpp"
#include "so3cast/dataset.hpp"
#include "so3cast/neural_cde.hpp"
#include "so3cast/rigid_body.hpp"
#include "so3cast/sg_filter.hpp"
#include "so3cast/so3.hpp"

namespace so3cast::verify {

namespace {

using so3::Rotation;
using so3::TangentVec;

std::string fmt(double x) {
  std::stringstream ss;
  ss.precision(3);
  ss << std::scientific << x;
  return ss.str();
}

TangentVec random_tangent(std::mt19937_64& rng, double max_norm) {
  std::normal_distribution<double> n(0.0, 1.0);
  TangentVec v(n(rng), n(rng), n(rng));
  v.normalize();
  std::uniform_real_distribution<double> u(0.0, max_norm);
  return u(rng) * v;
}

CheckResult check(const std::string& name, const std::function<std::pair<bool, std::string>()>& fn) {
  CheckResult r;
  r.name = name;
  try {
    auto [ok, detail] = fn();
    r.pass = ok;
    r.detail = detail;
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("exception: ") + e.what();
  }
  return r;
}

// ---------- so3 ----------

std::pair<bool, std::string> hat_antisymmetry() {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 2.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const TangentVec v(n(rng), n(rng), n(rng));
    const Eigen::Matrix3d s = so3::hat(v);
    worst = std::max(worst, (s + s.transpose()).norm());
  }
  return {worst == 0.0, "max ||hat(v)+hat(v)^T|| = " + fmt(worst)};
}

std::pair<bool, std::string> exp_log_roundtrip() {
  std::mt19937_64 rng(12);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const TangentVec xi = random_tangent(rng, M_PI - 0.1);
    worst = std::max(worst, (so3::log_map(so3::exp_map(xi)) - xi).norm());
  }
  return {worst < 1e-9, "max roundtrip error = " + fmt(worst)};
}

std::pair<bool, std::string> rotation_invariants() {
  std::mt19937_64 rng(13);
  double worst = 0.0;
  auto score = [&](const Rotation& r) {
    worst = std::max(worst, so3::orthogonality_defect(r));
    worst = std::max(worst, std::abs(r.determinant() - 1.0));
  };
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    score(so3::exp_map(random_tangent(rng, M_PI - 0.01)));
    so3::Vec6 v;
    for (int k = 0; k < 6; ++k) v[k] = n(rng);
    score(so3::from_6d_gso(v));
    score(so3::perturb(so3::random_rotation(rng), 0.05 * M_PI, rng));
  }
  return {worst < 1e-9, "max invariant defect = " + fmt(worst)};
}

std::pair<bool, std::string> rge_matches_geodesic() {
  std::mt19937_64 rng(14);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Rotation r1 = so3::random_rotation(rng);
    const Rotation r2 = so3::exp_map(random_tangent(rng, M_PI - 0.1)) * r1;
    worst = std::max(worst, std::abs(so3::rge(r1, r2) - so3::geodesic_dist(r1, r2)));
  }
  return {worst < 1e-9, "max |rge - geodesic| = " + fmt(worst)};
}

std::pair<bool, std::string> geodesic_bi_invariance() {
  std::mt19937_64 rng(15);
  double worst = 0.0;
  for (int i = 0; i < 300; ++i) {
    const Rotation r1 = so3::random_rotation(rng);
    const Rotation r2 = so3::exp_map(random_tangent(rng, M_PI - 0.2)) * r1;
    const Rotation q = so3::random_rotation(rng);
    const double d = so3::geodesic_dist(r1, r2);
    worst = std::max(worst, std::abs(so3::geodesic_dist(q * r1, q * r2) - d));
    worst = std::max(worst, std::abs(so3::geodesic_dist(r1 * q, r2 * q) - d));
  }
  return {worst < 1e-9, "max invariance defect = " + fmt(worst)};
}

std::pair<bool, std::string> geodesic_triangle() {
  std::mt19937_64 rng(16);
  double worst = -1.0;
  for (int i = 0; i < 1000; ++i) {
    const Rotation a = so3::random_rotation(rng);
    const Rotation b = so3::exp_map(random_tangent(rng, 1.0)) * a;
    const Rotation c = so3::exp_map(random_tangent(rng, 1.0)) * b;
    const double lhs = so3::geodesic_dist(a, c);
    const double rhs = so3::geodesic_dist(a, b) + so3::geodesic_dist(b, c);
    worst = std::max(worst, lhs - rhs);
  }
  return {worst <= 1e-12, "max (d(a,c) - d(a,b) - d(b,c)) = " + fmt(worst)};
}

std::pair<bool, std::string> noise_mean_angle() {
  std::mt19937_64 rng(17);
  const double delta = 0.05 * M_PI;
  const Rotation x = so3::random_rotation(rng);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += so3::geodesic_dist(so3::perturb(x, delta, rng), x);
  const double expected = delta * std::sqrt(8.0 / M_PI);
  const double rel = std::abs(sum / n / expected - 1.0);
  return {rel < 0.02, "relative deviation from delta*sqrt(8/pi) = " + fmt(rel)};
}

std::pair<bool, std::string> haar_trace_density() {
  std::mt19937_64 rng(18);
  constexpr int kBins = 16;
  constexpr int kDraws = 100000;
  // Haar CDF of the rotation angle: F(theta) = (theta - sin theta) / pi
  auto cdf_theta = [](double th) { return (th - std::sin(th)) / M_PI; };
  std::array<long, kBins> observed{};
  for (int i = 0; i < kDraws; ++i) {
    const double tr = so3::random_rotation(rng).trace();
    int b = static_cast<int>((tr + 1.0) / 4.0 * kBins);
    b = std::clamp(b, 0, kBins - 1);
    observed[b]++;
  }
  double stat = 0.0;
  for (int b = 0; b < kBins; ++b) {
    const double lo = -1.0 + 4.0 * b / kBins, hi = -1.0 + 4.0 * (b + 1) / kBins;
    const double th_hi = std::acos(std::clamp((lo - 1.0) / 2.0, -1.0, 1.0));
    const double th_lo = std::acos(std::clamp((hi - 1.0) / 2.0, -1.0, 1.0));
    const double expected = kDraws * (cdf_theta(th_hi) - cdf_theta(th_lo));
    stat += (observed[b] - expected) * (observed[b] - expected) / expected;
  }
  // chi-square critical value, 15 dof, p = 0.01
  const double crit = 30.5779;
  return {stat < crit, "chi2 = " + fmt(stat) + " (crit 30.58)"};
}

// ---------- rigid body ----------

std::pair<bool, std::string> free_rotation_conservation() {
  sim::RigidBodyConfig cfg;
  cfg.inertia.j = Eigen::Vector3d(1.0, 2.0, 3.0);
  sim::BodyState s0;
  std::mt19937_64 rng(21);
  s0.r = so3::random_rotation(rng);
  s0.omega = TangentVec(0.7, -0.4, 0.5);
  const auto result = sim::integrate_dopri45(cfg, s0, 10.0, 1e-9, 1e-9);
  const double e0 = sim::kinetic_energy(cfg.inertia, s0.omega);
  const Eigen::Vector3d l0 = sim::world_momentum(cfg.inertia, s0);
  double worst_e = 0.0, worst_l = 0.0;
  const auto& traj = result.trajectory;
  for (std::size_t i = 0; i < traj.t.size(); ++i) {
    sim::BodyState s{traj.t[i], traj.r[i], traj.omega[i]};
    worst_e = std::max(worst_e, std::abs(sim::kinetic_energy(cfg.inertia, s.omega) - e0) / e0);
    worst_l = std::max(worst_l, (sim::world_momentum(cfg.inertia, s) - l0).norm() / l0.norm());
  }
  return {worst_e < 1e-6 && worst_l < 1e-6,
          "energy drift " + fmt(worst_e) + ", momentum drift " + fmt(worst_l)};
}

std::pair<bool, std::string> damping_decay() {
  sim::RigidBodyConfig cfg;
  cfg.scenario = sim::Scenario::VelocityDamping;
  cfg.inertia.j = Eigen::Vector3d::Ones();
  sim::BodyState s0;
  s0.omega = TangentVec(0.8, -0.3, 0.5);
  const auto result = sim::integrate_dopri45(cfg, s0, 10.0, 1e-9, 1e-9);
  const auto& traj = result.trajectory;
  bool monotone = true;
  for (std::size_t i = 1; i < traj.t.size(); ++i) {
    if (traj.omega[i].norm() > traj.omega[i - 1].norm() + 1e-9) monotone = false;
  }
  const double ratio = traj.omega.back().norm() / s0.omega.norm();
  const double rel = std::abs(ratio / std::exp(-2.0) - 1.0);
  return {monotone && rel < 0.01,
          "|w(10)|/|w(0)| = " + fmt(ratio) + ", deviation from e^-2 = " + fmt(rel)};
}

std::pair<bool, std::string> integrator_convergence() {
  sim::RigidBodyConfig cfg;
  cfg.inertia.j = Eigen::Vector3d(1.0, 2.0, 3.0);
  sim::BodyState s0;
  s0.omega = TangentVec(1.0, 0.3, -0.6);
  const std::vector<double> times = {5.0};
  const auto a = sim::simulate_at(cfg, s0, times, 1e-8, 1e-8);
  const auto b = sim::simulate_at(cfg, s0, times, 5e-9, 5e-9);
  const double dr = so3::rge(a.trajectory.r.back(), b.trajectory.r.back());
  const double dw = (a.trajectory.omega.back() - b.trajectory.omega.back()).norm();
  return {dr < 1e-6 && dw < 1e-6, "rotation diff " + fmt(dr) + ", omega diff " + fmt(dw)};
}

std::pair<bool, std::string> variable_dynamics_share() {
  data::DatasetSpec spec;
  spec.scenario = sim::Scenario::VariableDynamics;
  spec.count = 400;
  spec.t_end = 0.2;
  spec.delta = 0.0;
  spec.rtol = 1e-6;
  spec.atol = 1e-8;
  spec.seed = 22;
  const auto records = data::generate_dataset(spec);
  std::map<sim::Scenario, int> counts;
  for (const auto& r : records) counts[r.scenario]++;
  const double share = 400.0 / 4.0;
  bool ok = counts.size() == 4;
  std::stringstream detail;
  for (const auto& [sc, c] : counts) {
    ok = ok && std::abs(c - share) <= 0.1 * share;
    detail << sim::to_string(sc) << "=" << c << " ";
  }
  return {ok, detail.str()};
}

std::pair<bool, std::string> initial_omega_eta() {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 3000; ++i) {
    const TangentVec w = sim::sample_initial_omega(rng);
    if (!(w.cwiseAbs().minCoeff() > 0.1)) return {false, "component within eta"};
  }
  return {true, "3000 draws, all |component| > 0.1"};
}

std::pair<bool, std::string> inertia_sampling() {
  std::mt19937_64 rng(24);
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  const int n = 10000;
  for (int i = 0; i < n; ++i) mean += sim::sample_inertia(1, rng).j;
  mean /= n;
  const Eigen::Vector3d base(1.0, 2.0, 3.0);
  const double dev = (mean - base).cwiseAbs().maxCoeff();
  const bool exact = (sim::sample_inertia(2, rng, 0.0).j == Eigen::Vector3d(3.0, 1.0, 2.0));
  return {dev < 0.02 && exact, "max |mean - base| = " + fmt(dev)};
}

std::pair<bool, std::string> dataset_noise_level() {
  data::DatasetSpec spec;
  spec.count = 32;
  spec.t_end = 2.0;
  spec.delta = 0.05 * M_PI;
  spec.rtol = 1e-8;
  spec.atol = 1e-8;
  spec.seed = 25;
  const auto records = data::generate_dataset(spec);
  double sum = 0.0;
  long n = 0;
  for (const auto& rec : records) {
    for (std::size_t k = 0; k < rec.t.size(); ++k) {
      sum += so3::rge(rec.noisy[k], rec.clean[k]);
      ++n;
    }
  }
  const double expected = spec.delta * std::sqrt(8.0 / M_PI);
  const double rel = std::abs(sum / n / expected - 1.0);
  return {rel < 0.03, "relative deviation = " + fmt(rel)};
}

// ---------- SG filter ----------

sg::SgWindow synthetic_window(std::mt19937_64& rng, bool irregular, sg::SgFit* truth) {
  const int n = 6;
  sg::SgWindow w;
  w.half_width = n;
  w.anchor_idx = 2 * n;  // extrapolation layout
  std::uniform_real_distribution<double> jitter(-0.03, 0.03);
  for (int m = 0; m <= 2 * n; ++m) {
    double t = 0.1 * m;
    if (irregular && m > 0 && m < 2 * n) t += jitter(rng);
    w.times.push_back(t);
  }
  sg::SgFit gen;
  gen.anchor_time = w.times.back();
  gen.anchor_rot = so3::random_rotation(rng);
  // rho0 = 0 keeps the anchor observation on the generated path; a nonzero
  // rho0 would make the window inconsistent with its own anchor.
  gen.rho0 = TangentVec::Zero();
  gen.rho1 = random_tangent(rng, 0.8);
  gen.rho2 = random_tangent(rng, 0.8);
  for (int m = 0; m <= 2 * n; ++m) {
    w.rotations.push_back(sg::eval_path(gen, w.times[m]));
  }
  if (truth) *truth = gen;
  return w;
}

std::pair<bool, std::string> sg_exact_recovery() {
  std::mt19937_64 rng(31);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    sg::SgFit truth;
    const auto w = synthetic_window(rng, trial % 2 == 1, &truth);
    const auto fit = sg::fit(w);
    worst = std::max(worst, (fit.stacked() - truth.stacked()).norm());
  }
  return {worst < 1e-8, "max ||rho - rho*|| = " + fmt(worst)};
}

std::pair<bool, std::string> sg_identity_weights_match() {
  std::mt19937_64 rng(32);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    auto w = synthetic_window(rng, trial % 2 == 1, nullptr);
    for (auto& r : w.rotations) r = so3::perturb(r, 0.05, rng);
    const auto weights = sg::SgWeights::identity(w.size());
    worst = std::max(worst, (sg::fit(w, &weights).stacked() - sg::fit(w).stacked()).norm());
  }
  return {worst < 1e-12, "max ||rho_W=I - rho|| = " + fmt(worst)};
}

std::pair<bool, std::string> sg_normal_equations_spd() {
  std::mt19937_64 rng(33);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    auto w = synthetic_window(rng, trial % 2 == 1, nullptr);
    sg::SgWeights weights;
    weights.raw = Eigen::VectorXd::NullaryExpr(w.size(), [&]() { return 2.0 * n(rng); });
    sg::fit(w, &weights);  // throws SingularNormalEquations if not SPD
  }
  return {true, "Cholesky succeeded for 100 random weighted windows"};
}

std::pair<bool, std::string> sg_residual_optimality() {
  std::mt19937_64 rng(34);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    auto w = synthetic_window(rng, trial % 2 == 1, nullptr);
    for (auto& r : w.rotations) r = so3::perturb(r, 0.05, rng);
    sg::SgWeights weights;
    std::normal_distribution<double> n(0.0, 1.0);
    weights.raw = Eigen::VectorXd::NullaryExpr(w.size(), [&]() { return n(rng); });
    const auto fit = sg::fit(w, &weights);
    const auto [a, b] = sg::build_design(w);
    Eigen::VectorXd w3(3 * w.size());
    const Eigen::VectorXd we = weights.effective();
    for (int m = 0; m < w.size(); ++m) w3.segment<3>(3 * m).setConstant(we[m]);
    auto residual = [&](const Eigen::Matrix<double, 9, 1>& rho) {
      const Eigen::VectorXd r = a * rho - b;
      return r.cwiseProduct(w3.cwiseSqrt()).squaredNorm();
    };
    const double base = residual(fit.stacked());
    std::normal_distribution<double> dir(0.0, 1.0);
    for (int k = 0; k < 100; ++k) {
      Eigen::Matrix<double, 9, 1> d;
      for (int j = 0; j < 9; ++j) d[j] = dir(rng);
      d *= 1e-3 / d.norm();
      worst = std::max(worst, base - residual(fit.stacked() + d));
    }
  }
  return {worst <= 1e-12, "max residual decrease under perturbation = " + fmt(worst)};
}

std::pair<bool, std::string> sg_derivative_consistency() {
  std::mt19937_64 rng(35);
  double worst1 = 0.0, worst2 = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    sg::SgFit truth;
    auto w = synthetic_window(rng, trial % 2 == 1, &truth);
    for (auto& r : w.rotations) r = so3::perturb(r, 0.02, rng);
    const auto fit = sg::fit(w);
    std::uniform_real_distribution<double> pick(w.times.front(), w.times.back() + 0.5);
    const double t = pick(rng);
    Eigen::Matrix3d dx, d2x;
    sg::eval_derivatives(fit, t, dx, d2x);
    const double h = 1e-6;
    const Eigen::Matrix3d fd1 =
        (sg::eval_path(fit, t + h) - sg::eval_path(fit, t - h)) / (2.0 * h);
    const double h2 = 1e-4;
    const Eigen::Matrix3d fd2 = (sg::eval_path(fit, t + h2) - 2.0 * sg::eval_path(fit, t) +
                                 sg::eval_path(fit, t - h2)) /
                                (h2 * h2);
    worst1 = std::max(worst1, (dx - fd1).norm() / std::max(1e-12, fd1.norm()));
    worst2 = std::max(worst2, (d2x - fd2).norm() / std::max(1e-12, fd2.norm()));
  }
  return {worst1 < 1e-6 && worst2 < 1e-3,
          "dX rel err " + fmt(worst1) + ", d2X rel err " + fmt(worst2)};
}

std::pair<bool, std::string> sg_coefficient_bound() {
  std::mt19937_64 rng(36);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto w = synthetic_window(rng, trial % 2 == 1, nullptr);
    for (auto& r : w.rotations) r = so3::perturb(r, 0.05, rng);
    const auto fit = sg::fit(w);
    const double bound = sg::coefficient_bound(w);
    worst = std::max(worst, fit.stacked().norm() - bound * (1.0 + 1e-9));
  }
  return {worst <= 0.0, "max ||rho|| - bound = " + fmt(worst)};
}

std::pair<bool, std::string> sg_left_equivariance() {
  std::mt19937_64 rng(37);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    auto w = synthetic_window(rng, trial % 2 == 1, nullptr);
    for (auto& r : w.rotations) r = so3::perturb(r, 0.05, rng);
    const Rotation q = so3::random_rotation(rng);
    sg::SgWindow wq = w;
    for (auto& r : wq.rotations) r = q * r;
    const auto [a1, b1] = sg::build_design(w);
    const auto [a2, b2] = sg::build_design(wq);
    for (int m = 0; m < w.size(); ++m) {  // residuals rotate: b_m -> Q b_m
      worst = std::max(worst, (b2.segment<3>(3 * m) - q * b1.segment<3>(3 * m)).norm());
    }
    const auto f1 = sg::fit(w);
    const auto f2 = sg::fit(wq);
    worst = std::max(worst, (f2.rho0 - q * f1.rho0).norm());
    worst = std::max(worst, (f2.rho1 - q * f1.rho1).norm());
    worst = std::max(worst, (f2.rho2 - q * f1.rho2).norm());
    const double t = w.times.back() + 0.3;
    worst = std::max(worst, (sg::eval_path(f2, t) - q * sg::eval_path(f1, t)).norm());
  }
  return {worst < 1e-10, "max equivariance defect = " + fmt(worst)};
}

// ---------- neural CDE ----------

std::pair<bool, std::string> cde_decoded_invariants() {
  cde::CdeConfig cfg;
  cfg.latent_dim = 16;
  cfg.hidden_dim = 24;
  cfg.init_seed = 41;
  const auto model = cde::CdeModel::create(cfg);
  std::mt19937_64 rng(41);
  std::normal_distribution<double> n(0.0, 2.0);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    Eigen::VectorXd z(16);
    for (int k = 0; k < 16; ++k) z[k] = n(rng);
    const so3::Vec6 v6 = model.decoder.forward(z);
    const Rotation r = so3::from_6d_gso(v6);
    worst = std::max(worst, so3::orthogonality_defect(r));
    worst = std::max(worst, std::abs(r.determinant() - 1.0));
  }
  return {worst < 1e-9, "max decoded defect = " + fmt(worst)};
}

cde::Segment synthetic_segment(std::mt19937_64& rng, int cond_len, int horizon_steps,
                               double delta) {
  sim::RigidBodyConfig cfg;
  cfg.inertia.j = Eigen::Vector3d(1.0, 2.0, 3.0);
  sim::BodyState s0;
  s0.r = so3::random_rotation(rng);
  s0.omega = sim::sample_initial_omega(rng);
  std::vector<double> times;
  for (int k = 0; k < cond_len + horizon_steps; ++k) times.push_back(0.1 * k);
  const auto sim_out = sim::simulate_at(cfg, s0, times, 1e-8, 1e-8);
  cde::Segment seg;
  for (int k = 0; k < cond_len; ++k) {
    seg.cond_t.push_back(times[k]);
    seg.cond_x.push_back(so3::perturb(sim_out.trajectory.r[k], delta, rng));
  }
  for (int k = cond_len; k < cond_len + horizon_steps; ++k) {
    seg.target_t.push_back(times[k]);
    seg.target_x.push_back(sim_out.trajectory.r[k]);
  }
  return seg;
}

std::pair<bool, std::string> cde_second_order_reduction() {
  cde::CdeConfig cfg;
  cfg.latent_dim = 12;
  cfg.hidden_dim = 16;
  cfg.order = 1;
  cfg.sg_half_width = 6;
  cfg.init_seed = 42;
  const auto first = cde::CdeModel::create(cfg);
  const auto second = cde::with_zero_second_order(first);
  std::mt19937_64 rng(42);
  const auto seg = synthetic_segment(rng, 13, 8, 0.05);
  cde::SolverSpec solver;
  const auto a = cde::solve_forward(first, seg.cond_t, seg.cond_x, seg.target_t, solver);
  const auto b = cde::solve_forward(second, seg.cond_t, seg.cond_x, seg.target_t, solver);
  for (std::size_t k = 0; k < a.predictions.size(); ++k) {
    if (!(a.predictions[k] == b.predictions[k])) {
      return {false, "forecast mismatch at target " + std::to_string(k)};
    }
  }
  return {true, "order-2 model with zero g reproduces order-1 bitwise"};
}

std::pair<bool, std::string> cde_gradient_check_impl(int half_width, int cond_points,
                                                     bool check_weights, double* param_err,
                                                     double* sg_err);

std::pair<bool, std::string> cde_gradient_check() {
  // 3-point window: parameter blocks (the quadratic fit interpolates 3
  // samples exactly, so the weight gradient vanishes there); 5-point
  // window: every block including the weights through the linear solve.
  const auto a = cde_gradient_check_impl(1, 3, false, nullptr, nullptr);
  const auto b = cde_gradient_check_impl(2, 5, true, nullptr, nullptr);
  return {a.first && b.first, "3pt: " + a.second + "| 5pt: " + b.second};
}

std::pair<bool, std::string> cde_loss_properties() {
  std::mt19937_64 rng(44);
  std::vector<Rotation> a, b;
  for (int i = 0; i < 10; ++i) {
    a.push_back(so3::random_rotation(rng));
    b.push_back(so3::exp_map(random_tangent(rng, 2.0)) * a.back());
  }
  const double lab = cde::geodesic_loss(a, b);
  const double lba = cde::geodesic_loss(b, a);
  const double laa = cde::geodesic_loss(a, a);
  const Rotation r = so3::random_rotation(rng);
  const double theta = 0.7;
  const double single =
      cde::geodesic_loss({so3::exp_map(TangentVec(0, 0, theta)) * r}, {r});
  const bool ok = lab > 0.0 && std::abs(lab - lba) < 1e-9 && laa < 1e-12 &&
                  std::abs(single - std::sqrt(2.0) * theta) < 1e-12;
  return {ok, "loss(a,b)=" + fmt(lab) + " symmetric, loss(a,a)=0, single pair = sqrt(2)*theta"};
}

std::pair<bool, std::string> cde_nfe_ordering() {
  cde::CdeConfig cfg;
  cfg.latent_dim = 16;
  cfg.hidden_dim = 24;
  cfg.init_seed = 45;
  const auto model = cde::CdeModel::create(cfg);
  std::mt19937_64 rng(45);
  cde::SolverSpec solver;
  solver.adaptive = true;
  solver.rtol = 1e-5;
  solver.atol = 1e-7;
  double nfe_sg = 0.0, nfe_hermite = 0.0;
  const int trials = 12;
  for (int i = 0; i < trials; ++i) {
    const auto seg = synthetic_segment(rng, 13, 8, 0.05 * M_PI);
    nfe_sg += cde::solve_forward(model, seg.cond_t, seg.cond_x, seg.target_t, solver,
                                 cde::PathKind::SavitzkyGolay)
                  .nfe;
    nfe_hermite += cde::solve_forward(model, seg.cond_t, seg.cond_x, seg.target_t, solver,
                                      cde::PathKind::Hermite)
                       .nfe;
  }
  nfe_sg /= trials;
  nfe_hermite /= trials;
  return {nfe_sg <= nfe_hermite,
          "mean NFE: SG " + fmt(nfe_sg) + " vs Hermite " + fmt(nfe_hermite)};
}

std::pair<bool, std::string> cde_fixed_step_nfe() {
  cde::CdeConfig cfg;
  cfg.latent_dim = 8;
  cfg.hidden_dim = 12;
  cfg.init_seed = 46;
  const auto model = cde::CdeModel::create(cfg);
  std::mt19937_64 rng(46);
  const auto seg = synthetic_segment(rng, 13, 8, 0.01);
  cde::SolverSpec solver;  // fixed step, dt = 0.025 over 2.0 s
  const auto result = cde::solve_forward(model, seg.cond_t, seg.cond_x, seg.target_t, solver);
  return {result.nfe == 320, "nfe = " + std::to_string(result.nfe) + " (expect 4 * 80)"};
}

// ---------- baselines ----------

std::pair<bool, std::string> cv_exact_on_constant_velocity() {
  std::mt19937_64 rng(51);
  const Rotation r0 = so3::random_rotation(rng);
  const TangentVec w(0.4, -0.2, 0.3);
  std::vector<double> t;
  std::vector<Rotation> x;
  for (int k = 0; k < 13; ++k) {
    t.push_back(0.1 * k);
    x.push_back(so3::exp_map(t.back() * w) * r0);
  }
  const std::vector<double> targets = {1.4, 1.7, 2.0};
  const auto preds = baselines::constant_velocity_forecast(t, x, targets);
  double worst = 0.0;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    worst = std::max(worst, so3::rge(preds[k], so3::exp_map(targets[k] * w) * r0));
  }
  return {worst < 1e-9, "max rge = " + fmt(worst)};
}

std::pair<bool, std::string> conservational_gt_momentum() {
  std::mt19937_64 rng(52);
  sim::RigidBodyConfig cfg;
  cfg.inertia.j = Eigen::Vector3d(1.0, 2.0, 3.0);
  sim::BodyState s0;
  s0.r = so3::random_rotation(rng);
  s0.omega = TangentVec(0.6, -0.5, 0.4);
  std::vector<double> times;
  for (int k = 0; k <= 24; ++k) times.push_back(0.1 * k);
  const auto truth = sim::simulate_at(cfg, s0, times, 1e-10, 1e-10);
  const int anchor = 12;
  const Eigen::Vector3d momentum = cfg.inertia.apply(truth.trajectory.omega[anchor]);
  const std::vector<double> targets = {times[anchor] + 1.2};
  const auto preds = baselines::conservational_forecast(
      truth.trajectory.r[anchor], times[anchor], momentum, cfg.inertia, targets);
  const double err_deg = so3::rge(preds[0], truth.trajectory.r[24]) * 180.0 / M_PI;
  return {err_deg < 0.1, "rge at 1.2 s = " + fmt(err_deg) + " deg"};
}

std::pair<bool, std::string> rge_degrees_range() {
  std::mt19937_64 rng(53);
  for (int i = 0; i < 500; ++i) {
    const Rotation a = so3::random_rotation(rng);
    const Rotation b = so3::random_rotation(rng);
    const double deg = so3::rge(a, b) * 180.0 / M_PI;
    if (deg < 0.0 || deg > 180.0) return {false, "rge out of [0, 180]"};
  }
  const Rotation r = so3::random_rotation(rng);
  if (so3::rge(r, r) != 0.0) return {false, "rge(R,R) != 0"};
  return {true, "rge(R,R) = 0 and 500 random pairs within [0, 180] deg"};
}

std::pair<bool, std::string> dataset_reproducibility() {
  data::DatasetSpec spec;
  spec.count = 8;
  spec.t_end = 1.0;
  spec.seed = 54;
  const auto a = data::generate_dataset(spec);
  const auto b = data::generate_dataset(spec);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].inertia != b[i].inertia) return {false, "inertia mismatch"};
    for (std::size_t k = 0; k < a[i].t.size(); ++k) {
      if (!(a[i].clean[k] == b[i].clean[k]) || !(a[i].noisy[k] == b[i].noisy[k])) {
        return {false, "sample mismatch"};
      }
    }
  }
  return {true, "two generations with one seed are bitwise identical"};
}

std::pair<bool, std::string> checkpoint_finite(const std::string& path) {
  const auto model = cde::load_checkpoint(path);
  if (!model.all_finite()) return {false, "NonFinite parameters detected in " + path};
  return {true, "all parameters finite (" + std::to_string(model.param_count()) + " values)"};
}

}  // namespace

// Tiny-model finite-difference gradient validation, shared with the
// acceptance suite via gradient_check_detail below.
namespace {

std::pair<bool, std::string> cde_gradient_check_impl(int half_width, int cond_points,
                                                     bool check_weights, double* param_err_out,
                                                     double* sg_err_out) {
  cde::CdeConfig cfg;
  cfg.latent_dim = 8;
  cfg.hidden_dim = 12;
  cfg.order = 2;
  cfg.sg_half_width = half_width;
  cfg.init_seed = 43;
  cde::CdeModel model = cde::CdeModel::create(cfg);
  // give g a visible contribution (near-zero init would hide errors)
  {
    std::mt19937_64 grng(431);
    std::normal_distribution<double> n(0.0, 0.05);
    auto& last = model.field_g.w.back();
    for (int r = 0; r < last.rows(); ++r)
      for (int c = 0; c < last.cols(); ++c) last(r, c) = n(grng);
  }

  std::mt19937_64 rng(43);
  const std::vector<cde::Segment> batch = {synthetic_segment(rng, cond_points, 2, 0.02)};
  const double dt = 0.025;

  cde::CdeGradients grads = cde::CdeGradients::zeros_like(model);
  cde::loss_and_gradients(model, batch, dt, grads);
  const Eigen::VectorXd g_an = cde::flatten_gradients(model, grads);

  Eigen::VectorXd theta = cde::flatten_params(model);
  Eigen::VectorXd g_fd(theta.size());
  const double h = 1e-5;
  cde::CdeModel probe = model;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    Eigen::VectorXd tp = theta, tm = theta;
    tp[j] += h;
    tm[j] -= h;
    cde::set_params(probe, tp);
    const double lp = cde::batch_loss(probe, batch, dt);
    cde::set_params(probe, tm);
    const double lm = cde::batch_loss(probe, batch, dt);
    g_fd[j] = (lp - lm) / (2.0 * h);
  }

  // per-block relative errors
  const long n_enc = model.encoder.param_count();
  const long n_f = model.field_f.param_count();
  const long n_g = model.field_g.param_count();
  const long n_dec = model.decoder.param_count();
  const long n_sg = model.sg_weights.raw.size();
  std::vector<std::pair<std::string, std::pair<long, long>>> blocks = {
      {"encoder", {0, n_enc}},
      {"field_f", {n_enc, n_f}},
      {"field_g", {n_enc + n_f, n_g}},
      {"decoder", {n_enc + n_f + n_g, n_dec}},
      {"sg_weights", {n_enc + n_f + n_g + n_dec, n_sg}}};
  double worst_param = 0.0, worst_sg = 0.0;
  std::stringstream detail;
  for (const auto& [name, span] : blocks) {
    const auto an = g_an.segment(span.first, span.second);
    const auto fd = g_fd.segment(span.first, span.second);
    const double rel = (an - fd).norm() / std::max({an.norm(), fd.norm(), 1e-12});
    detail << name << "=" << fmt(rel) << " ";
    if (name == "sg_weights") worst_sg = std::max(worst_sg, rel);
    else worst_param = std::max(worst_param, rel);
  }
  if (param_err_out) *param_err_out = worst_param;
  if (sg_err_out) *sg_err_out = worst_sg;
  const bool ok = worst_param < 1e-4 && (!check_weights || worst_sg < 1e-3);
  return {ok, detail.str()};
}

}  // namespace

GradCheckResult gradient_check_detail() {
  GradCheckResult out;
  const auto r3 = cde_gradient_check_impl(1, 3, false, &out.param_rel_err_3pt, nullptr);
  const auto r5 = cde_gradient_check_impl(2, 5, true, &out.param_rel_err_5pt, &out.sg_rel_err);
  out.pass = r3.first && r5.first;
  out.detail = "3pt: " + r3.second + "| 5pt: " + r5.second;
  return out;
}

std::vector<CheckResult> run_all(const std::string& ckpt_path) {
  std::vector<CheckResult> out;
  out.push_back(check("so3.hat_antisymmetry", hat_antisymmetry));
  out.push_back(check("so3.exp_log_roundtrip", exp_log_roundtrip));
  out.push_back(check("so3.rotation_invariants", rotation_invariants));
  out.push_back(check("so3.rge_matches_geodesic", rge_matches_geodesic));
  out.push_back(check("so3.geodesic_bi_invariance", geodesic_bi_invariance));
  out.push_back(check("so3.geodesic_triangle", geodesic_triangle));
  out.push_back(check("so3.noise_mean_angle", noise_mean_angle));
  out.push_back(check("so3.haar_trace_density", haar_trace_density));
  out.push_back(check("sim.free_rotation_conservation", free_rotation_conservation));
  out.push_back(check("sim.damping_decay", damping_decay));
  out.push_back(check("sim.integrator_convergence", integrator_convergence));
  out.push_back(check("sim.variable_dynamics_share", variable_dynamics_share));
  out.push_back(check("sim.initial_omega_eta", initial_omega_eta));
  out.push_back(check("sim.inertia_sampling", inertia_sampling));
  out.push_back(check("sim.dataset_noise_level", dataset_noise_level));
  out.push_back(check("sg.exact_recovery", sg_exact_recovery));
  out.push_back(check("sg.identity_weights_match", sg_identity_weights_match));
  out.push_back(check("sg.normal_equations_spd", sg_normal_equations_spd));
  out.push_back(check("sg.residual_optimality", sg_residual_optimality));
  out.push_back(check("sg.derivative_consistency", sg_derivative_consistency));
  out.push_back(check("sg.coefficient_bound", sg_coefficient_bound));
  out.push_back(check("sg.left_equivariance", sg_left_equivariance));
  out.push_back(check("cde.decoded_rotation_invariants", cde_decoded_invariants));
  out.push_back(check("cde.second_order_reduction", cde_second_order_reduction));
  out.push_back(check("cde.gradient_check", cde_gradient_check));
  out.push_back(check("cde.loss_properties", cde_loss_properties));
  out.push_back(check("cde.nfe_ordering", cde_nfe_ordering));
  out.push_back(check("cde.fixed_step_nfe_count", cde_fixed_step_nfe));
  out.push_back(check("baselines.cv_exact_on_constant_velocity", cv_exact_on_constant_velocity));
  out.push_back(check("baselines.conservational_gt_momentum", conservational_gt_momentum));
  out.push_back(check("baselines.rge_degrees_range", rge_degrees_range));
  out.push_back(check("harness.dataset_reproducibility", dataset_reproducibility));
  if (!ckpt_path.empty()) {
    out.push_back(check("harness.checkpoint_finite", [&] { return checkpoint_finite(ckpt_path); }));
  }
  return out;
}

std::string format_table(const std::vector<CheckResult>& results) {
  std::stringstream ss;
  std::size_t width = 0;
  for (const auto& r : results) width = std::max(width, r.name.size());
  for (const auto& r : results) {
    ss << (r.pass ? "PASS  " : "FAIL  ") << r.name
       << std::string(width - r.name.size() + 2, ' ') << r.detail << '\n';
  }
  long passed = 0;
  for (const auto& r : results) passed += r.pass ? 1 : 0;
  ss << passed << "/" << results.size() << " properties passed\n";
  return ss.str();
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results) {
    if (!r.pass) return false;
  }
  return true;
}

}  // namespace so3cast::verify
