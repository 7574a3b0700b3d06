#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "so3cast/dataset.hpp"
#include "so3cast/rigid_body.hpp"
#include "so3cast/so3.hpp"

using namespace so3cast;
using so3::Rotation;
using so3::TangentVec;

TEST_CASE("torque per scenario") {
  sim::RigidBodyConfig cfg;
  cfg.inertia.j = Eigen::Vector3d(1.0, 2.0, 3.0);
  sim::BodyState state;
  state.omega = TangentVec(0.4, -0.2, 0.7);

  SUBCASE("free rotation has no external torque") {
    CHECK(sim::torque(cfg, state).norm() == 0.0);
  }
  SUBCASE("linear control tau = J (A w + b)") {
    cfg.scenario = sim::Scenario::LinearControl;
    cfg.control_A.setZero();
    cfg.control_b = Eigen::Vector3d(0.1, 0.0, 0.0);
    CHECK((sim::torque(cfg, state) - TangentVec(0.1, 0.0, 0.0)).norm() == 0.0);
  }
  SUBCASE("velocity damping tau = J (D w)") {
    cfg.scenario = sim::Scenario::VelocityDamping;
    cfg.inertia.j = Eigen::Vector3d::Ones();
    state.omega = TangentVec(1.0, 0.0, 0.0);
    CHECK((sim::torque(cfg, state) - TangentVec(-0.2, 0.0, 0.0)).norm() < 1e-15);
  }
  SUBCASE("configuration torque sums weighted contributions") {
    cfg.scenario = sim::Scenario::ConfigDependentTorque;
    state.r = Rotation::Identity();
    state.omega = TangentVec::Zero();
    // body z maps to world z, parallel to the field: zero config torque
    CHECK(sim::torque(cfg, state).norm() == 0.0);
    // quarter turn about x sends body z to -y; (-y) x z = -x
    state.r = so3::exp_map(TangentVec(M_PI / 2, 0, 0));
    const TangentVec tau = sim::torque(cfg, state);
    CHECK(tau[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(std::abs(tau[1]) < 1e-12);
    CHECK(std::abs(tau[2]) < 1e-12);
    // damping contribution scales with w2
    state.omega = TangentVec(1.0, 0.0, 0.0);
    cfg.w2 = 2.0;
    const TangentVec tau2 = sim::torque(cfg, state);
    CHECK(tau2[0] == doctest::Approx(-1.0 + 2.0 * (-0.2 * 1.0 * 1.0)).epsilon(1e-12));
  }
  SUBCASE("meta tag rejects") {
    cfg.scenario = sim::Scenario::VariableDynamics;
    CHECK_THROWS_AS(sim::torque(cfg, state), UnresolvedScenario);
  }
}

TEST_CASE("euler_rhs hand values") {
  sim::RigidBodyConfig cfg;
  sim::BodyState state;
  Eigen::Matrix3d dr;
  Eigen::Vector3d dw;

  SUBCASE("equilibrium") {
    sim::euler_rhs(cfg, state, dr, dw);
    CHECK(dr.norm() == 0.0);
    CHECK(dw.norm() == 0.0);
  }
  SUBCASE("spherical body has no gyroscopic acceleration") {
    state.omega = TangentVec(0.3, -1.2, 0.5);
    sim::euler_rhs(cfg, state, dr, dw);
    CHECK(dw.norm() < 1e-15);
    CHECK((dr - state.r * so3::hat(state.omega)).norm() == 0.0);
  }
  SUBCASE("J = diag(1,2,3), w = (1,1,1): dw = (-1, 1, -1/3)") {
    cfg.inertia.j = Eigen::Vector3d(1.0, 2.0, 3.0);
    state.omega = TangentVec::Ones();
    sim::euler_rhs(cfg, state, dr, dw);
    CHECK((dw - Eigen::Vector3d(-1.0, 1.0, -1.0 / 3.0)).norm() < 1e-15);
  }
}

TEST_CASE("spherical free rotation matches the analytic solution") {
  sim::RigidBodyConfig cfg;  // J = I
  std::mt19937_64 rng(21);
  sim::BodyState s0;
  s0.r = so3::random_rotation(rng);
  s0.omega = TangentVec(0, 0, 1);
  const auto result = sim::integrate_dopri45(cfg, s0, M_PI / 2, 1e-10, 1e-10);
  // constant body velocity: R(t) = R0 Exp(t w); for R0 = I also Exp(t w) R0
  const Rotation expected = s0.r * so3::exp_map(TangentVec(0, 0, M_PI / 2));
  CHECK(so3::rge(result.trajectory.r.back(), expected) < 1e-6);

  sim::BodyState id0;  // spec's stated form with R0 = I
  id0.omega = TangentVec(0, 0, 1);
  const auto result2 = sim::integrate_dopri45(cfg, id0, M_PI / 2, 1e-10, 1e-10);
  CHECK(so3::rge(result2.trajectory.r.back(),
                 so3::exp_map(TangentVec(0, 0, M_PI / 2)) * id0.r) < 1e-6);
}

TEST_CASE("free rotation conserves energy and world momentum over 10 s") {
  sim::RigidBodyConfig cfg;
  cfg.inertia.j = Eigen::Vector3d(1.0, 2.0, 3.0);
  std::mt19937_64 rng(22);
  sim::BodyState s0;
  s0.r = so3::random_rotation(rng);
  s0.omega = TangentVec(1.0, -0.6, 0.4);
  const auto result = sim::integrate_dopri45(cfg, s0, 10.0, 1e-9, 1e-9);
  const double e0 = sim::kinetic_energy(cfg.inertia, s0.omega);
  const Eigen::Vector3d l0 = sim::world_momentum(cfg.inertia, s0);
  double worst_e = 0.0, worst_l = 0.0;
  for (std::size_t i = 0; i < result.trajectory.t.size(); ++i) {
    const sim::BodyState s{result.trajectory.t[i], result.trajectory.r[i],
                           result.trajectory.omega[i]};
    worst_e = std::max(worst_e, std::abs(sim::kinetic_energy(cfg.inertia, s.omega) - e0) / e0);
    worst_l = std::max(worst_l, (sim::world_momentum(cfg.inertia, s) - l0).norm() / l0.norm());
  }
  CHECK(worst_e < 1e-6);
  CHECK(worst_l < 1e-6);
}

TEST_CASE("velocity damping decays at the analytic rate for J = I") {
  sim::RigidBodyConfig cfg;
  cfg.scenario = sim::Scenario::VelocityDamping;
  sim::BodyState s0;
  s0.omega = TangentVec(0.9, -0.2, 0.4);
  const auto result = sim::integrate_dopri45(cfg, s0, 10.0, 1e-9, 1e-9);
  const auto& traj = result.trajectory;
  for (std::size_t i = 1; i < traj.t.size(); ++i) {
    CHECK(traj.omega[i].norm() <= traj.omega[i - 1].norm() + 1e-9);
  }
  // w' = D w with D = -0.2 I: |w(10)| = e^-2 |w(0)|
  CHECK(traj.omega.back().norm() / s0.omega.norm() ==
        doctest::Approx(std::exp(-2.0)).epsilon(0.01));
  CHECK(traj.omega.back().norm() < s0.omega.norm() * std::exp(-1.0));
}

TEST_CASE("solutions are stable under halving the tolerances") {
  sim::RigidBodyConfig cfg;
  cfg.scenario = sim::Scenario::ConfigDependentTorque;
  cfg.inertia.j = Eigen::Vector3d(2.1, 1.3, 2.8);
  std::mt19937_64 rng(23);
  sim::BodyState s0;
  s0.r = so3::random_rotation(rng);
  s0.omega = TangentVec(0.5, 0.7, -0.3);
  const std::vector<double> times = {2.5, 5.0};
  const auto a = sim::simulate_at(cfg, s0, times, 1e-8, 1e-8);
  const auto b = sim::simulate_at(cfg, s0, times, 5e-9, 5e-9);
  for (std::size_t k = 0; k < times.size(); ++k) {
    CHECK(so3::rge(a.trajectory.r[k], b.trajectory.r[k]) < 1e-6);
    CHECK((a.trajectory.omega[k] - b.trajectory.omega[k]).norm() < 1e-6);
  }
}

TEST_CASE("initial omega sampling: truncation and distribution") {
  std::mt19937_64 rng(24);
  for (int i = 0; i < 2000; ++i) {
    CHECK(sim::sample_initial_omega(rng).cwiseAbs().minCoeff() > 0.1);
  }

  // acceptance probability per component: 2 (1 - Phi(eta / sigma))
  {
    std::mt19937_64 counter_rng(25);
    std::normal_distribution<double> n(0.0, 0.3);
    long accepted = 0;
    const long total = 200000;
    for (long i = 0; i < total; ++i) {
      if (std::abs(n(counter_rng)) > 0.1) ++accepted;
    }
    const double phi = 0.5 * (1.0 + std::erf((0.1 / 0.3) / std::sqrt(2.0)));
    const double expected = 2.0 * (1.0 - phi);  // ~ 0.739
    CHECK(static_cast<double>(accepted) / total == doctest::Approx(expected).epsilon(0.01));
  }

  // eta = 0 reduces to a plain normal: Kolmogorov-Smirnov against N(0, 0.09)
  {
    std::mt19937_64 ks_rng(26);
    const int n = 100000;
    std::vector<double> draws(n);
    for (int i = 0; i < n; ++i) draws[i] = sim::sample_initial_omega(ks_rng, 0.3, 0.0)[0];
    std::sort(draws.begin(), draws.end());
    double d_stat = 0.0;
    for (int i = 0; i < n; ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(draws[i] / (0.3 * std::sqrt(2.0))));
      d_stat = std::max(d_stat, std::abs(cdf - (i + 1.0) / n));
      d_stat = std::max(d_stat, std::abs(cdf - static_cast<double>(i) / n));
    }
    CHECK(d_stat < 1.628 / std::sqrt(static_cast<double>(n)));  // p = 0.01 critical value
  }
}

TEST_CASE("inertia sampling: bases, positivity, and means") {
  std::mt19937_64 rng(27);
  CHECK(sim::sample_inertia(1, rng, 0.0).j == Eigen::Vector3d(1.0, 2.0, 3.0));
  CHECK(sim::sample_inertia(2, rng, 0.0).j == Eigen::Vector3d(3.0, 1.0, 2.0));
  CHECK(sim::sample_inertia(3, rng, 0.0).j == Eigen::Vector3d(3.0, 2.0, 1.0));
  CHECK(sim::sample_inertia(4, rng, 0.0).j == Eigen::Vector3d(2.0, 3.0, 1.0));
  CHECK_THROWS_AS(sim::sample_inertia(5, rng), Error);

  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto j = sim::sample_inertia(1, rng);
    CHECK((j.j.array() > 0.1).all());
    mean += j.j;
  }
  mean /= n;
  CHECK((mean - Eigen::Vector3d(1.0, 2.0, 3.0)).cwiseAbs().maxCoeff() < 0.02);
}

TEST_CASE("dataset generation: shape, splits, noise model") {
  data::DatasetSpec spec;
  spec.count = 32;
  spec.delta = 0.05 * M_PI;
  spec.t_end = 10.0;
  spec.rtol = 1e-8;
  spec.atol = 1e-8;
  spec.seed = 99;
  const auto records = data::generate_dataset(spec);
  REQUIRE(records.size() == 32);

  std::map<std::string, int> split_counts;
  double rge_sum = 0.0;
  long rge_n = 0;
  for (const auto& rec : records) {
    CHECK(rec.t.size() == 101);
    CHECK(rec.clean.size() == 101);
    CHECK(rec.noisy.size() == 101);
    CHECK(rec.omega.size() == 101);
    CHECK(rec.t.front() == 0.0);
    CHECK(rec.t.back() == doctest::Approx(10.0).epsilon(1e-12));
    for (std::size_t k = 1; k < rec.t.size(); ++k) {
      CHECK(rec.t[k] - rec.t[k - 1] == doctest::Approx(0.1).epsilon(1e-12));
    }
    split_counts[rec.split]++;
    for (std::size_t k = 0; k < rec.t.size(); ++k) {
      rge_sum += so3::rge(rec.noisy[k], rec.clean[k]);
      ++rge_n;
    }
  }
  CHECK(split_counts["train"] == 16);
  CHECK(split_counts["val"] == 8);
  CHECK(split_counts["test"] == 8);
  CHECK(rge_sum / rge_n ==
        doctest::Approx(spec.delta * std::sqrt(8.0 / M_PI)).epsilon(0.03));
}

TEST_CASE("zero noise leaves the observation channel untouched") {
  data::DatasetSpec spec;
  spec.count = 4;
  spec.delta = 0.0;
  spec.t_end = 2.0;
  spec.seed = 7;
  const auto records = data::generate_dataset(spec);
  for (const auto& rec : records) {
    for (std::size_t k = 0; k < rec.t.size(); ++k) {
      CHECK((rec.noisy[k] - rec.clean[k]).norm() == 0.0);
    }
  }
}

TEST_CASE("variable dynamics resolves to an exactly uniform scenario share") {
  data::DatasetSpec spec;
  spec.scenario = sim::Scenario::VariableDynamics;
  spec.count = 400;
  spec.t_end = 0.2;
  spec.delta = 0.0;
  spec.rtol = 1e-6;
  spec.atol = 1e-8;
  spec.seed = 5;
  const auto records = data::generate_dataset(spec);
  std::map<sim::Scenario, int> counts;
  for (const auto& rec : records) {
    CHECK(rec.scenario != sim::Scenario::VariableDynamics);
    counts[rec.scenario]++;
  }
  CHECK(counts.size() == 4);
  for (const auto& [sc, c] : counts) {
    CHECK(std::abs(c - 100) <= 10);
  }
}

TEST_CASE("JSONL round-trip is bit-exact") {
  data::DatasetSpec spec;
  spec.count = 4;
  spec.t_end = 1.0;
  spec.seed = 3;
  const auto records = data::generate_dataset(spec);
  const std::string path = "roundtrip_test.jsonl";
  data::write_jsonl(path, records);
  const auto loaded = data::read_jsonl(path);
  REQUIRE(loaded.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(loaded[i].id == records[i].id);
    CHECK(loaded[i].scenario == records[i].scenario);
    CHECK(loaded[i].split == records[i].split);
    CHECK(loaded[i].inertia == records[i].inertia);
    for (std::size_t k = 0; k < records[i].t.size(); ++k) {
      CHECK(loaded[i].t[k] == records[i].t[k]);
      CHECK(loaded[i].clean[k] == records[i].clean[k]);
      CHECK(loaded[i].noisy[k] == records[i].noisy[k]);
      CHECK(loaded[i].omega[k] == records[i].omega[k]);
    }
  }
  CHECK_THROWS_AS(data::read_jsonl("does_not_exist.jsonl"), IoError);
}
