#include "so3cast/rigid_body.hpp"

#include <cmath>

namespace so3cast::sim {

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::FreeRotation: return "free_rotation";
    case Scenario::LinearControl: return "linear_control";
    case Scenario::VelocityDamping: return "velocity_damping";
    case Scenario::ConfigDependentTorque: return "config_torque";
    case Scenario::VariableDynamics: return "variable_dynamics";
  }
  throw Error("unknown scenario enum value");
}

Scenario scenario_from_string(const std::string& name) {
  if (name == "free_rotation") return Scenario::FreeRotation;
  if (name == "linear_control") return Scenario::LinearControl;
  if (name == "velocity_damping") return Scenario::VelocityDamping;
  if (name == "config_torque") return Scenario::ConfigDependentTorque;
  if (name == "variable_dynamics") return Scenario::VariableDynamics;
  throw ConfigError("unknown scenario name: " + name);
}

TangentVec torque(const RigidBodyConfig& config, const BodyState& state) {
  switch (config.scenario) {
    case Scenario::FreeRotation:
      return TangentVec::Zero();
    case Scenario::LinearControl:
      return config.inertia.apply(config.control_A * state.omega + config.control_b);
    case Scenario::VelocityDamping:
      return config.inertia.apply(config.damping_D * state.omega);
    case Scenario::ConfigDependentTorque: {
      const Eigen::Vector3d tau_config =
          config.field_gain * (state.r * config.field_v).cross(kWorldFieldAxis);
      const Eigen::Vector3d tau_damp = config.inertia.apply(config.damping_D * state.omega);
      return config.w1 * tau_config + config.w2 * tau_damp;
    }
    case Scenario::VariableDynamics:
      throw UnresolvedScenario("torque: VariableDynamics must be resolved per trajectory");
  }
  throw Error("unknown scenario enum value");
}

void euler_rhs(const RigidBodyConfig& config, const BodyState& state, Eigen::Matrix3d& dr,
               Eigen::Vector3d& domega) {
  dr = state.r * so3::hat(state.omega);
  const Eigen::Vector3d j_omega = config.inertia.apply(state.omega);
  domega = config.inertia.apply_inverse(torque(config, state) - state.omega.cross(j_omega));
}

namespace {

// state layout: [flatten9(R), omega]
Eigen::VectorXd pack(const BodyState& s) {
  Eigen::VectorXd y(12);
  y.head<9>() = so3::flatten9(s.r);
  y.tail<3>() = s.omega;
  return y;
}

BodyState unpack(double t, const Eigen::VectorXd& y) {
  BodyState s;
  s.t = t;
  s.r = so3::unflatten9(y.head<9>());
  s.omega = y.tail<3>();
  return s;
}

ode::Rhs make_rhs(const RigidBodyConfig& config) {
  return [&config](double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
    const BodyState s = unpack(t, y);
    Eigen::Matrix3d dr;
    Eigen::Vector3d domega;
    euler_rhs(config, s, dr, domega);
    dy.resize(12);
    dy.head<9>() = so3::flatten9(dr);
    dy.tail<3>() = domega;
  };
}

bool renormalize_rotation(Eigen::VectorXd& y) {
  const Rotation r = so3::unflatten9(y.head<9>());
  if (so3::orthogonality_defect(r) <= 1e-9) return false;
  y.head<9>() = so3::flatten9(so3::reorthonormalize(r));
  return true;
}

}  // namespace

IntegrateResult integrate_dopri45(const RigidBodyConfig& config, const BodyState& state0,
                                  double t_end, double rtol, double atol, double dt_init) {
  if (!(t_end > state0.t)) throw Error("integrate_dopri45: t_end must exceed state0.t");
  if (!(rtol > 0.0) || !(atol > 0.0)) throw Error("integrate_dopri45: tolerances must be > 0");
  ode::Options opts;
  opts.rtol = rtol;
  opts.atol = atol;
  opts.dt_init = dt_init;
  const auto sol = ode::integrate_dopri45(make_rhs(config), state0.t, pack(state0), t_end,
                                          opts, {}, renormalize_rotation);
  IntegrateResult out;
  out.nfe = sol.nfe;
  out.trajectory.scenario = config.scenario;
  out.trajectory.inertia = config.inertia;
  out.trajectory.omega0 = state0.omega;
  for (std::size_t i = 0; i < sol.t.size(); ++i) {
    const BodyState s = unpack(sol.t[i], sol.y[i]);
    out.trajectory.t.push_back(s.t);
    out.trajectory.r.push_back(s.r);
    out.trajectory.omega.push_back(s.omega);
  }
  return out;
}

IntegrateResult simulate_at(const RigidBodyConfig& config, const BodyState& state0,
                            const std::vector<double>& times, double rtol, double atol,
                            double dt_init) {
  if (times.empty()) throw Error("simulate_at: no sample times given");
  ode::Options opts;
  opts.rtol = rtol;
  opts.atol = atol;
  opts.dt_init = dt_init;
  opts.dt_max = 0.25;  // keeps the quartic interpolant accurate between samples
  const double t_end = times.back();
  const auto sol = ode::integrate_dopri45(make_rhs(config), state0.t, pack(state0), t_end,
                                          opts, times, renormalize_rotation);
  IntegrateResult out;
  out.nfe = sol.nfe;
  out.trajectory.scenario = config.scenario;
  out.trajectory.inertia = config.inertia;
  out.trajectory.omega0 = state0.omega;
  for (std::size_t i = 0; i < times.size(); ++i) {
    BodyState s = unpack(times[i], sol.dense_y[i]);
    // interpolated rotations sit slightly off the manifold; project back
    if (so3::orthogonality_defect(s.r) > 1e-12) s.r = so3::reorthonormalize(s.r);
    out.trajectory.t.push_back(s.t);
    out.trajectory.r.push_back(s.r);
    out.trajectory.omega.push_back(s.omega);
  }
  return out;
}

TangentVec sample_initial_omega(std::mt19937_64& rng, double sigma, double eta) {
  if (!(sigma > 0.0) || eta < 0.0) throw Error("sample_initial_omega: bad parameters");
  std::normal_distribution<double> n(0.0, sigma);
  TangentVec w;
  for (int i = 0; i < 3; ++i) {
    double x = n(rng);
    while (!(std::abs(x) > eta)) x = n(rng);
    w[i] = x;
  }
  return w;
}

InertiaTensor sample_inertia(int dist_id, std::mt19937_64& rng, double sigma) {
  static const Eigen::Vector3d bases[4] = {
      {1.0, 2.0, 3.0}, {3.0, 1.0, 2.0}, {3.0, 2.0, 1.0}, {2.0, 3.0, 1.0}};
  if (dist_id < 1 || dist_id > 4) throw Error("sample_inertia: dist_id must be in 1..4");
  const Eigen::Vector3d& base = bases[dist_id - 1];
  std::normal_distribution<double> n(0.0, sigma);
  InertiaTensor out;
  do {
    if (sigma <= 0.0) {
      out.j = base;
      break;
    }
    out.j = base + Eigen::Vector3d(n(rng), n(rng), n(rng));
  } while (!(out.j.array() > 0.1).all());
  return out;
}

double kinetic_energy(const InertiaTensor& inertia, const TangentVec& omega) {
  return 0.5 * omega.dot(inertia.apply(omega));
}

Eigen::Vector3d world_momentum(const InertiaTensor& inertia, const BodyState& state) {
  return state.r * inertia.apply(state.omega);
}

}  // namespace so3cast::sim
