#pragma once

#include <Eigen/Core>
#include <random>
#include <string>
#include <vector>

#include "so3cast/dopri45.hpp"
#include "so3cast/so3.hpp"

namespace so3cast::sim {

using so3::Rotation;
using so3::TangentVec;

/// External-torque regimes. VariableDynamics is a dataset-level meta tag:
/// every simulated trajectory carries one of the four resolved scenarios.
enum class Scenario {
  FreeRotation,
  LinearControl,
  VelocityDamping,
  ConfigDependentTorque,
  VariableDynamics,
};

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& name);

/// Principal moments of inertia (diagonal form; any symmetric inertia
/// tensor reduces to this in its principal axes).
struct InertiaTensor {
  Eigen::Vector3d j = Eigen::Vector3d::Ones();

  bool valid() const { return (j.array() > 0.0).all(); }
  Eigen::Matrix3d matrix() const { return j.asDiagonal(); }
  Eigen::Vector3d apply(const TangentVec& w) const { return j.cwiseProduct(w); }
  Eigen::Vector3d apply_inverse(const Eigen::Vector3d& v) const { return v.cwiseQuotient(j); }
};

struct RigidBodyConfig {
  InertiaTensor inertia;
  Scenario scenario = Scenario::FreeRotation;
  Eigen::Matrix3d control_A = Eigen::Matrix3d::Zero();
  Eigen::Vector3d control_b = Eigen::Vector3d::Zero();
  Eigen::Matrix3d damping_D = -0.2 * Eigen::Matrix3d::Identity();
  Eigen::Vector3d field_v = Eigen::Vector3d::UnitZ();  // body-fixed axis
  double field_gain = 1.0;                             // k in f(u) = k * (u x g)
  double w1 = 1.0;                                     // configuration-torque weight
  double w2 = 1.0;                                     // damping weight
};

/// World-frame restoring direction for the configuration-dependent torque.
inline const Eigen::Vector3d kWorldFieldAxis = Eigen::Vector3d::UnitZ();

struct BodyState {
  double t = 0.0;
  Rotation r = Rotation::Identity();
  TangentVec omega = TangentVec::Zero();
};

/// A simulated orientation trajectory plus the metadata needed to
/// reproduce and evaluate it.
struct Trajectory {
  std::vector<double> t;
  std::vector<Rotation> r;
  std::vector<TangentVec> omega;  // body-frame angular velocity

  Scenario scenario = Scenario::FreeRotation;
  InertiaTensor inertia;
  TangentVec omega0 = TangentVec::Zero();
  double delta = 0.0;
  std::string split;
  long id = -1;
};

/// External torque for a resolved scenario:
///   FreeRotation          tau = 0
///   LinearControl         tau = J (A w + b)
///   VelocityDamping       tau = J (D w)
///   ConfigDependentTorque tau = w1 * k (R v) x g  +  w2 * J (D w)
/// Throws UnresolvedScenario for the VariableDynamics meta tag.
TangentVec torque(const RigidBodyConfig& config, const BodyState& state);

/// Euler's equations: dR = R hat(w), dw = J^-1 (tau - w x J w).
void euler_rhs(const RigidBodyConfig& config, const BodyState& state, Eigen::Matrix3d& dr,
               Eigen::Vector3d& domega);

struct IntegrateResult {
  Trajectory trajectory;  // at accepted solver steps
  long nfe = 0;
};

/// Integrates the rigid-body equations with adaptive DOPRI45. The rotation
/// block is re-orthonormalized whenever its orthogonality defect exceeds
/// 1e-9 so long chains of steps cannot drift off the manifold.
IntegrateResult integrate_dopri45(const RigidBodyConfig& config, const BodyState& state0,
                                  double t_end, double rtol, double atol,
                                  double dt_init = 1e-3);

/// Same dynamics, but sampled at the given ascending times via the solver's
/// dense-output interpolant (observation times are hit exactly).
IntegrateResult simulate_at(const RigidBodyConfig& config, const BodyState& state0,
                            const std::vector<double>& times, double rtol, double atol,
                            double dt_init = 1e-3);

/// Per-component rejection sampling: draw N(0, sigma^2), accept when
/// |x| > eta. Keeps initial spins away from the degenerate zero-velocity
/// regime.
TangentVec sample_initial_omega(std::mt19937_64& rng, double sigma = 0.3, double eta = 0.1);

/// J = diag(base_{dist_id}) + eps, eps ~ N(0, sigma^2 I3), redrawn until all
/// principal moments exceed 0.1. dist_id in 1..4 selects the base
/// permutation [1,2,3], [3,1,2], [3,2,1], [2,3,1].
InertiaTensor sample_inertia(int dist_id, std::mt19937_64& rng, double sigma = 0.2);

/// 1/2 w^T J w; conserved for free rotation.
double kinetic_energy(const InertiaTensor& inertia, const TangentVec& omega);

/// R J w; conserved (as a world-frame vector) for free rotation.
Eigen::Vector3d world_momentum(const InertiaTensor& inertia, const BodyState& state);

}  // namespace so3cast::sim
