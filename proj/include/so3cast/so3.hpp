#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <random>

#include "so3cast/error.hpp"

namespace so3cast::so3 {

/// A rotation is a plain 3x3 matrix with R^T R = I and det(R) = 1.
using Rotation = Eigen::Matrix3d;
/// An element of so(3) stored as a 3-vector (axis * angle, or an angular rate).
using TangentVec = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec9 = Eigen::Matrix<double, 9, 1>;

/// Log is treated as singular once the rotation angle reaches pi - kLogEps.
inline constexpr double kLogEps = 1e-6;
/// Below this angle exp/log switch to their 4th-order series.
inline constexpr double kSmallAngle = 1e-4;

/// hat(v): the skew-symmetric matrix with hat(v) * u = v x u.
Eigen::Matrix3d hat(const TangentVec& v);

/// Inverse of hat. Throws NonSkewInput if ||s + s^T||_F >= 1e-8.
TangentVec vee(const Eigen::Matrix3d& s);

/// Rodrigues exponential so(3) -> SO(3), with a series fallback near zero.
Rotation exp_map(const TangentVec& xi);

/// Principal logarithm SO(3) -> so(3). Throws NearPiSingularity when the
/// rotation angle reaches pi - kLogEps (the axis is no longer unique there).
TangentVec log_map(const Rotation& r);

/// Rotation angle in [0, pi], computed via atan2 so it stays well
/// conditioned near both 0 and pi. Defined everywhere.
double rotation_angle(const Rotation& r);

/// Intrinsic metric ||Log(r1 r2^-1)||. Throws NearPiSingularity at pi.
double geodesic_dist(const Rotation& r1, const Rotation& r2);

/// Rotational geodesic error 2 asin(||R2 - R1||_F / (2 sqrt 2)).
/// Equals geodesic_dist where the latter is defined, but has no singularity;
/// the asin argument is clamped to [0, 1].
double rge(const Rotation& r1, const Rotation& r2);

/// First two columns of r, stacked: (col0, col1).
Vec6 to_6d(const Rotation& r);

/// Gram-Schmidt recovery of a rotation from two 3-vector columns.
/// Throws DegenerateColumns for zero or (near-)parallel columns.
Rotation from_6d_gso(const Vec6& v);

/// ||R^T R - I||_F, the drift measure used to trigger re-orthonormalization.
double orthogonality_defect(const Rotation& r);

/// Projects an almost-orthonormal matrix back onto SO(3) via GSO.
Rotation reorthonormalize(const Rotation& r);

/// Uniform (Haar) random rotation, Shoemake's subgroup algorithm.
Rotation random_rotation(std::mt19937_64& rng);

/// Tangent noise vector ~ N(0, delta^2 I_3). delta = 0 yields exactly zero.
TangentVec sample_tangent_noise(double delta, std::mt19937_64& rng);

/// Left-multiplicative observation noise: Exp(eps) * x, eps ~ N(0, delta^2 I).
Rotation perturb(const Rotation& x, double delta, std::mt19937_64& rng);

/// Right Jacobian of SO(3): d/dt Exp(p(t)) = Exp(p) * hat(Jr(p) * pdot).
Eigen::Matrix3d right_jacobian(const TangentVec& p);

/// Unit quaternion as (w, x, y, z) with w >= 0.
Eigen::Vector4d to_quaternion(const Rotation& r);
Rotation from_quaternion(const Eigen::Vector4d& wxyz);

/// Row-major flatten/unflatten shared by every serialized rotation.
Vec9 flatten9(const Rotation& r);
Rotation unflatten9(const Vec9& v);

}  // namespace so3cast::so3
