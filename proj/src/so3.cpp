#include "so3cast/so3.hpp"

#include <cmath>

namespace so3cast::so3 {

Eigen::Matrix3d hat(const TangentVec& v) {
  Eigen::Matrix3d s;
  s << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return s;
}

TangentVec vee(const Eigen::Matrix3d& s) {
  if ((s + s.transpose()).norm() >= 1e-8) {
    throw NonSkewInput("vee: input is not skew-symmetric");
  }
  return TangentVec(s(2, 1), s(0, 2), s(1, 0));
}

Rotation exp_map(const TangentVec& xi) {
  const double theta = xi.norm();
  const Eigen::Matrix3d k = hat(xi);
  double a, b;  // R = I + a*K + b*K^2
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
    b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / (theta * theta);
  }
  return Eigen::Matrix3d::Identity() + a * k + b * (k * k);
}

namespace {

// angle and sin*axis extracted together; theta = atan2(|s|, (tr-1)/2)
// stays accurate near 0 and degrades only at pi where log throws anyway.
void angle_parts(const Rotation& r, double& theta, Eigen::Vector3d& s) {
  s = 0.5 * Eigen::Vector3d(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double c = 0.5 * (r.trace() - 1.0);
  theta = std::atan2(s.norm(), c);
}

}  // namespace

double rotation_angle(const Rotation& r) {
  double theta;
  Eigen::Vector3d s;
  angle_parts(r, theta, s);
  return theta;
}

TangentVec log_map(const Rotation& r) {
  double theta;
  Eigen::Vector3d s;  // = sin(theta) * axis
  angle_parts(r, theta, s);
  if (theta >= M_PI - kLogEps) {
    throw NearPiSingularity("log_map: rotation angle within kLogEps of pi");
  }
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    return (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0) * s;
  }
  return (theta / std::sin(theta)) * s;
}

double geodesic_dist(const Rotation& r1, const Rotation& r2) {
  const Rotation rel = r1 * r2.transpose();
  const double theta = rotation_angle(rel);
  if (theta >= M_PI - kLogEps) {
    throw NearPiSingularity("geodesic_dist: relative angle within kLogEps of pi");
  }
  return theta;
}

double rge(const Rotation& r1, const Rotation& r2) {
  const double x = (r2 - r1).norm() / (2.0 * std::sqrt(2.0));
  return 2.0 * std::asin(std::clamp(x, 0.0, 1.0));
}

Vec6 to_6d(const Rotation& r) {
  Vec6 v;
  v.head<3>() = r.col(0);
  v.tail<3>() = r.col(1);
  return v;
}

Rotation from_6d_gso(const Vec6& v) {
  const Eigen::Vector3d v1 = v.head<3>();
  const Eigen::Vector3d v2 = v.tail<3>();
  const double n1 = v1.norm();
  if (n1 < 1e-12) throw DegenerateColumns("from_6d_gso: first column is zero");
  const Eigen::Vector3d b1 = v1 / n1;
  const Eigen::Vector3d u2 = v2 - b1.dot(v2) * b1;
  const double n2 = u2.norm();
  // n2 = |v2| sin(angle(v1, v2)); reject zero and parallel columns together.
  if (n2 < 1e-12 || n2 < 1e-6 * v2.norm()) {
    throw DegenerateColumns("from_6d_gso: columns are zero or parallel");
  }
  const Eigen::Vector3d b2 = u2 / n2;
  Rotation r;
  r.col(0) = b1;
  r.col(1) = b2;
  r.col(2) = b1.cross(b2);
  return r;
}

double orthogonality_defect(const Rotation& r) {
  return (r.transpose() * r - Eigen::Matrix3d::Identity()).norm();
}

Rotation reorthonormalize(const Rotation& r) {
  return from_6d_gso(to_6d(r));
}

Rotation random_rotation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double u1 = u(rng), u2 = u(rng), u3 = u(rng);
  const double r1 = std::sqrt(1.0 - u1), r2 = std::sqrt(u1);
  const double a = 2.0 * M_PI * u2, b = 2.0 * M_PI * u3;
  const Eigen::Quaterniond q(r2 * std::cos(b), r1 * std::sin(a), r1 * std::cos(a),
                             r2 * std::sin(b));
  return q.toRotationMatrix();
}

TangentVec sample_tangent_noise(double delta, std::mt19937_64& rng) {
  if (delta <= 0.0) return TangentVec::Zero();
  std::normal_distribution<double> n(0.0, delta);
  return TangentVec(n(rng), n(rng), n(rng));
}

Rotation perturb(const Rotation& x, double delta, std::mt19937_64& rng) {
  if (delta <= 0.0) return x;
  return exp_map(sample_tangent_noise(delta, rng)) * x;
}

Eigen::Matrix3d right_jacobian(const TangentVec& p) {
  const double theta = p.norm();
  const Eigen::Matrix3d k = hat(p);
  double a, b;  // Jr = I - a*K + b*K^2
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    a = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
    b = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0;
  } else {
    const double t2 = theta * theta;
    a = (1.0 - std::cos(theta)) / t2;
    b = (theta - std::sin(theta)) / (t2 * theta);
  }
  return Eigen::Matrix3d::Identity() - a * k + b * (k * k);
}

Eigen::Vector4d to_quaternion(const Rotation& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  return Eigen::Vector4d(q.w(), q.x(), q.y(), q.z());
}

Rotation from_quaternion(const Eigen::Vector4d& wxyz) {
  Eigen::Quaterniond q(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
  q.normalize();
  return q.toRotationMatrix();
}

Vec9 flatten9(const Rotation& r) {
  Vec9 v;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) v[3 * i + j] = r(i, j);
  return v;
}

Rotation unflatten9(const Vec9& v) {
  Rotation r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = v[3 * i + j];
  return r;
}

}  // namespace so3cast::so3
