#include <doctest.h>

#include <array>
#include <cmath>
#include <random>

#include "so3cast/so3.hpp"

using namespace so3cast;
using so3::Rotation;
using so3::TangentVec;

namespace {

// independent oracle: truncated matrix exponential series sum xi^n / n!
Eigen::Matrix3d series_exp(const Eigen::Matrix3d& xi, int terms = 40) {
  Eigen::Matrix3d sum = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d power = Eigen::Matrix3d::Identity();
  double fact = 1.0;
  for (int n = 1; n <= terms; ++n) {
    power = power * xi;
    fact *= n;
    sum += power / fact;
  }
  return sum;
}

TangentVec random_tangent(std::mt19937_64& rng, double max_norm) {
  std::normal_distribution<double> n(0.0, 1.0);
  TangentVec v(n(rng), n(rng), n(rng));
  v.normalize();
  std::uniform_real_distribution<double> u(0.0, max_norm);
  return u(rng) * v;
}

}  // namespace

TEST_CASE("hat produces the standard skew layout") {
  CHECK(so3::hat(TangentVec::Zero()).isZero(0.0));

  Eigen::Matrix3d expected;
  expected << 0, -3, 2, 3, 0, -1, -2, 1, 0;
  CHECK((so3::hat(TangentVec(1, 2, 3)) - expected).norm() == 0.0);

  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int i = 0; i < 1000; ++i) {
    const TangentVec v(n(rng), n(rng), n(rng));
    const Eigen::Matrix3d s = so3::hat(v);
    CHECK((s + s.transpose()).norm() == 0.0);
    CHECK((so3::vee(s) - v).norm() == 0.0);
  }
}

TEST_CASE("vee rejects non-skew input") {
  CHECK((so3::vee(Eigen::Matrix3d::Zero()) - TangentVec::Zero()).norm() == 0.0);
  Eigen::Matrix3d sym;
  sym << 1, 2, 3, 2, 5, 6, 3, 6, 9;
  CHECK_THROWS_AS(so3::vee(sym), NonSkewInput);
}

TEST_CASE("exp_map matches the series oracle and hand values") {
  CHECK(so3::exp_map(TangentVec::Zero()).isIdentity(0.0));

  // quarter turn about z
  Eigen::Matrix3d expected;
  expected << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  CHECK((so3::exp_map(TangentVec(0, 0, M_PI / 2)) - expected).norm() < 1e-15);

  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const TangentVec xi = random_tangent(rng, M_PI - 0.01);
    CHECK((so3::exp_map(xi) - series_exp(so3::hat(xi))).norm() < 1e-13);
  }
  // small-angle series branch against the same oracle
  for (int i = 0; i < 200; ++i) {
    const TangentVec xi = random_tangent(rng, 9e-5);
    CHECK((so3::exp_map(xi) - series_exp(so3::hat(xi))).norm() < 1e-15);
  }
}

TEST_CASE("log_map inverts exp_map below the pi singularity") {
  CHECK(so3::log_map(Rotation::Identity()).norm() == 0.0);
  CHECK((so3::log_map(so3::exp_map(TangentVec(0.3, -0.2, 0.1))) - TangentVec(0.3, -0.2, 0.1))
            .norm() < 1e-10);

  std::mt19937_64 rng(3);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const TangentVec xi = random_tangent(rng, M_PI - 0.1);
    worst = std::max(worst, (so3::log_map(so3::exp_map(xi)) - xi).norm());
  }
  CHECK(worst < 1e-9);

  // exp(log(r)) = r including angles within (pi - 0.1, pi - eps)
  for (int i = 0; i < 200; ++i) {
    const Rotation r = so3::exp_map(random_tangent(rng, M_PI - 1e-3));
    CHECK((so3::exp_map(so3::log_map(r)) - r).norm() < 1e-9);
  }
}

TEST_CASE("log_map raises NearPiSingularity at pi") {
  CHECK_THROWS_AS(so3::log_map(so3::exp_map(TangentVec(0, 0, M_PI))), NearPiSingularity);
  Rotation half_turn_z;
  half_turn_z << -1, 0, 0, 0, -1, 0, 0, 0, 1;  // exactly pi about z
  CHECK_THROWS_AS(so3::log_map(half_turn_z), NearPiSingularity);
}

TEST_CASE("geodesic distance: metric properties") {
  std::mt19937_64 rng(4);
  const Rotation r = so3::random_rotation(rng);
  CHECK(so3::geodesic_dist(r, r) < 1e-12);
  CHECK(so3::geodesic_dist(Rotation::Identity(), so3::exp_map(TangentVec(0, 0, 0.5))) ==
        doctest::Approx(0.5).epsilon(1e-12));

  for (int i = 0; i < 1000; ++i) {
    const Rotation a = so3::random_rotation(rng);
    const Rotation b = so3::exp_map(random_tangent(rng, 1.0)) * a;
    const Rotation c = so3::exp_map(random_tangent(rng, 1.0)) * b;
    const double ab = so3::geodesic_dist(a, b);
    const double bc = so3::geodesic_dist(b, c);
    const double ac = so3::geodesic_dist(a, c);
    CHECK(ab == doctest::Approx(so3::geodesic_dist(b, a)).epsilon(1e-12));
    CHECK(ac <= ab + bc + 1e-12);
  }
}

TEST_CASE("rge equals the geodesic distance and is defined at pi") {
  std::mt19937_64 rng(5);
  const Rotation r = so3::random_rotation(rng);
  CHECK(so3::rge(r, r) == 0.0);

  // ||Rz(pi/2) - I||_F = 2, so 2 asin(2 / (2 sqrt 2)) = pi/2
  const Rotation rz = so3::exp_map(TangentVec(0, 0, M_PI / 2));
  CHECK((rz - Rotation::Identity()).norm() == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(so3::rge(Rotation::Identity(), rz) == doctest::Approx(M_PI / 2).epsilon(1e-12));

  for (int i = 0; i < 1000; ++i) {
    const Rotation a = so3::random_rotation(rng);
    const Rotation b = so3::exp_map(random_tangent(rng, M_PI - 0.1)) * a;
    CHECK(std::abs(so3::rge(a, b) - so3::geodesic_dist(a, b)) < 1e-9);
  }
  // no singularity at pi
  CHECK(so3::rge(Rotation::Identity(), so3::exp_map(TangentVec(0, 0, M_PI))) ==
        doctest::Approx(M_PI).epsilon(1e-9));
}

TEST_CASE("6d representation round-trips through Gram-Schmidt") {
  so3::Vec6 id6;
  id6 << 1, 0, 0, 0, 1, 0;
  CHECK((so3::to_6d(Rotation::Identity()) - id6).norm() == 0.0);
  CHECK(so3::from_6d_gso(id6).isIdentity(0.0));

  so3::Vec6 scaled;
  scaled << 2, 0, 0, 0, 3, 0;
  CHECK(so3::from_6d_gso(scaled).isIdentity(1e-15));

  so3::Vec6 sheared;  // second column (1,1,0) orthogonalizes to (0,1,0)
  sheared << 1, 0, 0, 1, 1, 0;
  CHECK(so3::from_6d_gso(sheared).isIdentity(1e-15));

  std::mt19937_64 rng(6);
  for (int i = 0; i < 1000; ++i) {
    const Rotation r = so3::random_rotation(rng);
    CHECK((so3::from_6d_gso(so3::to_6d(r)) - r).norm() < 1e-12);
  }

  const so3::Vec6 zero = so3::Vec6::Zero();
  CHECK_THROWS_AS(so3::from_6d_gso(zero), DegenerateColumns);
  so3::Vec6 parallel;
  parallel << 1, 2, 3, 2, 4, 6;
  CHECK_THROWS_AS(so3::from_6d_gso(parallel), DegenerateColumns);
}

TEST_CASE("tangent noise matches the 3D Gaussian norm oracle") {
  std::mt19937_64 rng(7);
  CHECK(so3::sample_tangent_noise(0.0, rng).norm() == 0.0);

  const double delta = 0.05 * M_PI;
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += so3::sample_tangent_noise(delta, rng).norm();
  const double expected = delta * std::sqrt(8.0 / M_PI);  // E ||N(0, d^2 I3)||
  CHECK(sum / n == doctest::Approx(expected).epsilon(0.02));
}

TEST_CASE("perturb applies left-multiplicative noise") {
  std::mt19937_64 rng(8);
  const Rotation x = so3::random_rotation(rng);
  CHECK((so3::perturb(x, 0.0, rng) - x).norm() == 0.0);

  const double delta = 0.05 * M_PI;
  double sum = 0.0;
  double worst_defect = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const Rotation noisy = so3::perturb(x, delta, rng);
    worst_defect = std::max(worst_defect, so3::orthogonality_defect(noisy));
    sum += so3::geodesic_dist(noisy, x);
  }
  CHECK(worst_defect < 1e-9);
  CHECK(sum / n == doctest::Approx(delta * std::sqrt(8.0 / M_PI)).epsilon(0.02));
}

TEST_CASE("random_rotation is Haar distributed (trace chi-square)") {
  std::mt19937_64 rng(9);
  constexpr int kBins = 16, kDraws = 100000;
  std::array<long, kBins> observed{};
  for (int i = 0; i < kDraws; ++i) {
    const double tr = so3::random_rotation(rng).trace();
    observed[std::clamp(static_cast<int>((tr + 1.0) / 4.0 * kBins), 0, kBins - 1)]++;
  }
  // Haar CDF of the rotation angle: F(theta) = (theta - sin theta) / pi
  auto cdf = [](double th) { return (th - std::sin(th)) / M_PI; };
  double stat = 0.0;
  for (int b = 0; b < kBins; ++b) {
    const double lo = -1.0 + 4.0 * b / kBins, hi = -1.0 + 4.0 * (b + 1) / kBins;
    const double th_hi = std::acos(std::clamp((lo - 1.0) / 2.0, -1.0, 1.0));
    const double th_lo = std::acos(std::clamp((hi - 1.0) / 2.0, -1.0, 1.0));
    const double expected = kDraws * (cdf(th_hi) - cdf(th_lo));
    stat += (observed[b] - expected) * (observed[b] - expected) / expected;
  }
  CHECK(stat < 30.5779);  // chi-square critical value, 15 dof, p = 0.01
}

TEST_CASE("rotation invariants hold for every constructor") {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0.0, 1.0);
  double worst = 0.0;
  auto score = [&](const Rotation& r) {
    worst = std::max(worst, so3::orthogonality_defect(r));
    worst = std::max(worst, std::abs(r.determinant() - 1.0));
  };
  for (int i = 0; i < 1000; ++i) {
    score(so3::exp_map(random_tangent(rng, M_PI - 0.01)));
    so3::Vec6 v;
    for (int k = 0; k < 6; ++k) v[k] = n(rng);
    score(so3::from_6d_gso(v));
    score(so3::perturb(so3::random_rotation(rng), 0.05 * M_PI, rng));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("geodesic distance is bi-invariant") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 300; ++i) {
    const Rotation r1 = so3::random_rotation(rng);
    const Rotation r2 = so3::exp_map(random_tangent(rng, M_PI - 0.2)) * r1;
    const Rotation q = so3::random_rotation(rng);
    const double d = so3::geodesic_dist(r1, r2);
    CHECK(std::abs(so3::geodesic_dist(q * r1, q * r2) - d) < 1e-9);
    CHECK(std::abs(so3::geodesic_dist(r1 * q, r2 * q) - d) < 1e-9);
  }
}

TEST_CASE("quaternion conversion round-trips with w >= 0") {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 500; ++i) {
    const Rotation r = so3::random_rotation(rng);
    const Eigen::Vector4d q = so3::to_quaternion(r);
    CHECK(q.norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(q[0] >= 0.0);
    CHECK((so3::from_quaternion(q) - r).norm() < 1e-12);
    CHECK((so3::from_quaternion(-q) - r).norm() < 1e-12);  // q and -q coincide
  }
}

TEST_CASE("row-major flatten round-trips") {
  std::mt19937_64 rng(13);
  const Rotation r = so3::random_rotation(rng);
  const so3::Vec9 v = so3::flatten9(r);
  CHECK(v[1] == r(0, 1));
  CHECK(v[3] == r(1, 0));
  CHECK((so3::unflatten9(v) - r).norm() == 0.0);
}

TEST_CASE("right_jacobian matches its defining differential identity") {
  // d/dt Exp(p + t q) |_0 = Exp(p) hat(Jr(p) q)
  std::mt19937_64 rng(14);
  for (int i = 0; i < 200; ++i) {
    const TangentVec p = random_tangent(rng, 2.5);
    const TangentVec q = random_tangent(rng, 1.0);
    const double h = 1e-6;
    const Eigen::Matrix3d fd =
        (so3::exp_map(p + h * q) - so3::exp_map(p - h * q)) / (2.0 * h);
    const Eigen::Matrix3d analytic = so3::exp_map(p) * so3::hat(so3::right_jacobian(p) * q);
    CHECK((fd - analytic).norm() < 1e-7);
  }
}
