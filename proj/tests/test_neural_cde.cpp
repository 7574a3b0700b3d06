#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "so3cast/dataset.hpp"
#include "so3cast/neural_cde.hpp"
#include "so3cast/verify.hpp"

using namespace so3cast;
using so3::Rotation;
using so3::TangentVec;
using cde::Vec10;

namespace {

cde::Segment free_rotation_segment(std::mt19937_64& rng, int cond_len, int horizon_steps,
                                   double delta) {
  sim::RigidBodyConfig cfg;
  cfg.inertia.j = Eigen::Vector3d(1.0, 2.0, 3.0);
  sim::BodyState s0;
  s0.r = so3::random_rotation(rng);
  s0.omega = sim::sample_initial_omega(rng);
  std::vector<double> times;
  for (int k = 0; k < cond_len + horizon_steps; ++k) times.push_back(0.1 * k);
  const auto out = sim::simulate_at(cfg, s0, times, 1e-8, 1e-8);
  cde::Segment seg;
  for (int k = 0; k < cond_len; ++k) {
    seg.cond_t.push_back(times[k]);
    seg.cond_x.push_back(so3::perturb(out.trajectory.r[k], delta, rng));
  }
  for (int k = cond_len; k < cond_len + horizon_steps; ++k) {
    seg.target_t.push_back(times[k]);
    seg.target_x.push_back(out.trajectory.r[k]);
  }
  return seg;
}

}  // namespace

TEST_CASE("encode_initial") {
  SUBCASE("zero-initialized encoder returns its bias") {
    cde::CdeConfig cfg;
    cfg.latent_dim = 6;
    cfg.hidden_dim = 8;
    auto model = cde::CdeModel::create(cfg);
    for (auto& w : model.encoder.w) w.setZero();
    model.encoder.b.back() = Eigen::VectorXd::LinSpaced(6, 1.0, 6.0);
    std::mt19937_64 rng(1);
    const auto z1 = cde::encode_initial(model, 0.0, so3::random_rotation(rng));
    const auto z2 = cde::encode_initial(model, 5.0, so3::random_rotation(rng));
    CHECK((z1 - model.encoder.b.back()).norm() == 0.0);
    CHECK((z1 - z2).norm() == 0.0);
  }
  SUBCASE("default latent dimension is 125") {
    cde::CdeConfig cfg;
    const auto model = cde::CdeModel::create(cfg);
    CHECK(cde::encode_initial(model, 0.0, Rotation::Identity()).size() == 125);
  }
  SUBCASE("t0 enters the encoding") {
    cde::CdeConfig cfg;
    cfg.latent_dim = 8;
    cfg.hidden_dim = 16;
    cfg.init_seed = 3;
    const auto model = cde::CdeModel::create(cfg);
    const Rotation x = Rotation::Identity();
    CHECK((cde::encode_initial(model, 0.0, x) - cde::encode_initial(model, 0.5, x)).norm() >
          1e-8);
  }
}

TEST_CASE("cde_rhs") {
  cde::CdeConfig cfg;
  cfg.latent_dim = 5;
  cfg.hidden_dim = 7;
  cfg.order = 2;
  cfg.init_seed = 4;
  auto model = cde::CdeModel::create(cfg);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd z(5);
  for (int i = 0; i < 5; ++i) z[i] = n(rng);
  Vec10 dx, d2x;
  for (int i = 0; i < 10; ++i) {
    dx[i] = n(rng);
    d2x[i] = n(rng);
  }
  dx[0] = 1.0;
  d2x[0] = 0.0;

  SUBCASE("zero field freezes the latent state") {
    auto frozen = model;
    frozen.field_f.set_zero();
    frozen.field_g.set_zero();
    CHECK(cde::cde_rhs(frozen, z, dx, &d2x).norm() == 0.0);
  }
  SUBCASE("zero g reduces the second-order field to first order") {
    auto reduced = model;
    reduced.field_g.set_zero();
    const auto with_d2x = cde::cde_rhs(reduced, z, dx, &d2x);
    const auto without = cde::cde_rhs(reduced, z, dx, nullptr);
    CHECK((with_d2x - without).norm() == 0.0);
  }
  SUBCASE("linearity in the rotation channels") {
    Vec10 dxa = dx;
    dxa[0] = 0.0;  // zero the time channel so scaling is exact
    Vec10 dxb = 2.5 * dxa;
    const auto ra = cde::cde_rhs(model, z, dxa, nullptr);
    const auto rb = cde::cde_rhs(model, z, dxb, nullptr);
    CHECK((rb - 2.5 * ra).norm() < 1e-12 * rb.norm());
  }
}

TEST_CASE("geodesic_loss") {
  std::mt19937_64 rng(5);
  std::vector<Rotation> truths;
  for (int i = 0; i < 8; ++i) truths.push_back(so3::random_rotation(rng));

  CHECK(cde::geodesic_loss(truths, truths) < 1e-12);

  const double theta = 0.9;
  const std::vector<Rotation> single_pred = {so3::exp_map(TangentVec(0, 0, theta)) *
                                             truths[0]};
  const std::vector<Rotation> single_truth = {truths[0]};
  CHECK(cde::geodesic_loss(single_pred, single_truth) ==
        doctest::Approx(std::sqrt(2.0) * theta).epsilon(1e-12));
  CHECK(cde::geodesic_loss(single_pred, single_truth) ==
        doctest::Approx(cde::geodesic_loss(single_truth, single_pred)).epsilon(1e-12));

  const std::vector<Rotation> near_pi = {so3::exp_map(TangentVec(0, 0, M_PI - 1e-9)) *
                                         truths[0]};
  CHECK_THROWS_AS(cde::geodesic_loss(near_pi, single_truth), NearPiSingularity);
  long anomalies = 0;
  const double clamped = cde::geodesic_loss_clamped(near_pi, single_truth, &anomalies);
  CHECK(anomalies == 1);
  CHECK(clamped == doctest::Approx(std::sqrt(2.0) * (M_PI - 1e-6)).epsilon(1e-9));
}

TEST_CASE("solve_forward") {
  std::mt19937_64 rng(6);
  const auto seg = free_rotation_segment(rng, 13, 8, 0.05);

  SUBCASE("fixed-step RK4 over 2.0 s at dt 0.025 costs exactly 320 evaluations") {
    cde::CdeConfig cfg;
    cfg.latent_dim = 8;
    cfg.hidden_dim = 12;
    cfg.init_seed = 6;
    const auto model = cde::CdeModel::create(cfg);
    const auto result =
        cde::solve_forward(model, seg.cond_t, seg.cond_x, seg.target_t, {});
    CHECK(result.nfe == 320);
    CHECK(result.predictions.size() == seg.target_t.size());
    for (const auto& y : result.predictions) {
      CHECK(so3::orthogonality_defect(y) < 1e-9);
    }
  }

  SUBCASE("zero decoder output raises DegenerateColumns, not a crash") {
    cde::CdeConfig cfg;
    cfg.latent_dim = 8;
    cfg.hidden_dim = 12;
    cfg.init_seed = 7;
    auto model = cde::CdeModel::create(cfg);
    model.decoder.set_zero();
    CHECK_THROWS_AS(cde::solve_forward(model, seg.cond_t, seg.cond_x, seg.target_t, {}),
                    DegenerateColumns);
  }

  SUBCASE("non-finite latent state raises NonFiniteState") {
    cde::CdeConfig cfg;
    cfg.latent_dim = 8;
    cfg.hidden_dim = 12;
    cfg.init_seed = 7;
    auto model = cde::CdeModel::create(cfg);
    model.field_f.w.back()(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(cde::solve_forward(model, seg.cond_t, seg.cond_x, seg.target_t, {}),
                    NonFiniteState);
  }

  SUBCASE("off-grid targets are rejected in fixed-step mode") {
    cde::CdeConfig cfg;
    cfg.latent_dim = 8;
    cfg.hidden_dim = 12;
    const auto model = cde::CdeModel::create(cfg);
    std::vector<double> bad_targets = {seg.cond_t.back() + 0.013};
    CHECK_THROWS_AS(cde::solve_forward(model, seg.cond_t, seg.cond_x, bad_targets, {}),
                    ConfigError);
  }

  SUBCASE("adaptive and fixed solves agree on a smooth model") {
    cde::CdeConfig cfg;
    cfg.latent_dim = 12;
    cfg.hidden_dim = 16;
    cfg.init_seed = 8;
    const auto model = cde::CdeModel::create(cfg);
    cde::SolverSpec fixed;
    cde::SolverSpec adaptive;
    adaptive.adaptive = true;
    adaptive.rtol = 1e-8;
    adaptive.atol = 1e-10;
    const auto a = cde::solve_forward(model, seg.cond_t, seg.cond_x, seg.target_t, fixed);
    const auto b = cde::solve_forward(model, seg.cond_t, seg.cond_x, seg.target_t, adaptive);
    for (std::size_t k = 0; k < a.predictions.size(); ++k) {
      CHECK(so3::rge(a.predictions[k], b.predictions[k]) < 1e-5);
    }
  }
}

TEST_CASE("second-order model with zero g reproduces first order bitwise") {
  cde::CdeConfig cfg;
  cfg.latent_dim = 10;
  cfg.hidden_dim = 14;
  cfg.order = 1;
  cfg.init_seed = 9;
  const auto first = cde::CdeModel::create(cfg);
  const auto second = cde::with_zero_second_order(first);
  std::mt19937_64 rng(9);
  const auto seg = free_rotation_segment(rng, 13, 8, 0.05);
  const auto a = cde::solve_forward(first, seg.cond_t, seg.cond_x, seg.target_t, {});
  const auto b = cde::solve_forward(second, seg.cond_t, seg.cond_x, seg.target_t, {});
  REQUIRE(a.predictions.size() == b.predictions.size());
  for (std::size_t k = 0; k < a.predictions.size(); ++k) {
    CHECK(std::memcmp(a.predictions[k].data(), b.predictions[k].data(), 9 * sizeof(double)) ==
          0);
  }
}

TEST_CASE("gradients match central finite differences on the tiny model") {
  const auto result = verify::gradient_check_detail();
  INFO(result.detail);
  CHECK(result.pass);
  CHECK(result.param_rel_err_3pt < 1e-4);
  CHECK(result.param_rel_err_5pt < 1e-4);
  CHECK(result.sg_rel_err < 1e-3);
}

TEST_CASE("g gradient is a dead path when d2X vanishes") {
  // constant-rotation window: rho = 0, so dX and d2X are identically zero
  cde::CdeConfig cfg;
  cfg.latent_dim = 8;
  cfg.hidden_dim = 12;
  cfg.order = 2;
  cfg.sg_half_width = 2;
  cfg.init_seed = 20;
  const auto model = cde::CdeModel::create(cfg);
  std::mt19937_64 rng(20);
  const Rotation r = so3::random_rotation(rng);
  cde::Segment seg;
  for (int k = 0; k < 5; ++k) {
    seg.cond_t.push_back(0.1 * k);
    seg.cond_x.push_back(r);
  }
  seg.target_t = {0.5, 0.6};
  seg.target_x = {r, r};
  cde::CdeGradients grads = cde::CdeGradients::zeros_like(model);
  cde::loss_and_gradients(model, {seg}, 0.025, grads);
  double g_norm = 0.0;
  for (const auto& w : grads.field_g.w) g_norm += w.norm();
  for (const auto& b : grads.field_g.b) g_norm += b.norm();
  CHECK(g_norm == 0.0);
}

TEST_CASE("training") {
  data::DatasetSpec spec;
  spec.count = 8;
  spec.t_end = 3.0;
  spec.delta = 0.05 * M_PI;
  spec.rtol = 1e-8;
  spec.atol = 1e-8;
  spec.seed = 10;
  const auto dataset = data::generate_dataset(spec);

  cde::CdeConfig mcfg;
  mcfg.latent_dim = 8;
  mcfg.hidden_dim = 12;
  mcfg.init_seed = 10;

  SUBCASE("lr = 0 leaves parameters unchanged") {
    auto model = cde::CdeModel::create(mcfg);
    const Eigen::VectorXd before = cde::flatten_params(model);
    cde::TrainConfig tcfg;
    tcfg.lr = 0.0;
    tcfg.steps = 3;
    tcfg.batch_size = 2;
    tcfg.val_segments = 2;
    tcfg.seed = 11;
    cde::train(model, dataset, tcfg);
    CHECK((cde::flatten_params(model) - before).norm() == 0.0);
  }

  SUBCASE("identical seeds give bitwise-identical runs") {
    cde::TrainConfig tcfg;
    tcfg.steps = 5;
    tcfg.batch_size = 2;
    tcfg.val_segments = 2;
    tcfg.seed = 12;
    auto m1 = cde::CdeModel::create(mcfg);
    auto m2 = cde::CdeModel::create(mcfg);
    const auto log1 = cde::train(m1, dataset, tcfg);
    const auto log2 = cde::train(m2, dataset, tcfg);
    REQUIRE(log1.steps.size() == log2.steps.size());
    for (std::size_t i = 0; i < log1.steps.size(); ++i) {
      CHECK(log1.steps[i].train_loss == log2.steps[i].train_loss);
      CHECK(log1.steps[i].val_loss == log2.steps[i].val_loss);
      CHECK(log1.steps[i].mean_nfe == log2.steps[i].mean_nfe);
    }
    CHECK((cde::flatten_params(m1) - cde::flatten_params(m2)).norm() == 0.0);
  }
}

TEST_CASE("hermite control path") {
  std::mt19937_64 rng(13);
  std::vector<double> times;
  std::vector<Rotation> rots;
  for (int k = 0; k < 7; ++k) {
    times.push_back(0.1 * k + (k == 3 ? 0.02 : 0.0));  // one irregular knot
    rots.push_back(so3::random_rotation(rng));
  }
  const auto path = cde::HermitePath::build(times, rots);

  SUBCASE("interpolates every knot exactly in 9D") {
    for (std::size_t k = 0; k < times.size(); ++k) {
      Vec10 expected;
      expected[0] = times[k];
      expected.tail<9>() = so3::flatten9(rots[k]);
      CHECK((path.value(times[k]) - expected).norm() < 1e-12);
    }
  }
  SUBCASE("derivative at interior knots equals the backward difference") {
    for (std::size_t k = 1; k + 1 < times.size(); ++k) {
      Vec10 bd;
      bd[0] = 1.0;
      bd.tail<9>() = (so3::flatten9(rots[k]) - so3::flatten9(rots[k - 1])) /
                     (times[k] - times[k - 1]);
      CHECK((path.deriv(times[k]) - bd).norm() < 1e-10);
    }
  }
  SUBCASE("time channel derivative is one") {
    for (double t : {0.05, 0.21, 0.44, 0.6}) {
      CHECK(path.deriv(t)[0] == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(std::abs(path.second_deriv(t)[0]) < 1e-9);
    }
  }
  SUBCASE("constant-velocity extension past the last knot") {
    const Vec10 d_end = path.deriv(times.back() + 0.5);
    const Vec10 expected = (path.x.back() - path.x[path.x.size() - 2]) /
                           (times.back() - times[times.size() - 2]);
    CHECK((d_end - expected).norm() == 0.0);
    CHECK(path.second_deriv(times.back() + 0.5).norm() == 0.0);
    const Vec10 v = path.value(times.back() + 0.5);
    CHECK((v - (path.x.back() + 0.5 * expected)).norm() < 1e-12);
  }
}

TEST_CASE("checkpoint round-trip is exact; corrupted files are detected") {
  cde::CdeConfig cfg;
  cfg.latent_dim = 9;
  cfg.hidden_dim = 11;
  cfg.order = 2;
  cfg.init_seed = 14;
  const auto model = cde::CdeModel::create(cfg);
  const std::string path = "ckpt_test.json";
  cde::save_checkpoint(model, path);
  const auto loaded = cde::load_checkpoint(path);
  CHECK(loaded.cfg.order == 2);
  CHECK((cde::flatten_params(loaded) - cde::flatten_params(model)).norm() == 0.0);

  // corrupt: overwrite with a NaN parameter
  auto broken = model;
  broken.field_f.w[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
  cde::save_checkpoint(broken, path);
  const auto reloaded = cde::load_checkpoint(path);
  CHECK_FALSE(reloaded.all_finite());

  CHECK_THROWS_AS(cde::load_checkpoint("missing_ckpt.json"), IoError);
  std::ofstream(path) << "{not json";
  CHECK_THROWS_AS(cde::load_checkpoint(path), IoError);
}

TEST_CASE("make_segment extracts aligned conditioning and targets") {
  data::DatasetSpec spec;
  spec.count = 4;
  spec.t_end = 3.0;
  spec.seed = 15;
  const auto dataset = data::generate_dataset(spec);
  const auto& rec = dataset[1];
  const auto seg = cde::make_segment(rec, 5, 13, 8);
  CHECK(seg.cond_t.size() == 13);
  CHECK(seg.target_t.size() == 8);
  CHECK(seg.cond_t.front() == 0.0);  // relative time
  CHECK(seg.cond_t.back() == doctest::Approx(1.2).epsilon(1e-12));
  CHECK(seg.target_t.front() == doctest::Approx(1.3).epsilon(1e-12));
  CHECK((seg.cond_x[0] - rec.noisy[5]).norm() == 0.0);
  CHECK((seg.target_x[0] - rec.clean[18]).norm() == 0.0);
  CHECK_THROWS_AS(cde::make_segment(rec, 20, 13, 8), Error);
}
