#include "so3cast/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "so3cast/parallel.hpp"

namespace so3cast::baselines {

namespace {
using nlohmann::json;
}

std::vector<Rotation> constant_velocity_forecast(const std::vector<double>& cond_t,
                                                 const std::vector<Rotation>& cond_x,
                                                 const std::vector<double>& targets) {
  if (cond_t.size() < 2 || cond_t.size() != cond_x.size()) {
    throw Error("constant_velocity_forecast: need at least two conditioning samples");
  }
  const std::size_t n = cond_t.size() - 1;
  const double dt = cond_t[n] - cond_t[n - 1];
  const so3::TangentVec omega =
      so3::log_map(cond_x[n] * cond_x[n - 1].transpose()) / dt;
  std::vector<Rotation> out;
  out.reserve(targets.size());
  for (double t : targets) {
    out.push_back(so3::exp_map((t - cond_t[n]) * omega) * cond_x[n]);
  }
  return out;
}

std::vector<Rotation> sg_extrapolation_forecast(const sg::SgFit& fit,
                                                const std::vector<double>& targets) {
  std::vector<Rotation> out;
  out.reserve(targets.size());
  for (double t : targets) out.push_back(sg::eval_path(fit, t));
  return out;
}

std::vector<Rotation> conservational_forecast(const Rotation& x_last, double t_last,
                                              const Eigen::Vector3d& momentum_body,
                                              const sim::InertiaTensor& inertia,
                                              const std::vector<double>& targets,
                                              double rtol, double atol, long* nfe) {
  sim::RigidBodyConfig config;
  config.scenario = sim::Scenario::FreeRotation;
  config.inertia = inertia;
  sim::BodyState state0;
  state0.t = t_last;
  state0.r = x_last;
  state0.omega = inertia.apply_inverse(momentum_body);
  const auto result = sim::simulate_at(config, state0, targets, rtol, atol);
  if (nfe) *nfe += result.nfe;
  return result.trajectory.r;
}

namespace {

struct TrajScore {
  std::vector<double> rge_sum;  // per horizon
  long segments = 0;
  long nfe = 0;
  long solves = 0;
};

std::vector<Rotation> predict(const std::string& method,
                              const data::TrajectoryRecord& rec, int offset, int cond_len,
                              const std::vector<double>& target_t, const EvalOptions& opts,
                              const cde::Segment& seg, long* nfe) {
  if (method == "cv") {
    return constant_velocity_forecast(seg.cond_t, seg.cond_x, target_t);
  }
  if (method == "sg") {
    const auto window = sg::extrapolation_window(seg.cond_t, seg.cond_x, opts.sg_half_width);
    return sg_extrapolation_forecast(sg::fit(window), target_t);
  }
  if (method == "conservational") {
    if (rec.omega.empty()) {
      throw Error("conservational evaluation needs the dataset omega channel");
    }
    const int anchor = offset + cond_len - 1;
    Eigen::Vector3d w_true = rec.omega[anchor];
    const double noise = opts.momentum_noise < 0.0 ? rec.delta : opts.momentum_noise;
    if (noise > 0.0 && w_true.norm() > 0.0) {
      std::mt19937_64 rng(mix_seed(opts.seed ^ 0x4d4f4dull,
                                   static_cast<std::uint64_t>(rec.id) * 1009ull +
                                       static_cast<std::uint64_t>(offset)));
      std::normal_distribution<double> n(0.0, noise * w_true.norm());
      w_true += Eigen::Vector3d(n(rng), n(rng), n(rng));
    }
    sim::InertiaTensor inertia;
    inertia.j = rec.inertia;
    const Eigen::Vector3d momentum = inertia.apply(w_true);
    return conservational_forecast(seg.cond_x.back(), seg.cond_t.back(), momentum, inertia,
                                   target_t, 1e-9, 1e-9, nfe);
  }
  if (method == "cde") {
    if (opts.model == nullptr) throw ConfigError("evaluate: cde method needs a model");
    cde::SolverSpec solver;
    solver.adaptive = opts.adaptive;
    solver.rk4_dt = opts.rk4_dt;
    solver.rtol = opts.rtol;
    solver.atol = opts.atol;
    const auto result =
        cde::solve_forward(*opts.model, seg.cond_t, seg.cond_x, target_t, solver, opts.path);
    if (nfe) *nfe += result.nfe;
    return result.predictions;
  }
  throw ConfigError("evaluate: unknown method " + method);
}

}  // namespace

EvalReport evaluate(const std::string& method,
                    const std::vector<data::TrajectoryRecord>& dataset,
                    const EvalOptions& opts) {
  std::vector<const data::TrajectoryRecord*> records;
  if (opts.split == "all") {
    for (const auto& r : dataset) records.push_back(&r);
  } else {
    records = data::filter_split(dataset, opts.split);
  }
  if (records.empty()) throw Error("evaluate: no records in split " + opts.split);
  if (opts.horizons.empty()) throw ConfigError("evaluate: no horizons");

  const double obs_dt = records.front()->t[1] - records.front()->t[0];
  const int cond_len = static_cast<int>(std::llround(opts.cond_span / obs_dt)) + 1;
  const double max_h = *std::max_element(opts.horizons.begin(), opts.horizons.end());
  const int max_h_steps = static_cast<int>(std::llround(max_h / obs_dt));
  std::vector<int> h_steps;
  for (double h : opts.horizons) {
    const int s = static_cast<int>(std::llround(h / obs_dt));
    if (std::abs(s * obs_dt - h) > 1e-9) {
      throw ConfigError("evaluate: horizon must be a multiple of the observation spacing");
    }
    h_steps.push_back(s);
  }

  std::vector<TrajScore> scores(records.size());
  parallel_for(records.size(), [&](std::size_t ri) {
    const auto& rec = *records[ri];
    TrajScore score;
    score.rge_sum.assign(opts.horizons.size(), 0.0);
    const int n_samples = static_cast<int>(rec.t.size());
    for (int offset = 0; offset + cond_len + max_h_steps <= n_samples;
         offset += opts.segment_stride) {
      const cde::Segment seg = cde::make_segment(rec, offset, cond_len, max_h_steps);
      std::vector<double> target_t;
      for (int s : h_steps) target_t.push_back(seg.cond_t.back() + s * obs_dt);
      std::sort(target_t.begin(), target_t.end());
      const auto preds = predict(method, rec, offset, cond_len, target_t, opts, seg,
                                 &score.nfe);
      ++score.solves;
      for (std::size_t hi = 0; hi < opts.horizons.size(); ++hi) {
        const double ht = seg.cond_t.back() + h_steps[hi] * obs_dt;
        const auto it = std::find_if(target_t.begin(), target_t.end(),
                                     [&](double t) { return std::abs(t - ht) < 1e-12; });
        const std::size_t pi = static_cast<std::size_t>(it - target_t.begin());
        const int truth_idx = offset + cond_len - 1 + h_steps[hi];
        score.rge_sum[hi] +=
            so3::rge(preds[pi], rec.clean[truth_idx]) * 180.0 / M_PI;
      }
      ++score.segments;
    }
    scores[ri] = std::move(score);
  });

  // group per-trajectory means by scenario
  std::map<std::string, std::vector<std::vector<double>>> by_scenario;  // -> [traj][horizon]
  double nfe_total = 0.0;
  long solves_total = 0;
  for (std::size_t ri = 0; ri < records.size(); ++ri) {
    if (scores[ri].segments == 0) continue;
    std::vector<double> means;
    for (double s : scores[ri].rge_sum) means.push_back(s / scores[ri].segments);
    by_scenario[sim::to_string(records[ri]->scenario)].push_back(std::move(means));
    nfe_total += static_cast<double>(scores[ri].nfe);
    solves_total += scores[ri].solves;
  }
  const double nfe_mean = solves_total > 0 ? nfe_total / solves_total : 0.0;

  EvalReport report;
  for (const auto& [scenario, rows] : by_scenario) {
    for (std::size_t hi = 0; hi < opts.horizons.size(); ++hi) {
      EvalRow row;
      row.method = method;
      row.scenario = scenario;
      row.horizon_s = opts.horizons[hi];
      row.n = static_cast<long>(rows.size());
      double mean = 0.0;
      for (const auto& r : rows) mean += r[hi];
      mean /= static_cast<double>(rows.size());
      double var = 0.0;
      for (const auto& r : rows) var += (r[hi] - mean) * (r[hi] - mean);
      row.rge_mean_deg = mean;
      row.rge_std_deg = rows.size() > 1 ? std::sqrt(var / static_cast<double>(rows.size() - 1))
                                        : 0.0;
      row.nfe_mean = nfe_mean;
      report.rows.push_back(row);
    }
  }
  return report;
}

void write_report_json(const std::string& path, const EvalReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"method", r.method},
                    {"scenario", r.scenario},
                    {"horizon_s", r.horizon_s},
                    {"rge_mean_deg", r.rge_mean_deg},
                    {"rge_std_deg", r.rge_std_deg},
                    {"n", r.n},
                    {"nfe_mean", r.nfe_mean}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("write_report_json: cannot open " + path);
  out << rows.dump(2) << '\n';
  if (!out) throw IoError("write_report_json: write failed for " + path);
}

EvalReport read_report_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("read_report_json: cannot open " + path);
  json rows;
  try {
    in >> rows;
  } catch (const json::exception& e) {
    throw IoError("read_report_json: parse error: " + std::string(e.what()));
  }
  EvalReport report;
  for (const auto& r : rows) {
    EvalRow row;
    row.method = r.at("method").get<std::string>();
    row.scenario = r.at("scenario").get<std::string>();
    row.horizon_s = r.at("horizon_s").get<double>();
    row.rge_mean_deg = r.at("rge_mean_deg").get<double>();
    row.rge_std_deg = r.at("rge_std_deg").get<double>();
    row.n = r.at("n").get<long>();
    row.nfe_mean = r.at("nfe_mean").get<double>();
    report.rows.push_back(row);
  }
  return report;
}

std::string format_report_table(const EvalReport& report) {
  std::stringstream ss;
  ss << "method            scenario           horizon_s  rge_mean_deg  rge_std_deg      n   nfe_mean\n";
  char buf[256];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%-17s %-18s %9.2f  %12.4f  %11.4f  %5ld  %9.1f\n",
                  r.method.c_str(), r.scenario.c_str(), r.horizon_s, r.rge_mean_deg,
                  r.rge_std_deg, r.n, r.nfe_mean);
    ss << buf;
  }
  return ss.str();
}

void export_plot_data(const EvalReport& report, const std::string& out_dir,
                      const std::vector<data::TrajectoryRecord>* dataset, int s2_count) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("export_plot_data: cannot create " + out_dir);

  // one CSV per horizon
  std::map<double, std::vector<const EvalRow*>> by_horizon;
  for (const auto& r : report.rows) by_horizon[r.horizon_s].push_back(&r);
  for (const auto& [h, rows] : by_horizon) {
    std::stringstream name;
    name << out_dir << "/rge_h" << h << "s.csv";
    std::ofstream out(name.str());
    if (!out) throw IoError("export_plot_data: cannot open " + name.str());
    out << "method,scenario,horizon_s,rge_mean_deg,rge_std_deg,n,nfe_mean\n";
    for (const auto* r : rows) {
      out << r->method << ',' << r->scenario << ',' << r->horizon_s << ','
          << r->rge_mean_deg << ',' << r->rge_std_deg << ',' << r->n << ',' << r->nfe_mean
          << '\n';
    }
  }

  if (dataset == nullptr) return;
  const int count = std::min<int>(s2_count, static_cast<int>(dataset->size()));
  for (int i = 0; i < count; ++i) {
    const auto& rec = (*dataset)[i];
    std::stringstream name;
    name << out_dir << "/s2_traj_" << rec.id << ".csv";
    std::ofstream out(name.str());
    if (!out) throw IoError("export_plot_data: cannot open " + name.str());
    out << "t,clean_x,clean_y,clean_z,noisy_x,noisy_y,noisy_z\n";
    for (std::size_t k = 0; k < rec.t.size(); ++k) {
      // axis of rotation: normalized quaternion vector part
      auto s2 = [](const so3::Rotation& r) -> Eigen::Vector3d {
        const Eigen::Vector4d q = so3::to_quaternion(r);
        Eigen::Vector3d v = q.tail<3>();
        const double n = v.norm();
        return n > 1e-12 ? Eigen::Vector3d(v / n) : Eigen::Vector3d::UnitZ();
      };
      const Eigen::Vector3d c = s2(rec.clean[k]);
      const Eigen::Vector3d m = s2(rec.noisy[k]);
      out << rec.t[k] << ',' << c.x() << ',' << c.y() << ',' << c.z() << ',' << m.x() << ','
          << m.y() << ',' << m.z() << '\n';
    }
  }
}

}  // namespace so3cast::baselines
