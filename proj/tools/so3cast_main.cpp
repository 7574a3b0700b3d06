// so3cast command line: simulate | filter | train | eval | export-plot |
// verify | run. Exit codes: 0 ok, 2 config error, 3 I/O error, 4 numeric
// failure.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "so3cast/baselines.hpp"
#include "so3cast/dataset.hpp"
#include "so3cast/neural_cde.hpp"
#include "so3cast/rigid_body.hpp"
#include "so3cast/sg_filter.hpp"
#include "so3cast/toml_lite.hpp"
#include "so3cast/verify.hpp"

extern char** environ;

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace so3cast;

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stod(tok));
  }
  if (out.empty()) throw ConfigError("expected a comma-separated list of numbers: " + s);
  return out;
}

std::vector<std::string> parse_string_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

void write_metrics_jsonl(const std::string& path, const cde::TrainMetrics& metrics) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open metrics file " + path);
  for (const auto& s : metrics.steps) {
    json line = {{"step", s.step},
                 {"train_loss", s.train_loss},
                 {"val_loss", s.val_loss},
                 {"mean_nfe", s.mean_nfe},
                 {"anomalies", s.anomalies}};
    out << line.dump() << '\n';
  }
}

baselines::EvalReport run_eval(const std::vector<std::string>& methods,
                               const std::vector<data::TrajectoryRecord>& dataset,
                               const baselines::EvalOptions& opts) {
  baselines::EvalReport combined;
  for (const auto& method : methods) {
    const auto report = baselines::evaluate(method, dataset, opts);
    combined.rows.insert(combined.rows.end(), report.rows.begin(), report.rows.end());
  }
  return combined;
}

// ---------------- pipeline (run subcommand) ----------------

json default_config() {
  return json{
      {"experiment", {{"name", "exp"}, {"seed", 7}, {"out_dir", "runs/exp"}}},
      {"dataset",
       {{"scenario", "free_rotation"},
        {"count", 200},
        {"delta", 0.05 * M_PI},
        {"t_end", 10.0},
        {"obs_dt", 0.1},
        {"rtol", 1e-9},
        {"atol", 1e-9},
        {"path", ""}}},
      {"model",
       {{"order", 1}, {"latent_dim", 32}, {"hidden_dim", 64}, {"sg_half_width", 6}}},
      {"train",
       {{"steps", 1000},
        {"batch_size", 16},
        {"lr", 5e-3},
        {"val_segments", 32},
        {"rk4_dt", 0.025},
        {"cond_span", 1.2},
        {"horizon", 0.8}}},
      {"eval",
       {{"horizons", {0.8, 1.2}},
        {"stride", 10},
        {"methods", {"cde", "cv", "sg", "conservational"}},
        {"adaptive", true},
        {"rtol", 1e-5},
        {"atol", 1e-7},
        {"momentum_noise", -1.0}}},
      {"export", {{"s2_count", 4}}}};
}

void apply_env_overrides(json& config) {
  const std::string prefix = "SO3CAST_";
  for (char** env = environ; *env != nullptr; ++env) {
    const std::string entry(*env);
    if (entry.rfind(prefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string key = entry.substr(prefix.size(), eq - prefix.size());
    const std::string value = entry.substr(eq + 1);
    // SECTION__KEY -> section.key
    const auto sep = key.find("__");
    if (sep == std::string::npos) continue;
    std::string dotted = key.substr(0, sep) + "." + key.substr(sep + 2);
    for (auto& c : dotted) c = static_cast<char>(std::tolower(c));
    cli::set_dotted(config, dotted, value);
  }
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides) {
  json config = default_config();
  cli::deep_merge(config, cli::parse_toml_file(config_path));
  apply_env_overrides(config);
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got " + ov);
    cli::set_dotted(config, ov.substr(0, eq), ov.substr(eq + 1));
  }

  // validate before creating any output
  const std::string out_dir = config.at("experiment").at("out_dir").get<std::string>();
  if (out_dir.empty()) throw ConfigError("experiment.out_dir must not be empty");
  const std::string data_path = config.at("dataset").value("path", std::string());
  if (!data_path.empty() && !fs::exists(data_path)) {
    throw ConfigError("dataset.path does not exist: " + data_path);
  }
  sim::scenario_from_string(config.at("dataset").at("scenario").get<std::string>());
  if (config.at("dataset").at("count").get<int>() <= 0) {
    throw ConfigError("dataset.count must be positive");
  }
  const std::uint64_t seed = config.at("experiment").at("seed").get<std::uint64_t>();

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir);

  std::ofstream log(out_dir + "/run.log");
  if (!log) throw IoError("cannot open run log");
  auto note = [&](const std::string& msg) {
    log << msg << '\n';
    log.flush();
    std::cout << msg << '\n';
  };
  const auto t_start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  };

  {
    std::ofstream echo(out_dir + "/config_echo.json");
    if (!echo) throw IoError("cannot write config echo");
    echo << config.dump(2) << '\n';
  }

  // stage 1: dataset
  std::vector<data::TrajectoryRecord> dataset;
  if (!data_path.empty()) {
    dataset = data::read_jsonl(data_path);
    note("[dataset] loaded " + std::to_string(dataset.size()) + " trajectories from " +
         data_path);
  } else {
    data::DatasetSpec spec;
    const auto& d = config.at("dataset");
    spec.scenario = sim::scenario_from_string(d.at("scenario").get<std::string>());
    spec.count = d.at("count").get<int>();
    spec.delta = d.at("delta").get<double>();
    spec.t_end = d.at("t_end").get<double>();
    spec.obs_dt = d.at("obs_dt").get<double>();
    spec.rtol = d.at("rtol").get<double>();
    spec.atol = d.at("atol").get<double>();
    spec.seed = seed;
    dataset = data::generate_dataset(spec);
    data::write_jsonl(out_dir + "/dataset.jsonl", dataset);
    note("[dataset] simulated " + std::to_string(dataset.size()) + " trajectories (" +
         std::to_string(elapsed()) + " s)");
  }

  // stage 2: training
  cde::CdeConfig mcfg;
  const auto& mc = config.at("model");
  mcfg.order = mc.at("order").get<int>();
  mcfg.latent_dim = mc.at("latent_dim").get<int>();
  mcfg.hidden_dim = mc.at("hidden_dim").get<int>();
  mcfg.sg_half_width = mc.at("sg_half_width").get<int>();
  mcfg.init_seed = seed;
  cde::CdeModel model = cde::CdeModel::create(mcfg);

  cde::TrainConfig tcfg;
  const auto& tc = config.at("train");
  tcfg.steps = tc.at("steps").get<int>();
  tcfg.batch_size = tc.at("batch_size").get<int>();
  tcfg.lr = tc.at("lr").get<double>();
  tcfg.val_segments = tc.at("val_segments").get<int>();
  tcfg.rk4_dt = tc.at("rk4_dt").get<double>();
  tcfg.cond_span = tc.at("cond_span").get<double>();
  tcfg.horizon = tc.at("horizon").get<double>();
  tcfg.seed = seed;
  const auto metrics = cde::train(model, dataset, tcfg);
  cde::save_checkpoint(model, out_dir + "/model.json");
  write_metrics_jsonl(out_dir + "/metrics.jsonl", metrics);
  note("[train] " + std::to_string(tcfg.steps) + " steps done, final train loss " +
       (metrics.steps.empty() ? std::string("n/a")
                              : std::to_string(metrics.steps.back().train_loss)) +
       " (" + std::to_string(elapsed()) + " s)");

  // stage 3: evaluation
  baselines::EvalOptions eopts;
  const auto& ev = config.at("eval");
  eopts.horizons = ev.at("horizons").get<std::vector<double>>();
  eopts.segment_stride = ev.at("stride").get<int>();
  eopts.adaptive = ev.at("adaptive").get<bool>();
  eopts.rtol = ev.at("rtol").get<double>();
  eopts.atol = ev.at("atol").get<double>();
  eopts.momentum_noise = ev.at("momentum_noise").get<double>();
  eopts.sg_half_width = mcfg.sg_half_width;
  eopts.cond_span = tcfg.cond_span;
  eopts.seed = seed;
  eopts.model = &model;
  const auto methods = ev.at("methods").get<std::vector<std::string>>();
  const auto report = run_eval(methods, dataset, eopts);
  baselines::write_report_json(out_dir + "/report.json", report);
  {
    std::ofstream table(out_dir + "/report.txt");
    table << baselines::format_report_table(report);
  }
  note("[eval] report written (" + std::to_string(elapsed()) + " s)");

  // stage 4: plot export
  baselines::export_plot_data(report, out_dir + "/csv", &dataset,
                              config.at("export").at("s2_count").get<int>());
  note("[export] csv written");
  note("[done] total " + std::to_string(elapsed()) + " s");
  return 0;
}

// ---------------- filter subcommand ----------------

void cmd_filter(const std::string& in_path, const std::string& out_path, int n, int order) {
  const auto dataset = data::read_jsonl(in_path);
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot open " + out_path);
  for (const auto& rec : dataset) {
    const int len = 2 * n + 1;
    const int n_samples = static_cast<int>(rec.t.size());
    if (n_samples < len) {
      throw WindowTooLarge("filter: trajectory " + std::to_string(rec.id) + " shorter than 2n+1");
    }
    json smoothed = json::array();
    for (int k = 0; k < n_samples; ++k) {
      const int start = std::clamp(k - n, 0, n_samples - len);
      sg::SgWindow w;
      w.half_width = n;
      w.order = order;
      w.anchor_idx = k - start;
      w.times.assign(rec.t.begin() + start, rec.t.begin() + start + len);
      w.rotations.assign(rec.noisy.begin() + start, rec.noisy.begin() + start + len);
      const auto f = sg::fit(w);
      const so3::Vec9 v = so3::flatten9(sg::eval_path(f, rec.t[k]));
      json arr = json::array();
      for (int i = 0; i < 9; ++i) arr.push_back(v[i]);
      smoothed.push_back(std::move(arr));
    }
    const auto window = sg::extrapolation_window(rec.t, rec.noisy, n, order);
    const auto fit = sg::fit(window);
    json line;
    line["id"] = rec.id;
    line["t"] = rec.t;
    json rho = json::array();
    const auto stacked = fit.stacked();
    for (int i = 0; i < 9; ++i) rho.push_back(stacked[i]);
    line["rho"] = std::move(rho);
    line["anchor_time"] = fit.anchor_time;
    const so3::Vec9 anchor = so3::flatten9(fit.anchor_rot);
    json aj = json::array();
    for (int i = 0; i < 9; ++i) aj.push_back(anchor[i]);
    line["anchor"] = std::move(aj);
    line["smoothed"] = std::move(smoothed);
    out << line.dump() << '\n';
  }
}

int dispatch(int argc, char** argv) {
  CLI::App app{"so3cast: rigid-body rotation forecasting with SO(3) Savitzky-Golay neural CDEs"};
  app.require_subcommand(1);

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "generate a trajectory dataset");
  std::string sim_scenario = "free_rotation", sim_out;
  int sim_count = 200;
  double sim_delta = 0.05 * M_PI, sim_t_end = 10.0, sim_dt = 0.1, sim_rtol = 1e-9,
         sim_atol = 1e-9;
  std::uint64_t sim_seed = 0;
  sim_cmd->add_option("--scenario", sim_scenario,
                      "free_rotation|linear_control|velocity_damping|config_torque|variable_dynamics");
  sim_cmd->add_option("--count", sim_count, "number of trajectories");
  sim_cmd->add_option("--delta", sim_delta, "tangent noise std (radians)");
  sim_cmd->add_option("--seed", sim_seed, "rng seed");
  sim_cmd->add_option("--t-end", sim_t_end, "trajectory length (s)");
  sim_cmd->add_option("--obs-dt", sim_dt, "observation spacing (s)");
  sim_cmd->add_option("--rtol", sim_rtol);
  sim_cmd->add_option("--atol", sim_atol);
  sim_cmd->add_option("--out", sim_out, "output JSONL path")->required();

  // filter
  auto* filter_cmd = app.add_subcommand("filter", "smooth noisy trajectories with the SG filter");
  std::string filter_in, filter_out;
  int filter_n = 6, filter_order = 2;
  filter_cmd->add_option("--in", filter_in)->required();
  filter_cmd->add_option("--out", filter_out)->required();
  filter_cmd->add_option("--n", filter_n, "window half-width");
  filter_cmd->add_option("--order", filter_order, "polynomial degree");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a SG-nCDE model");
  std::string train_data, train_ckpt, train_metrics;
  int train_order = 1, train_steps = 1000, train_latent = 32, train_hidden = 64,
      train_batch = 16, train_val = 32, train_n = 6;
  double train_lr = 5e-3, train_span = 1.2, train_horizon = 0.8, train_dt = 0.025;
  std::uint64_t train_seed = 0;
  train_cmd->add_option("--data", train_data)->required();
  train_cmd->add_option("--ckpt", train_ckpt, "checkpoint output path")->required();
  train_cmd->add_option("--order", train_order, "1 or 2");
  train_cmd->add_option("--steps", train_steps);
  train_cmd->add_option("--seed", train_seed);
  train_cmd->add_option("--latent", train_latent);
  train_cmd->add_option("--hidden", train_hidden);
  train_cmd->add_option("--batch", train_batch);
  train_cmd->add_option("--lr", train_lr);
  train_cmd->add_option("--n", train_n, "SG window half-width");
  train_cmd->add_option("--val-segments", train_val);
  train_cmd->add_option("--cond-span", train_span);
  train_cmd->add_option("--horizon", train_horizon);
  train_cmd->add_option("--rk4-dt", train_dt);
  train_cmd->add_option("--metrics", train_metrics, "metrics JSONL (default: <ckpt>.metrics.jsonl)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate forecasting methods");
  std::string eval_data, eval_report, eval_ckpt, eval_methods = "cv,sg,conservational",
                                                 eval_horizons = "0.8,1.2",
                                                 eval_split = "test", eval_path = "sg";
  int eval_stride = 10, eval_n = 6;
  bool eval_fixed = false;
  double eval_rtol = 1e-5, eval_atol = 1e-7, eval_mnoise = -1.0, eval_span = 1.2;
  std::uint64_t eval_seed = 0;
  eval_cmd->add_option("--data", eval_data)->required();
  eval_cmd->add_option("--report", eval_report)->required();
  eval_cmd->add_option("--ckpt", eval_ckpt, "model checkpoint (enables method cde)");
  eval_cmd->add_option("--method", eval_methods, "comma list: cde,cv,sg,conservational");
  eval_cmd->add_option("--horizons", eval_horizons, "comma list of seconds");
  eval_cmd->add_option("--split", eval_split);
  eval_cmd->add_option("--stride", eval_stride);
  eval_cmd->add_option("--n", eval_n, "SG window half-width");
  eval_cmd->add_option("--cond-span", eval_span);
  eval_cmd->add_flag("--fixed", eval_fixed, "fixed-step RK4 instead of adaptive DOPRI45");
  eval_cmd->add_option("--rtol", eval_rtol);
  eval_cmd->add_option("--atol", eval_atol);
  eval_cmd->add_option("--momentum-noise", eval_mnoise,
                       "conservational momentum noise; <0: dataset delta, 0: ground truth");
  eval_cmd->add_option("--seed", eval_seed);
  eval_cmd->add_option("--path", eval_path, "cde control path: sg|hermite");

  // export-plot
  auto* export_cmd = app.add_subcommand("export-plot", "CSV exports for external plotting");
  std::string export_report, export_out, export_data;
  int export_s2 = 4;
  export_cmd->add_option("--report", export_report)->required();
  export_cmd->add_option("--out", export_out)->required();
  export_cmd->add_option("--data", export_data, "dataset for S2 trajectory tracks");
  export_cmd->add_option("--s2-count", export_s2);

  // verify
  auto* verify_cmd = app.add_subcommand("verify", "run the invariant/property suites");
  std::string verify_ckpt;
  verify_cmd->add_option("--ckpt", verify_ckpt, "also validate a checkpoint");

  // run
  auto* run_cmd = app.add_subcommand("run", "full pipeline from a TOML config");
  std::string run_config;
  std::vector<std::string> run_sets;
  run_cmd->add_option("--config", run_config)->required();
  run_cmd->add_option("--set", run_sets, "override config values: section.key=value");

  CLI11_PARSE(app, argc, argv);

  if (sim_cmd->parsed()) {
    data::DatasetSpec spec;
    spec.scenario = sim::scenario_from_string(sim_scenario);
    spec.count = sim_count;
    spec.delta = sim_delta;
    spec.t_end = sim_t_end;
    spec.obs_dt = sim_dt;
    spec.rtol = sim_rtol;
    spec.atol = sim_atol;
    spec.seed = sim_seed;
    const auto records = data::generate_dataset(spec);
    data::write_jsonl(sim_out, records);
    std::cout << "wrote " << records.size() << " trajectories to " << sim_out << '\n';
    return 0;
  }
  if (filter_cmd->parsed()) {
    cmd_filter(filter_in, filter_out, filter_n, filter_order);
    std::cout << "wrote fits to " << filter_out << '\n';
    return 0;
  }
  if (train_cmd->parsed()) {
    const auto dataset = data::read_jsonl(train_data);
    cde::CdeConfig mcfg;
    mcfg.order = train_order;
    mcfg.latent_dim = train_latent;
    mcfg.hidden_dim = train_hidden;
    mcfg.sg_half_width = train_n;
    mcfg.init_seed = train_seed;
    cde::CdeModel model = cde::CdeModel::create(mcfg);
    cde::TrainConfig tcfg;
    tcfg.steps = train_steps;
    tcfg.batch_size = train_batch;
    tcfg.lr = train_lr;
    tcfg.seed = train_seed;
    tcfg.val_segments = train_val;
    tcfg.cond_span = train_span;
    tcfg.horizon = train_horizon;
    tcfg.rk4_dt = train_dt;
    const auto metrics = cde::train(model, dataset, tcfg);
    cde::save_checkpoint(model, train_ckpt);
    write_metrics_jsonl(train_metrics.empty() ? train_ckpt + ".metrics.jsonl" : train_metrics,
                        metrics);
    if (!metrics.steps.empty()) {
      std::cout << "final train loss " << metrics.steps.back().train_loss << ", val loss "
                << metrics.steps.back().val_loss << '\n';
    }
    return 0;
  }
  if (eval_cmd->parsed()) {
    const auto dataset = data::read_jsonl(eval_data);
    baselines::EvalOptions opts;
    opts.horizons = parse_double_list(eval_horizons);
    opts.split = eval_split;
    opts.segment_stride = eval_stride;
    opts.sg_half_width = eval_n;
    opts.cond_span = eval_span;
    opts.momentum_noise = eval_mnoise;
    opts.seed = eval_seed;
    opts.adaptive = !eval_fixed;
    opts.rtol = eval_rtol;
    opts.atol = eval_atol;
    opts.path = eval_path == "hermite" ? cde::PathKind::Hermite : cde::PathKind::SavitzkyGolay;
    cde::CdeModel model;
    auto methods = parse_string_list(eval_methods);
    if (!eval_ckpt.empty()) {
      model = cde::load_checkpoint(eval_ckpt);
      opts.model = &model;
      if (std::find(methods.begin(), methods.end(), "cde") == methods.end()) {
        methods.insert(methods.begin(), "cde");
      }
    }
    const auto report = run_eval(methods, dataset, opts);
    baselines::write_report_json(eval_report, report);
    std::ofstream table(eval_report + ".txt");
    table << baselines::format_report_table(report);
    std::cout << baselines::format_report_table(report);
    return 0;
  }
  if (export_cmd->parsed()) {
    const auto report = baselines::read_report_json(export_report);
    std::vector<data::TrajectoryRecord> dataset;
    if (!export_data.empty()) dataset = data::read_jsonl(export_data);
    baselines::export_plot_data(report, export_out,
                                export_data.empty() ? nullptr : &dataset, export_s2);
    std::cout << "wrote plot data to " << export_out << '\n';
    return 0;
  }
  if (verify_cmd->parsed()) {
    const auto results = verify::run_all(verify_ckpt);
    std::cout << verify::format_table(results);
    return verify::all_passed(results) ? 0 : 1;
  }
  if (run_cmd->parsed()) {
    return cmd_run(run_config, run_sets);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
