#include "so3cast/dataset.hpp"

#include <algorithm>
#include <array>
#include <fstream>

#include <json.hpp>

#include "so3cast/parallel.hpp"

namespace so3cast::data {

namespace {

using nlohmann::json;

constexpr std::uint64_t kScenarioStream = 0x5343454eull;  // distinct stream tag

sim::Scenario resolve_scenario(const DatasetSpec& spec, long id) {
  if (spec.scenario != sim::Scenario::VariableDynamics) return spec.scenario;
  static const std::array<sim::Scenario, 4> all = {
      sim::Scenario::FreeRotation, sim::Scenario::LinearControl,
      sim::Scenario::VelocityDamping, sim::Scenario::ConfigDependentTorque};
  std::array<sim::Scenario, 4> perm = all;
  std::mt19937_64 rng(mix_seed(spec.seed ^ kScenarioStream, static_cast<std::uint64_t>(id / 4)));
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm[id % 4];
}

TrajectoryRecord simulate_one(const DatasetSpec& spec, long id) {
  std::mt19937_64 rng(mix_seed(spec.seed, static_cast<std::uint64_t>(id)));

  const int dist_id = static_cast<int>(id % 4) + 1;
  TrajectoryRecord rec;
  rec.id = id;
  rec.scenario = resolve_scenario(spec, id);
  rec.split = dist_id <= 2 ? "train" : (dist_id == 3 ? "val" : "test");
  rec.delta = spec.delta;

  sim::RigidBodyConfig config;
  config.scenario = rec.scenario;
  config.inertia = sim::sample_inertia(dist_id, rng);
  rec.inertia = config.inertia.j;

  sim::BodyState state0;
  state0.r = so3::random_rotation(rng);
  state0.omega = sim::sample_initial_omega(rng);

  if (rec.scenario == sim::Scenario::LinearControl) {
    std::normal_distribution<double> n(0.0, 0.1);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) config.control_A(i, j) = n(rng);
    config.control_A -= 0.05 * Eigen::Matrix3d::Identity();  // mild stability bias
    config.control_b = Eigen::Vector3d(n(rng), n(rng), n(rng));
  }

  const int n_samples = static_cast<int>(std::llround(spec.t_end / spec.obs_dt)) + 1;
  std::vector<double> times(n_samples);
  for (int k = 0; k < n_samples; ++k) times[k] = k * spec.obs_dt;

  const auto sim_out = sim::simulate_at(config, state0, times, spec.rtol, spec.atol);
  rec.t = sim_out.trajectory.t;
  rec.clean = sim_out.trajectory.r;
  rec.omega = sim_out.trajectory.omega;

  rec.noisy.reserve(rec.clean.size());
  for (const auto& r : rec.clean) rec.noisy.push_back(so3::perturb(r, spec.delta, rng));
  return rec;
}

json rotation_to_json(const so3::Rotation& r) {
  const so3::Vec9 v = so3::flatten9(r);
  json a = json::array();
  for (int i = 0; i < 9; ++i) a.push_back(v[i]);
  return a;
}

so3::Rotation rotation_from_json(const json& a) {
  so3::Vec9 v;
  for (int i = 0; i < 9; ++i) v[i] = a.at(i).get<double>();
  return so3::unflatten9(v);
}

}  // namespace

std::vector<TrajectoryRecord> generate_dataset(const DatasetSpec& spec) {
  if (spec.count <= 0) throw ConfigError("generate_dataset: count must be positive");
  std::vector<TrajectoryRecord> records(spec.count);
  parallel_for(static_cast<std::size_t>(spec.count),
               [&](std::size_t i) { records[i] = simulate_one(spec, static_cast<long>(i)); });
  return records;
}

void write_jsonl(const std::string& path, const std::vector<TrajectoryRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("write_jsonl: cannot open " + path);
  for (const auto& rec : records) {
    json line;
    line["id"] = rec.id;
    line["scenario"] = sim::to_string(rec.scenario);
    line["split"] = rec.split;
    line["inertia"] = {rec.inertia[0], rec.inertia[1], rec.inertia[2]};
    line["delta"] = rec.delta;
    line["t"] = rec.t;
    json clean = json::array(), noisy = json::array(), omega = json::array();
    for (std::size_t k = 0; k < rec.t.size(); ++k) {
      clean.push_back(rotation_to_json(rec.clean[k]));
      noisy.push_back(rotation_to_json(rec.noisy[k]));
      omega.push_back({rec.omega[k][0], rec.omega[k][1], rec.omega[k][2]});
    }
    line["clean"] = std::move(clean);
    line["noisy"] = std::move(noisy);
    line["omega"] = std::move(omega);
    out << line.dump() << '\n';
  }
  if (!out) throw IoError("write_jsonl: write failed for " + path);
}

std::vector<TrajectoryRecord> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("read_jsonl: cannot open " + path);
  std::vector<TrajectoryRecord> records;
  std::string buf;
  long line_no = 0;
  while (std::getline(in, buf)) {
    ++line_no;
    if (buf.empty()) continue;
    json line;
    try {
      line = json::parse(buf);
    } catch (const json::exception& e) {
      throw IoError("read_jsonl: " + path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    TrajectoryRecord rec;
    rec.id = line.at("id").get<long>();
    rec.scenario = sim::scenario_from_string(line.at("scenario").get<std::string>());
    rec.split = line.at("split").get<std::string>();
    for (int i = 0; i < 3; ++i) rec.inertia[i] = line.at("inertia").at(i).get<double>();
    rec.delta = line.at("delta").get<double>();
    rec.t = line.at("t").get<std::vector<double>>();
    const auto& clean = line.at("clean");
    const auto& noisy = line.at("noisy");
    for (std::size_t k = 0; k < rec.t.size(); ++k) {
      rec.clean.push_back(rotation_from_json(clean.at(k)));
      rec.noisy.push_back(rotation_from_json(noisy.at(k)));
    }
    if (line.contains("omega")) {
      for (std::size_t k = 0; k < rec.t.size(); ++k) {
        const auto& w = line.at("omega").at(k);
        rec.omega.emplace_back(w.at(0).get<double>(), w.at(1).get<double>(),
                               w.at(2).get<double>());
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<const TrajectoryRecord*> filter_split(const std::vector<TrajectoryRecord>& records,
                                                  const std::string& split) {
  std::vector<const TrajectoryRecord*> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(&r);
  return out;
}

}  // namespace so3cast::data
