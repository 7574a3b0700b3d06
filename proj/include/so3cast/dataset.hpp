#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "so3cast/rigid_body.hpp"
#include "so3cast/so3.hpp"

namespace so3cast::data {

/// One simulated trajectory: clean ground truth plus the noisy observation
/// channel, sampled on a uniform grid.
struct TrajectoryRecord {
  long id = -1;
  sim::Scenario scenario = sim::Scenario::FreeRotation;  // resolved, never VariableDynamics
  std::string split;                                     // train | val | test
  Eigen::Vector3d inertia = Eigen::Vector3d::Ones();
  double delta = 0.0;
  std::vector<double> t;
  std::vector<so3::Rotation> clean;
  std::vector<so3::Rotation> noisy;
  std::vector<so3::TangentVec> omega;  // body-frame angular velocity (ground truth)
};

struct DatasetSpec {
  sim::Scenario scenario = sim::Scenario::FreeRotation;
  int count = 200;          // total trajectories; distributed over the 4 MOI distributions
  double delta = 0.05 * M_PI;
  double t_end = 10.0;
  double obs_dt = 0.1;
  double rtol = 1e-9;
  double atol = 1e-9;
  std::uint64_t seed = 0;
};

/// Simulates spec.count trajectories. MOI distribution (id % 4) + 1 decides
/// the split: distributions 1-2 train, 3 val, 4 test. Each trajectory owns
/// an RNG stream derived from (seed, id), so generation parallelizes without
/// changing the output. For VariableDynamics the resolved scenario is drawn
/// as a random permutation of the four regimes per block of four ids, which
/// keeps the scenario shares exactly uniform.
std::vector<TrajectoryRecord> generate_dataset(const DatasetSpec& spec);

/// JSON-lines persistence, one trajectory per line:
/// {"id","scenario","split","inertia":[3],"delta","t":[N],
///  "clean":[N][9],"noisy":[N][9],"omega":[N][3]}, rotations row-major.
void write_jsonl(const std::string& path, const std::vector<TrajectoryRecord>& records);
std::vector<TrajectoryRecord> read_jsonl(const std::string& path);

std::vector<const TrajectoryRecord*> filter_split(const std::vector<TrajectoryRecord>& records,
                                                  const std::string& split);

}  // namespace so3cast::data
