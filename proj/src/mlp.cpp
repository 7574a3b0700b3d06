#include "so3cast/mlp.hpp"

#include <cmath>

namespace so3cast::cde {

Mlp Mlp::create(const std::vector<int>& sizes, std::mt19937_64& rng, double final_scale) {
  if (sizes.size() < 2) throw Error("Mlp::create: need at least in/out sizes");
  Mlp net;
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const int fan_in = sizes[i], fan_out = sizes[i + 1];
    double scale = std::sqrt(2.0 / (fan_in + fan_out));
    if (i + 2 == sizes.size()) scale *= final_scale;
    Eigen::MatrixXd wi(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c) wi(r, c) = scale * n(rng);
    net.w.push_back(std::move(wi));
    net.b.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return net;
}

long Mlp::param_count() const {
  long count = 0;
  for (std::size_t i = 0; i < w.size(); ++i) count += w[i].size() + b[i].size();
  return count;
}

bool Mlp::all_finite() const {
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!w[i].allFinite() || !b[i].allFinite()) return false;
  }
  return true;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
  Eigen::VectorXd a = x;
  for (int i = 0; i < layer_count(); ++i) {
    a = w[i] * a + b[i];
    if (i + 1 < layer_count()) a = a.array().tanh();
  }
  return a;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x, Tape& tape) const {
  tape.inputs.clear();
  tape.inputs.reserve(w.size() + 1);
  Eigen::VectorXd a = x;
  for (int i = 0; i < layer_count(); ++i) {
    tape.inputs.push_back(a);
    a = w[i] * a + b[i];
    if (i + 1 < layer_count()) a = a.array().tanh();
  }
  tape.inputs.push_back(a);  // final output, needed to recover tanh'(z) upstream
  return a;
}

Eigen::VectorXd Mlp::backward(const Tape& tape, const Eigen::VectorXd& dy, Mlp& grad) const {
  Eigen::VectorXd da = dy;
  for (int i = layer_count() - 1; i >= 0; --i) {
    Eigen::VectorXd dz;
    if (i + 1 < layer_count()) {
      // tape.inputs[i + 1] holds tanh(z_i); tanh' = 1 - tanh^2
      const auto& act = tape.inputs[i + 1];
      dz = da.array() * (1.0 - act.array().square());
    } else {
      dz = da;
    }
    grad.w[i].noalias() += dz * tape.inputs[i].transpose();
    grad.b[i] += dz;
    da.noalias() = w[i].transpose() * dz;
  }
  return da;
}

Mlp Mlp::zeros_like() const {
  Mlp z;
  for (std::size_t i = 0; i < w.size(); ++i) {
    z.w.push_back(Eigen::MatrixXd::Zero(w[i].rows(), w[i].cols()));
    z.b.push_back(Eigen::VectorXd::Zero(b[i].size()));
  }
  return z;
}

void Mlp::set_zero() {
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i].setZero();
    b[i].setZero();
  }
}

}  // namespace so3cast::cde
