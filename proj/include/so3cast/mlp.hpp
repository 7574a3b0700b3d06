#pragma once

#include <Eigen/Core>
#include <random>
#include <vector>

#include "so3cast/error.hpp"

namespace so3cast::cde {

/// Dense network with tanh hidden activations and a linear output layer.
/// Forward/backward are hand-rolled; backward accumulates parameter
/// gradients into a same-shaped Mlp and returns the input gradient.
struct Mlp {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;

  /// sizes = {in, hidden..., out}. Xavier-normal weights, zero biases.
  /// final_scale shrinks the output layer (near-zero init keeps an
  /// untrained CDE close to the identity flow).
  static Mlp create(const std::vector<int>& sizes, std::mt19937_64& rng,
                    double final_scale = 1.0);

  int layer_count() const { return static_cast<int>(w.size()); }
  int in_dim() const { return static_cast<int>(w.front().cols()); }
  int out_dim() const { return static_cast<int>(w.back().rows()); }
  long param_count() const;
  bool all_finite() const;

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;

  /// Post-activation inputs of every layer, recorded during forward.
  struct Tape {
    std::vector<Eigen::VectorXd> inputs;
  };
  Eigen::VectorXd forward(const Eigen::VectorXd& x, Tape& tape) const;
  Eigen::VectorXd backward(const Tape& tape, const Eigen::VectorXd& dy, Mlp& grad) const;

  Mlp zeros_like() const;
  void set_zero();
};

}  // namespace so3cast::cde
