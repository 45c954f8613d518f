#pragma once

#include <map>
#include <string>
#include <vector>

#include "trinet/checkpoint.hpp"

namespace trinet {

enum class OptimizerKind { kAdam, kSgd };

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam or plain SGD over a named subset of a ParameterStore.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, AdamSettings adam = {});

  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }
  OptimizerKind kind() const { return kind_; }

  // Applies one update to the named parameters using their current grads.
  void step(ParameterStore& params, const std::vector<std::string>& names);

  // Moment buffers and step count, keyed under "optim/".
  TensorMap state() const;
  void load_state(const TensorMap& tensors);

 private:
  OptimizerKind kind_;
  double lr_;
  AdamSettings adam_;
  long step_count_ = 0;
  std::map<std::string, std::vector<double>> m_;
  std::map<std::string, std::vector<double>> v_;
};

}  // namespace trinet
