#pragma once

#include <string>
#include <vector>

#include "metareg/regnet.hpp"

namespace metareg {

enum class OptimizerKind { kAdam, kSgd };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);  // throws ConfigError

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Gradients for every parameter tensor, in canonical parameter order.
using ParamGrads = std::vector<Tensor<float>>;

class Optimizer {
 public:
  Optimizer(OptimizerConfig config, const NetworkParams& like);

  // Clears Adam moments and the step counter.
  void reset();
  void step(NetworkParams& params, const ParamGrads& grads);

  const OptimizerConfig& config() const { return config_; }
  long steps_taken() const { return t_; }

 private:
  OptimizerConfig config_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace metareg
