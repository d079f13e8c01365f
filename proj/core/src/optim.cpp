#include "metareg/optim.hpp"

#include <cmath>

namespace metareg {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kAdam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

Optimizer::Optimizer(OptimizerConfig config, const NetworkParams& like) : config_(config) {
  if (!(config_.learning_rate >= 0.0) || !std::isfinite(config_.learning_rate)) {
    throw ConfigError("learning rate must be finite and nonnegative");
  }
  for (const auto& t : like.tensors) {
    m_.emplace_back(static_cast<std::size_t>(t.value.numel()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(t.value.numel()), 0.0);
  }
}

void Optimizer::reset() {
  for (auto& m : m_) std::fill(m.begin(), m.end(), 0.0);
  for (auto& v : v_) std::fill(v.begin(), v.end(), 0.0);
  t_ = 0;
}

void Optimizer::step(NetworkParams& params, const ParamGrads& grads) {
  if (grads.size() != params.tensors.size() || m_.size() != params.tensors.size()) {
    throw DimensionError("optimizer: expected " + std::to_string(params.tensors.size()) + " gradient tensors, got " +
                         std::to_string(grads.size()));
  }
  ++t_;
  const double lr = config_.learning_rate;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < grads.size(); ++p) {
    Tensor<float>& w = params.tensors[p].value;
    const Tensor<float>& g = grads[p];
    if (g.shape() != w.shape()) {
      throw DimensionError("optimizer: gradient for " + params.tensors[p].name + " has shape " +
                           shape_str(g.shape()) + ", parameter has " + shape_str(w.shape()));
    }
    float* x = w.raw();
    const float* gx = g.raw();
    const std::int64_t n = w.numel();
    if (config_.kind == OptimizerKind::kSgd) {
      for (std::int64_t i = 0; i < n; ++i) x[i] = static_cast<float>(x[i] - lr * gx[i]);
      continue;
    }
    double* m = m_[p].data();
    double* v = v_[p].data();
    for (std::int64_t i = 0; i < n; ++i) {
      const double gi = gx[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
      const double mh = m[i] / c1, vh = v[i] / c2;
      x[i] = static_cast<float>(x[i] - lr * mh / (std::sqrt(vh) + config_.epsilon));
    }
  }
}

}  // namespace metareg
