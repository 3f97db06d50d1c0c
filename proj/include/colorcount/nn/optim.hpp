#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "colorcount/nn/tensor.hpp"

namespace colorcount::nn {

enum class OptimizerKind { kAdam, kSgdMomentum };

[[nodiscard]] OptimizerKind parse_optimizer(const std::string& name);
[[nodiscard]] std::string to_string(OptimizerKind kind);

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8) or SGD with momentum 0.9 over a
/// fixed parameter list. Moment buffers are named after the parameters so
/// they can be checkpointed.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, std::vector<Parameter*> params);

  /// Applies one update from the accumulated gradients scaled by grad_scale.
  void step(float grad_scale = 1.0f);
  void zero_grad();

  [[nodiscard]] std::int64_t steps() const { return steps_; }
  [[nodiscard]] const std::vector<Parameter*>& params() const { return params_; }

  /// First and second moment buffers (momentum only uses the first).
  std::vector<Parameter>& first_moments() { return m_; }
  std::vector<Parameter>& second_moments() { return v_; }
  void set_steps(std::int64_t s) { steps_ = s; }

 private:
  OptimizerKind kind_;
  double lr_;
  std::vector<Parameter*> params_;
  std::vector<Parameter> m_;
  std::vector<Parameter> v_;
  std::int64_t steps_ = 0;
};

}  // namespace colorcount::nn
