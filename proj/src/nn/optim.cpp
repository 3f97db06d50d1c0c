#include "colorcount/nn/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace colorcount::nn {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd-momentum") return OptimizerKind::kSgdMomentum;
  throw std::invalid_argument("unknown optimizer '" + name + "' (expected adam or sgd-momentum)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kAdam ? "adam" : "sgd-momentum"; }

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, std::vector<Parameter*> params)
    : kind_(kind), lr_(learning_rate), params_(std::move(params)) {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("Optimizer: learning rate must be positive");
  for (const auto* p : params_) {
    m_.emplace_back("m/" + p->name, p->shape);
    v_.emplace_back("v/" + p->name, p->shape);
  }
}

void Optimizer::step(float grad_scale) {
  ++steps_;
  constexpr double b1 = 0.9;
  constexpr double b2 = 0.999;
  constexpr double eps = 1e-8;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    auto& m = m_[k].value;
    auto& v = v_[k].value;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const float g = p.grad[i] * grad_scale;
      if (kind_ == OptimizerKind::kAdam) {
        m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * g);
        v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * static_cast<double>(g) * g);
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        p.value[i] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps));
      } else {
        m[i] = static_cast<float>(0.9 * m[i] + g);
        p.value[i] -= static_cast<float>(lr_ * m[i]);
      }
    }
  }
}

void Optimizer::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

}  // namespace colorcount::nn
