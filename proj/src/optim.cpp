#include "trinet/optim.hpp"

#include <cmath>

#include "trinet/error.hpp"

namespace trinet {

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, AdamSettings adam)
    : kind_(kind), lr_(learning_rate), adam_(adam) {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
}

void Optimizer::step(ParameterStore& params, const std::vector<std::string>& names) {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(adam_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(adam_.beta2, static_cast<double>(step_count_));
  for (const auto& name : names) {
    ad::Tensor& p = params.get(name);
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    auto g = p.grad();
    if (kind_ == OptimizerKind::kSgd) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * g[i];
      continue;
    }
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(w.size(), 0.0);
      v.assign(w.size(), 0.0);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = adam_.beta1 * m[i] + (1.0 - adam_.beta1) * g[i];
      v[i] = adam_.beta2 * v[i] + (1.0 - adam_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr_ * mhat / (std::sqrt(vhat) + adam_.eps);
    }
  }
}

TensorMap Optimizer::state() const {
  TensorMap out;
  out.emplace("optim/step", ad::Tensor::scalar(static_cast<double>(step_count_)));
  for (const auto& [name, m] : m_) {
    out.emplace("optim/m/" + name, ad::Tensor::from_vector({m.size()}, m));
    out.emplace("optim/v/" + name, ad::Tensor::from_vector({m.size()}, v_.at(name)));
  }
  return out;
}

void Optimizer::load_state(const TensorMap& tensors) {
  m_.clear();
  v_.clear();
  step_count_ = 0;
  for (const auto& [key, t] : tensors) {
    if (key == "optim/step") {
      step_count_ = static_cast<long>(t.item());
    } else if (key.rfind("optim/m/", 0) == 0) {
      m_[key.substr(8)] = t.to_vector();
    } else if (key.rfind("optim/v/", 0) == 0) {
      v_[key.substr(8)] = t.to_vector();
    }
  }
}

}  // namespace trinet
