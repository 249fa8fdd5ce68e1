#include "srlab/optim.hpp"

#include <cmath>

namespace srlab {

void Adam::step(std::vector<Parameter>& params) {
  ++step_;
  const double correction1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double correction2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (auto& p : params) {
    if (!p.trainable) continue;
    Tensor grad = p.value.grad();
    if (!grad.defined()) {
      ++missing_grads_;
      grad = Tensor::zeros(p.value.shape(), p.value.dtype());
    }
    auto& mom = moments_[p.name];
    if (!mom.m.defined()) {
      mom.m = Tensor::zeros(p.value.shape(), p.value.dtype());
      mom.v = Tensor::zeros(p.value.shape(), p.value.dtype());
    }
    visit_dtype(p.value.dtype(), [&]<typename T>() {
      auto w = p.value.data<T>();
      auto g = grad.data<T>();
      auto m = mom.m.data<T>();
      auto v = mom.v.data<T>();
      const T b1 = static_cast<T>(config_.beta1);
      const T b2 = static_cast<T>(config_.beta2);
      const T lr = static_cast<T>(config_.lr);
      const T eps = static_cast<T>(config_.epsilon);
      const T c1 = static_cast<T>(correction1);
      const T c2 = static_cast<T>(correction2);
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        const T m_hat = m[i] / c1;
        const T v_hat = v[i] / c2;
        w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
      }
    });
  }
}

std::vector<std::pair<std::string, Tensor>> Adam::state() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("step", Tensor::scalar(static_cast<double>(step_), DType::f64));
  for (const auto& [name, mom] : moments_) {
    out.emplace_back(name + ".m", mom.m);
    out.emplace_back(name + ".v", mom.v);
  }
  return out;
}

void Adam::load_state(const std::vector<std::pair<std::string, Tensor>>& named) {
  moments_.clear();
  step_ = 0;
  for (const auto& [name, t] : named) {
    if (name == "step") {
      step_ = static_cast<std::int64_t>(t.item());
      continue;
    }
    const auto dot = name.rfind('.');
    if (dot == std::string::npos) continue;
    const std::string param = name.substr(0, dot);
    const std::string which = name.substr(dot + 1);
    if (which == "m") {
      moments_[param].m = t.clone();
    } else if (which == "v") {
      moments_[param].v = t.clone();
    }
  }
}

void zero_grads(std::vector<Parameter>& params) {
  for (auto& p : params) p.value.zero_grad();
}

double halved_lr(double base_lr, std::int64_t step, std::int64_t halve_every) {
  if (halve_every <= 0) return base_lr;
  return base_lr * std::pow(0.5, static_cast<double>(step / halve_every));
}

}  // namespace srlab
