#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "srlab/tensor.hpp"

namespace srlab {

/// A named, learnable tensor. The tensor handle shares storage with the layer
/// that owns it; `trainable == false` freezes it for the optimizer.
struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias-corrected moments. Moment buffers are keyed by parameter name.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// One update of every trainable parameter. Frozen parameters are skipped
  /// entirely (values and moments untouched). Trainable parameters without a
  /// gradient are treated as having zero gradient and counted.
  void step(std::vector<Parameter>& params);

  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }
  const AdamConfig& config() const { return config_; }

  std::int64_t steps_taken() const { return step_; }
  std::int64_t missing_grad_count() const { return missing_grads_; }

  /// Moment buffers as named tensors ("<param>.m", "<param>.v") plus "step".
  std::vector<std::pair<std::string, Tensor>> state() const;
  void load_state(const std::vector<std::pair<std::string, Tensor>>& named);

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };

  AdamConfig config_;
  std::int64_t step_ = 0;
  std::int64_t missing_grads_ = 0;
  std::map<std::string, Moments> moments_;
};

void zero_grads(std::vector<Parameter>& params);

/// lr * 0.5^floor(step / halve_every); halve_every <= 0 disables decay.
double halved_lr(double base_lr, std::int64_t step, std::int64_t halve_every);

}  // namespace srlab
