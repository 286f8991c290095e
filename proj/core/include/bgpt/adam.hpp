#pragma once

#include <cstdint>
#include <vector>

#include "bgpt/tensor.hpp"

namespace bgpt {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates for one parameter.
template <typename T>
struct AdamState {
  Tensor<T> m;
  Tensor<T> v;
  std::uint64_t step = 0;
};

/// Adam with bias correction and a constant learning rate.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, AdamConfig config);

  /// Applies one update to every parameter. Throws if a gradient is missing
  /// (shape mismatch) or non-finite.
  void step();

  void set_lr(double lr) { config_.lr = lr; }
  const AdamConfig& config() const { return config_; }
  const std::vector<AdamState<T>>& states() const { return states_; }

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<AdamState<T>> states_;
  AdamConfig config_;
};

/// Free-function form: one Adam update over `params` with matching `states`.
template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, std::vector<AdamState<T>>& states,
               const AdamConfig& config);

}  // namespace bgpt
