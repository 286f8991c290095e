#include "bgpt/adam.hpp"

#include <cmath>

namespace bgpt {

template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, std::vector<AdamState<T>>& states,
               const AdamConfig& config) {
  if (states.size() != params.size()) throw Error("adam_step: state count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    AdamState<T>& s = states[i];
    if (p.grad.size() != p.value.size()) {
      throw Error("adam_step: missing gradient for " + p.name);
    }
    if (s.m.size() != p.value.size()) {
      s.m = Tensor<T>(p.value.shape());
      s.v = Tensor<T>(p.value.shape());
    }
    ++s.step;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(s.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(s.step));
    const T b1 = static_cast<T>(config.beta1);
    const T b2 = static_cast<T>(config.beta2);
    const T step_size = static_cast<T>(config.lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(config.eps);
    T* w = p.value.ptr();
    const T* g = p.grad.ptr();
    T* m = s.m.ptr();
    T* v = s.v.ptr();
    for (std::size_t j = 0, n = p.value.size(); j < n; ++j) {
      if (!std::isfinite(g[j])) throw NumericError("adam_step: non-finite gradient in " + p.name);
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      w[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_bc2) + eps);
    }
  }
}

template <typename T>
Adam<T>::Adam(std::vector<Parameter<T>*> params, AdamConfig config)
    : params_(std::move(params)), states_(params_.size()), config_(config) {}

template <typename T>
void Adam<T>::step() {
  adam_step(params_, states_, config_);
}

template class Adam<float>;
template class Adam<double>;
template void adam_step<float>(const std::vector<Parameter<float>*>&,
                               std::vector<AdamState<float>>&, const AdamConfig&);
template void adam_step<double>(const std::vector<Parameter<double>*>&,
                                std::vector<AdamState<double>>&, const AdamConfig&);

}  // namespace bgpt
