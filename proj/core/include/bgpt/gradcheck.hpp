#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "bgpt/tensor.hpp"

namespace bgpt {

/// Evaluates a scalar loss. When `with_grad` is set the callee must also
/// accumulate d(loss)/d(param) into each parameter's grad (grads are zeroed
/// by the caller beforehand).
using LossFn = std::function<double(bool with_grad)>;

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
};

/// Compares analytic gradients against central differences at `probes`
/// coordinates drawn uniformly over all parameter entries. The error per probe
/// is |analytic - numeric| / max(1, |analytic|).
GradcheckResult finite_diff_gradcheck(const LossFn& loss,
                                      const std::vector<Parameter<double>*>& params,
                                      std::size_t probes, double h = 1e-4,
                                      std::uint64_t seed = 0);

}  // namespace bgpt
