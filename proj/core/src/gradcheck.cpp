#include "bgpt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace bgpt {

namespace {

double checked(double v) {
  if (!std::isfinite(v)) throw NumericError("gradcheck: non-finite loss");
  return v;
}

}  // namespace

GradcheckResult finite_diff_gradcheck(const LossFn& loss,
                                      const std::vector<Parameter<double>*>& params,
                                      std::size_t probes, double h, std::uint64_t seed) {
  std::size_t total = 0;
  for (const auto* p : params) total += p->size();
  if (total == 0 || probes == 0) throw Error("gradcheck: empty probe set");

  for (auto* p : params) p->zero_grad();
  checked(loss(true));

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  GradcheckResult result;
  for (std::size_t k = 0; k < probes; ++k) {
    std::size_t flat = pick(rng);
    std::size_t pi = 0;
    while (flat >= params[pi]->size()) flat -= params[pi++]->size();
    Parameter<double>& p = *params[pi];
    const double orig = p.value[flat];
    p.value[flat] = orig + h;
    const double plus = checked(loss(false));
    p.value[flat] = orig - h;
    const double minus = checked(loss(false));
    p.value[flat] = orig;
    const double numeric = (plus - minus) / (2.0 * h);
    const double analytic = p.grad[flat];
    const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
    result.max_rel_error = std::max(result.max_rel_error, err);
    ++result.probes;
  }
  return result;
}

}  // namespace bgpt
