#include "lensnvs/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lensnvs::nn {

GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& inputs,
                                const GradCheckOptions& options) {
  for (Tensor t : inputs) t.zero_grad();
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor t = inputs[k];
    auto values = t.mutable_values();
    const std::size_t n = values.size();
    const std::size_t stride = std::max<std::size_t>(1, n / options.max_entries);
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = values[i];
      values[i] = saved + options.eps;
      const double plus = loss_fn().item();
      values[i] = saved - options.eps;
      const double minus = loss_fn().item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      const double a = analytic[k][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), options.floor});
      ++result.checked;
      if (rel > result.max_rel_error || std::isnan(rel)) {
        result.max_rel_error = std::isnan(rel) ? INFINITY : rel;
        std::ostringstream os;
        os << k << "[" << i << "]: analytic " << a << " vs numeric " << numeric;
        result.worst = os.str();
      }
    }
  }
  for (Tensor t : inputs) t.zero_grad();
  return result;
}

}  // namespace lensnvs::nn
