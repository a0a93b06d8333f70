#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lensnvs/tensor.hpp"

namespace lensnvs::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<input index>[<element>]: analytic vs numeric"
  std::size_t checked = 0;
};

struct GradCheckOptions {
  double eps = 1e-4;
  /// Denominator floor: rel = |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  /// At most this many (evenly spaced) entries per input are probed.
  std::size_t max_entries = 64;
};

/// Compares reverse-mode gradients of `loss_fn()` with respect to `inputs`
/// (which must require grad) against central finite differences.
GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn,
                                const std::vector<Tensor>& inputs, const GradCheckOptions& options = {});

}  // namespace lensnvs::nn
