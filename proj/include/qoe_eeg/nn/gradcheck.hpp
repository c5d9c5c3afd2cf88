#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "qoe_eeg/nn/model.hpp"

namespace qoe::nn {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
/// gradient is ~0 from dominating on round-off alone.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares backward() against central differences of loss_value(). Every
/// evaluation replays the same dropout stream (`rng_seed`). Tensors larger
/// than `max_per_param` entries are checked on a seeded sample.
inline GradCheckResult check_gradients(const Params& params, const ModelConfig& config, std::span<const Example> batch,
                                       std::uint64_t rng_seed, double step = 1e-5,
                                       std::size_t max_per_param = 0) {
  CounterRng rng(rng_seed);
  const StepResult analytic = backward(params, config, batch, rng);
  Params probe = params;
  GradCheckResult out;
  CounterRng pick(derive_seed(rng_seed, "gradcheck-sample"));
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    if (!params.items[i].trainable) continue;
    const auto n = static_cast<std::size_t>(params.items[i].value.size());
    std::vector<std::size_t> entries;
    if (max_per_param == 0 || n <= max_per_param) {
      for (std::size_t k = 0; k < n; ++k) entries.push_back(k);
    } else {
      for (std::size_t k = 0; k < max_per_param; ++k) entries.push_back(pick.index(n));
    }
    for (std::size_t k : entries) {
      double& w = probe.items[i].value.data()[k];
      const double orig = w;
      w = orig + step;
      CounterRng r1(rng_seed);
      const double up = loss_value(probe, config, batch, r1);
      w = orig - step;
      CounterRng r2(rng_seed);
      const double down = loss_value(probe, config, batch, r2);
      w = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic.grads[i].data()[k];
      const double err = relative_error(a, numeric);
      ++out.checked;
      if (err > out.max_relative_error) {
        out.max_relative_error = err;
        out.worst_param = params.items[i].name + "[" + std::to_string(k) + "]";
        out.worst_analytic = a;
        out.worst_numeric = numeric;
      }
    }
  }
  return out;
}

}  // namespace qoe::nn
