#pragma once

// Central finite differences of episode_loss against its analytic gradient.

#include <algorithm>
#include <cmath>
#include <string>

#include "edge/training.hpp"

namespace edge::testing {

struct GradCheck {
  double max_relative = 0.0;
  double max_absolute = 0.0;
  std::string worst;  // parameter[index] with the largest relative error
  int entries = 0;
};

// Relative error |a - n| / max(|a|, |n|, floor): the floor keeps entries whose
// true gradient is numerically zero from dividing by rounding noise.
inline GradCheck check_episode_gradients(ModelParams params, const Episode& episode,
                                         const KnowledgeAssets& assets, const Ablation& ablation = {},
                                         double step = 1e-4, double floor = 1e-6) {
  episode_loss(params, episode, assets, ablation);
  std::vector<ad::Matrix> analytic;
  for (const auto* p : params.all()) analytic.push_back(p->grad);
  GradCheck out;
  const auto tensors = params.all();
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    auto& value = tensors[t]->value;
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double keep = value(i);
      value(i) = keep + step;
      const double up = episode_loss(params, episode, assets, ablation).loss;
      value(i) = keep - step;
      const double down = episode_loss(params, episode, assets, ablation).loss;
      value(i) = keep;
      const double numeric = (up - down) / (2 * step);
      const double a = analytic[t](i);
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
      out.max_absolute = std::max(out.max_absolute, abs_err);
      if (rel > out.max_relative) {
        out.max_relative = rel;
        out.worst = tensors[t]->name + "[" + std::to_string(i) + "]";
      }
      ++out.entries;
    }
  }
  return out;
}

}  // namespace edge::testing
