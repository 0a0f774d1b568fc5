#pragma once

#include <vector>

#include "csteer/token_sequence.hpp"

namespace csteer {

struct LossConfig {
  int enhanced_tokens = 2;        // leading target tokens the enhancement reweights (h)
  double enhancement_rate = 0.4;  // blend rate (r)
  double clamp_eps = 1e-6;        // probabilities clamped to [eps, 1-eps] before log(1-p)
};

/// Attack loss for one task variant from its teacher-forced step
/// distributions. `step_dists[j]` is the next-token distribution after the
/// task text plus the first j target tokens. The base term sums
/// log(1 - p(t_i | ..., t_1..t_{i-1})); the enhancement term re-scores each of
/// the first h target tokens under every truncated prefix j <= i, and the two
/// blend as (base + r * enh) / (r + 1).
///
/// When `dp` is non-null it receives d loss / d step_dists[j][v], same shape
/// as step_dists; clamped probabilities get a zero derivative.
double assemble_loss(const std::vector<std::vector<double>>& step_dists,
                     const std::vector<TokenId>& target, const LossConfig& cfg,
                     std::vector<std::vector<double>>* dp = nullptr);

}  // namespace csteer
