#include "csteer/loss.hpp"

#include <algorithm>
#include <cmath>

#include "csteer/errors.hpp"

namespace csteer {

double assemble_loss(const std::vector<std::vector<double>>& step_dists,
                     const std::vector<TokenId>& target, const LossConfig& cfg,
                     std::vector<std::vector<double>>* dp) {
  const int k = static_cast<int>(target.size());
  if (static_cast<int>(step_dists.size()) < k) {
    throw Error(ErrorCode::invalid_slot, "missing step distributions for the target");
  }
  const double eps = cfg.clamp_eps;
  const int h = std::max(1, std::min(cfg.enhanced_tokens, k));
  const double r = cfg.enhancement_rate;

  if (dp) {
    dp->assign(step_dists.size(), {});
    for (std::size_t j = 0; j < step_dists.size(); ++j) {
      (*dp)[j].assign(step_dists[j].size(), 0.0);
    }
  }

  // token t_i scored under the distribution after j-1 target tokens
  auto term = [&](int i, int j, double dp_weight) {
    const auto ti = static_cast<std::size_t>(target[static_cast<std::size_t>(i - 1)]);
    const double p = step_dists[static_cast<std::size_t>(j - 1)][ti];
    const double pc = std::clamp(p, eps, 1.0 - eps);
    if (dp && p > eps && p < 1.0 - eps) {
      (*dp)[static_cast<std::size_t>(j - 1)][ti] += -dp_weight / (1.0 - pc);
    }
    return std::log(1.0 - pc);
  };

  const double blend = 1.0 / (r + 1.0);
  const double enh_w = r * blend / static_cast<double>(h);

  double base = 0.0;
  for (int i = 1; i <= k; ++i) {
    base += term(i, i, blend);
  }
  if (r == 0.0) {
    return base;  // exact reduction to the unblended sum
  }
  double enh = 0.0;
  for (int i = 1; i <= h; ++i) {
    for (int j = 1; j <= i; ++j) {
      enh += term(i, j, enh_w);
    }
  }
  return (base + r * (enh / static_cast<double>(h))) / (r + 1.0);
}

}  // namespace csteer
