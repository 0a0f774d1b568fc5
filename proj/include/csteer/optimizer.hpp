#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "csteer/exec.hpp"
#include "csteer/loss.hpp"
#include "csteer/oracle.hpp"
#include "csteer/task.hpp"

namespace csteer {

/// How the static keyword part and the optimized adversarial part combine
/// into one token run.
enum class Placement { key_first, key_last, interleaved };

std::string placement_name(Placement p);
Placement parse_placement(const std::string& name);

struct Perturbation {
  std::vector<TokenId> keyword_tokens;
  std::vector<TokenId> adversarial_tokens;
  Placement placement = Placement::key_first;

  /// The combined token run in placement order.
  std::vector<TokenId> run() const;
  /// Run offsets occupied by the adversarial part, in adversarial order.
  std::vector<std::size_t> adversarial_offsets() const;
  int token_count() const {
    return static_cast<int>(keyword_tokens.size() + adversarial_tokens.size());
  }
};

struct OptimizerConfig {
  int top_k = 400;
  int adversarial_length = 10;
  int n_keywords = 2;
  int max_passes = 50;
  std::uint64_t seed = 100;
  int keyword_pool_cap = 30;
  Placement placement = Placement::key_first;
  ExecPolicy policy = ExecPolicy::parallel;
};

struct TraceStep {
  int pass = 0;
  int slot = 0;  // run offset of the updated token; -1 for a keyword reselection
  TokenId candidate = -1;
  double old_loss = 0.0;
  double new_loss = 0.0;
  bool accepted = false;
};

struct OptimizationTrace {
  std::vector<TraceStep> steps;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  bool pass_limit_reached = false;
};

/// Vocabulary eligibility mask: special tokens are always out; the comment
/// placement additionally rejects tokens whose surface carries a newline.
struct TokenFilter {
  std::vector<char> eligible;
  bool ok(TokenId id) const { return eligible[static_cast<std::size_t>(id)] != 0; }
  std::vector<TokenId> ids() const;
};

TokenFilter build_token_filter(const ModelOracle& oracle, bool forbid_newline = true);

/// A candidate is render-stable if substituting it into the run re-encodes to
/// the same token boundaries.
bool render_stable(const ModelOracle& oracle, std::span<const TokenId> run,
                   std::size_t slot, TokenId candidate);

/// Top-k tokens by ascending e' . grad, ties by ascending id. `current` is the
/// occupant token; subtracting its embedding shifts every score by the same
/// constant, so the ranking is computed from the plain inner product.
std::vector<TokenId> candidate_tokens(const EmbeddingGradSlice& grad,
                                      const ModelOracle& oracle, TokenId current, int k,
                                      const TokenFilter& filter);

/// Mean blended loss over task variants with the perturbation run spliced in
/// as a comment line after the conditional segment.
double compute_loss(const std::vector<TaskCode>& tasks, const MaliciousObjective& objective,
                    const Perturbation& p, const ModelOracle& oracle, const LossConfig& cfg,
                    ExecPolicy policy = ExecPolicy::serial);

/// Greedy coordinate descent over the adversarial slots: per slot, rank
/// candidates by the embedding-gradient inner product, evaluate their true
/// losses, and accept strict improvements against a baseline that refreshes on
/// every acceptance. Stops when a full pass changes nothing.
std::pair<Perturbation, OptimizationTrace> optimize_adversarial(
    const std::vector<TaskCode>& tasks, const MaliciousObjective& objective,
    const Perturbation& p0, const ModelOracle& oracle, const OptimizerConfig& opt_cfg,
    const LossConfig& loss_cfg);

/// Ordered keyword ids drawn from the target/position token pool: exhaustive
/// over ordered n-tuples when the pool is small, greedy one keyword at a time
/// otherwise.
std::vector<TokenId> select_keywords(const std::vector<TaskCode>& tasks,
                                     const MaliciousObjective& objective,
                                     std::span<const TokenId> p_adv,
                                     const ModelOracle& oracle,
                                     const OptimizerConfig& opt_cfg,
                                     const LossConfig& loss_cfg);

/// Unique non-special tokens of encode(target) then encode(position), in
/// first-occurrence order.
std::vector<TokenId> keyword_pool(const MaliciousObjective& objective,
                                  const ModelOracle& oracle);

/// Full pipeline: build tasks, initialize the adversarial part uniformly at
/// random over the eligible vocabulary, then alternate keyword selection and
/// adversarial optimization until neither part changes.
std::pair<Perturbation, OptimizationTrace> optimize(const MaliciousObjective& objective,
                                                    const ModelOracle& oracle,
                                                    const OptimizerConfig& opt_cfg,
                                                    const LossConfig& loss_cfg,
                                                    const NoiseProfile& noise);

/// The comment marker the perturbation line uses during optimization.
std::string comment_marker(CaseLanguage language);

}  // namespace csteer
