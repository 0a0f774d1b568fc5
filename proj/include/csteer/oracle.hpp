#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "csteer/grammar.hpp"
#include "csteer/loss.hpp"
#include "csteer/model.hpp"
#include "csteer/token_sequence.hpp"
#include "csteer/tokenizer.hpp"

namespace csteer {

struct DecodeConfig {
  enum class Mode { greedy, sample };
  Mode mode = Mode::greedy;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

struct TeacherForcedProbs {
  std::vector<double> probs;  // one entry per target token, each in (0, 1]
};

struct EmbeddingGradSlice {
  int position = 0;           // index within the requested slot list
  std::vector<double> grad;   // d loss / d embedding-input at that slot
};

struct LossAndGrads {
  double loss = 0.0;
  std::vector<EmbeddingGradSlice> grads;
};

/// Adapter contract for any autoregressive token model the attack can drive.
/// Implementations must be immutable after construction; all queries are pure
/// functions of (inputs, seed), safe for concurrent use.
class ModelOracle {
 public:
  virtual ~ModelOracle() = default;

  virtual int vocab_size() const = 0;
  virtual int embedding_dim() const = 0;
  virtual int context_window() const = 0;
  virtual const std::vector<TokenId>& special_tokens() const = 0;
  virtual std::span<const double> embedding(TokenId id) const = 0;

  virtual TokenSequence encode(std::string_view text) const = 0;
  virtual std::string decode(std::span<const TokenId> ids) const = 0;

  /// Teacher-forced next-token distributions: entry j is the distribution
  /// after the prefix ids[0 .. first_prefix_len + j). Each sums to 1.
  virtual std::vector<std::vector<double>> step_distributions(
      std::span<const TokenId> ids, std::size_t first_prefix_len,
      std::size_t n_steps) const = 0;

  virtual TeacherForcedProbs target_probs(const TokenSequence& prefix,
                                          const TokenSequence& target) const;

  /// Attack loss over task variants that already carry the perturbation at
  /// `slot_positions` (indices into each variant), plus embedding-layer
  /// gradients at exactly those slots.
  virtual LossAndGrads loss_and_grads(const std::vector<TokenSequence>& task_variants,
                                      const std::vector<std::size_t>& slot_positions,
                                      const TokenSequence& target,
                                      const LossConfig& cfg) const = 0;

  virtual TokenSequence generate(const TokenSequence& prefix, int max_tokens,
                                 const DecodeConfig& cfg) const = 0;

  /// Residual-stream vector at the last position. Adapters may decline.
  virtual std::vector<double> hidden_state(std::span<const TokenId> ids, int layer) const;
};

/// The built-in desk-scale oracle: toy transformer + toy tokenizer.
class ToyOracle : public ModelOracle {
 public:
  ToyOracle(ToyModel model, std::shared_ptr<const Tokenizer> tokenizer,
            std::shared_ptr<const MiniLanguage> language, std::string grammar_kind,
            std::string config_snapshot);

  int vocab_size() const override;
  int embedding_dim() const override;
  int context_window() const override;
  const std::vector<TokenId>& special_tokens() const override;
  std::span<const double> embedding(TokenId id) const override;

  TokenSequence encode(std::string_view text) const override;
  std::string decode(std::span<const TokenId> ids) const override;

  std::vector<std::vector<double>> step_distributions(std::span<const TokenId> ids,
                                                      std::size_t first_prefix_len,
                                                      std::size_t n_steps) const override;

  LossAndGrads loss_and_grads(const std::vector<TokenSequence>& task_variants,
                              const std::vector<std::size_t>& slot_positions,
                              const TokenSequence& target,
                              const LossConfig& cfg) const override;

  TokenSequence generate(const TokenSequence& prefix, int max_tokens,
                         const DecodeConfig& cfg) const override;

  std::vector<double> hidden_state(std::span<const TokenId> ids, int layer) const override;

  /// Loss of the aggregate objective with one embedding-input entry nudged by
  /// `delta` at (slot, dim). Drives the finite-difference gradient check.
  double loss_with_embedding_nudge(const std::vector<TokenSequence>& task_variants,
                                   const std::vector<std::size_t>& slot_positions,
                                   const TokenSequence& target, const LossConfig& cfg,
                                   std::size_t slot_index, int dim, double delta) const;

  const ToyModel& model() const { return model_; }
  const Tokenizer& tokenizer() const { return *tokenizer_; }
  std::shared_ptr<const MiniLanguage> language() const { return language_; }
  const std::string& grammar_kind() const { return grammar_kind_; }
  const std::string& config_snapshot() const { return config_snapshot_; }

 private:
  double variant_loss(std::span<const TokenId> variant, std::span<const TokenId> target,
                      const LossConfig& cfg, std::vector<double>* input_grads,
                      const std::vector<std::size_t>* nudge_slot_model_pos, int nudge_dim,
                      double nudge_delta) const;

  ToyModel model_;
  std::shared_ptr<const Tokenizer> tokenizer_;
  std::shared_ptr<const MiniLanguage> language_;
  std::string grammar_kind_;
  std::string config_snapshot_;
};

/// Builds the corpus, trains the transformer, and measures held-out
/// grammar-forced-token accuracy (recorded on the model). Deterministic for a
/// fixed (corpus_cfg, train_cfg, shape).
std::shared_ptr<ToyOracle> train_toy_model(const CorpusConfig& corpus_cfg,
                                           const TrainConfig& train_cfg,
                                           const ToyModelConfig& shape = {});

/// Provenance string a training run embeds in its checkpoint; two runs with
/// equal snapshots produce bit-identical models.
std::string toy_config_snapshot(const CorpusConfig& corpus_cfg, const TrainConfig& train_cfg,
                                const ToyModelConfig& shape);

/// Single-file versioned checkpoint with embedded config, seed, and vocab.
void save_checkpoint(const ToyOracle& oracle, const std::string& path);
std::shared_ptr<ToyOracle> load_checkpoint(const std::string& path);

/// Fraction of grammar-forced positions argmax-predicted correctly.
double forced_token_accuracy(const ToyModel& model, const Tokenizer& tokenizer,
                             const MiniLanguage& language,
                             const std::vector<std::string>& docs, int max_docs = 200);

}  // namespace csteer
