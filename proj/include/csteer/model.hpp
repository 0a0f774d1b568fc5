#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "csteer/exec.hpp"
#include "csteer/token_sequence.hpp"

namespace csteer {

struct ToyModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int context = 256;
  std::uint64_t init_seed = 100;
  double init_std = 0.08;
};

struct TrainConfig {
  int steps = 400;
  int batch_docs = 8;
  double lr = 3e-3;
  int warmup_steps = 20;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-9;
  double grad_clip = 1.0;
  std::uint64_t seed = 100;
  double holdout_fraction = 0.05;
  ExecPolicy policy = ExecPolicy::parallel;
};

/// Decoder-only transformer, double precision throughout: learned token and
/// position embeddings, pre-RMSNorm blocks with causal multi-head attention
/// and a GELU MLP, untied output head. Small enough to train from scratch on
/// the toy corpus in under a minute; the smooth nonlinearity keeps central
/// finite differences well-behaved for gradient checks.
class ToyModel {
 public:
  struct Activations {
    int n = 0;
    std::vector<TokenId> ids;
    std::vector<double> x0;  // n x d, embedding + position
    struct Layer {
      std::vector<double> x_in;      // n x d
      std::vector<double> inv_rms1;  // n
      std::vector<double> a;         // n x d
      std::vector<double> q, k, v;   // n x d
      std::vector<double> probs;     // n x H x n (causal, zero padded)
      std::vector<double> attn_cat;  // n x d
      std::vector<double> x_mid;     // n x d
      std::vector<double> inv_rms2;  // n
      std::vector<double> b;         // n x d
      std::vector<double> h1;        // n x 4d (pre-GELU)
      std::vector<double> hg;        // n x 4d
    };
    std::vector<Layer> layers;
    std::vector<double> x_final;   // n x d
    std::vector<double> inv_rmsf;  // n
    std::vector<double> f;         // n x d
    std::vector<double> logits;    // n x V (only requested rows are filled)
  };

  /// Incremental decode cache (keys/values per layer).
  struct DecodeState {
    int n = 0;
    std::vector<std::vector<double>> k_cache;  // per layer, n x d
    std::vector<std::vector<double>> v_cache;
  };

  explicit ToyModel(const ToyModelConfig& cfg);

  const ToyModelConfig& config() const { return cfg_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }

  std::span<const double> embedding_row(TokenId id) const;

  /// One embedding-input entry shifted by delta; used by the
  /// finite-difference gradient probe.
  struct EmbeddingNudge {
    int position = 0;
    int dim = 0;
    double delta = 0.0;
  };

  /// Teacher-forced forward pass. `logit_positions` selects which logit rows
  /// to materialize; empty means all.
  void forward(std::span<const TokenId> ids, Activations& acts,
               std::span<const int> logit_positions = {},
               const EmbeddingNudge* nudge = nullptr) const;

  /// Reverse pass from sparse upstream logit gradients. `input_grads`
  /// (n x d) receives d loss / d embedding-input when non-null; `param_grads`
  /// (param_count) is accumulated into when non-null.
  void backward(const Activations& acts,
                const std::vector<std::pair<int, std::vector<double>>>& dlogits,
                std::vector<double>* input_grads,
                std::vector<double>* param_grads) const;

  DecodeState make_state() const;
  /// Appends one token and returns the next-token logits. Arithmetic matches
  /// the batch forward position for position.
  std::vector<double> step(TokenId id, DecodeState& state) const;

  /// Residual-stream vector at the last position: layer 0 is the embedding
  /// output, layer i the output of block i.
  std::vector<double> hidden_state(std::span<const TokenId> ids, int layer) const;

  /// Held-out grammar-forced-token accuracy, recorded by training (-1 before).
  double heldout_forced_accuracy = -1.0;

 private:
  friend ToyModel train_toy_model_impl(const ToyModelConfig&, const TrainConfig&,
                                       const std::vector<std::vector<TokenId>>&);
  struct Offsets {
    std::size_t wte, wpos, wout;
    struct Layer {
      std::size_t wq, wk, wv, wo, w1, w2;
    };
    std::vector<Layer> layers;
    std::size_t total;
  };

  void attention(int layer, int t, const double* q_t, const double* k_all,
                 const double* v_all, double* probs_row, double* cat_t) const;
  void block_forward(int layer, int n, const double* x_in, Activations::Layer& L) const;

  ToyModelConfig cfg_;
  Offsets off_;
  std::vector<double> params_;
};

/// Next-token cross-entropy training over pre-encoded documents (each already
/// wrapped in <bos>/<eos>). Deterministic for a fixed config regardless of
/// ExecPolicy. Throws TRAINING_DIVERGED on non-finite loss.
ToyModel train_toy_model_impl(const ToyModelConfig& model_cfg, const TrainConfig& train_cfg,
                              const std::vector<std::vector<TokenId>>& docs);

}  // namespace csteer
