#pragma once

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <string>

#include "csteer/grammar.hpp"
#include "csteer/oracle.hpp"
#include "csteer/errors.hpp"
#include "csteer/loss.hpp"

namespace csteer::test {

inline CorpusConfig desk_corpus_config() {
  CorpusConfig cfg;
  cfg.grammar = "mini";
  cfg.n_docs = 3000;
  cfg.seed = 100;
  return cfg;
}

inline TrainConfig desk_train_config() {
  TrainConfig cfg;
  cfg.steps = 1500;
  cfg.batch_docs = 8;
  cfg.seed = 100;
  return cfg;
}

/// The shared trained oracle most suites use. Trained once and cached on disk
/// under the working directory so repeated ctest runs skip the training cost;
/// the cache file embeds the config snapshot, so a config change retrains.
inline std::shared_ptr<ToyOracle> desk_oracle() {
  static std::shared_ptr<ToyOracle> cached = [] {
    const char* dir = std::getenv("CSTEER_TEST_CACHE_DIR");
    const std::filesystem::path path =
        std::filesystem::path(dir ? dir : ".") / "csteer_test_desk_model.bin";

    auto fresh_snapshot = [] {
      auto oracle = train_toy_model(desk_corpus_config(), desk_train_config());
      return oracle;
    };

    if (std::filesystem::exists(path)) {
      try {
        auto oracle = load_checkpoint(path.string());
        // cheap staleness check: retrain when the recorded config moved
        auto probe = desk_corpus_config();
        if (oracle->config_snapshot().find("corpus_seed=" + std::to_string(probe.seed)) !=
                std::string::npos &&
            oracle->config_snapshot().find("n_docs=" + std::to_string(probe.n_docs)) !=
                std::string::npos &&
            oracle->config_snapshot().find("steps=" +
                                           std::to_string(desk_train_config().steps)) !=
                std::string::npos) {
          return oracle;
        }
      } catch (...) {
        // fall through to retrain
      }
    }
    auto oracle = fresh_snapshot();
    const auto tmp = path.string() + ".tmp";
    save_checkpoint(*oracle, tmp);
    std::filesystem::rename(tmp, path);
    return oracle;
  }();
  return cached;
}

/// Oracle returning hand-set teacher-forced distributions, for arithmetic
/// tests of the loss path. Step j of any query returns preset_dists[j]
/// (uniform elsewhere); encoding delegates to the mini tokenizer.
class StubOracle : public ModelOracle {
 public:
  StubOracle() : language_(std::make_shared<MiniLanguage>()) {}

  /// probs: per step, a list of (token surface, probability) overrides. The
  /// overridden entries are exact; the leftover spreads over the rest.
  void set_step(std::size_t step,
                const std::vector<std::pair<std::string, double>>& probs) {
    if (preset_.size() <= step) {
      preset_.resize(step + 1);
    }
    auto& dist = preset_[step];
    dist.assign(static_cast<std::size_t>(vocab_size()), 0.0);
    std::vector<char> fixed(static_cast<std::size_t>(vocab_size()), 0);
    double mass = 0.0;
    for (const auto& [surface, p] : probs) {
      const auto id = static_cast<std::size_t>(*language_->tokenizer().lookup(surface));
      dist[id] = p;
      fixed[id] = 1;
      mass += p;
    }
    const double rest =
        (1.0 - mass) / static_cast<double>(vocab_size() - static_cast<int>(probs.size()));
    for (std::size_t i = 0; i < dist.size(); ++i) {
      if (!fixed[i]) {
        dist[i] = rest;
      }
    }
  }

  int vocab_size() const override { return language_->tokenizer().vocab_size(); }
  int embedding_dim() const override { return 4; }
  int context_window() const override { return 4096; }
  const std::vector<TokenId>& special_tokens() const override {
    return language_->tokenizer().special_tokens();
  }
  std::span<const double> embedding(TokenId) const override {
    static const std::vector<double> zeros(4, 0.0);
    return zeros;
  }
  TokenSequence encode(std::string_view text) const override {
    return language_->tokenizer().sequence(text);
  }
  std::string decode(std::span<const TokenId> ids) const override {
    return language_->tokenizer().render(ids);
  }
  std::vector<std::vector<double>> step_distributions(std::span<const TokenId>,
                                                      std::size_t,
                                                      std::size_t n_steps) const override {
    std::vector<std::vector<double>> out;
    for (std::size_t j = 0; j < n_steps; ++j) {
      if (j < preset_.size() && !preset_[j].empty()) {
        out.push_back(preset_[j]);
      } else {
        out.emplace_back(static_cast<std::size_t>(vocab_size()),
                         1.0 / static_cast<double>(vocab_size()));
      }
    }
    return out;
  }
  LossAndGrads loss_and_grads(const std::vector<TokenSequence>& variants,
                              const std::vector<std::size_t>& slots,
                              const TokenSequence& target,
                              const LossConfig& cfg) const override {
    LossAndGrads out;
    double sum = 0.0;
    for (const auto& v : variants) {
      auto dists = step_distributions(v.ids, v.size(), target.size());
      sum += assemble_loss(dists, target.ids, cfg);
    }
    out.loss = sum * (1.0 / static_cast<double>(variants.size()));
    for (std::size_t s = 0; s < slots.size(); ++s) {
      out.grads.push_back({static_cast<int>(s), std::vector<double>(4, 0.0)});
    }
    return out;
  }
  TokenSequence generate(const TokenSequence&, int, const DecodeConfig&) const override {
    throw Error(ErrorCode::probe_unsupported, "stub oracle does not generate");
  }

 private:
  std::shared_ptr<MiniLanguage> language_;
  std::vector<std::vector<double>> preset_;
};

/// Small random-weight oracle for numeric-only tests (no training).
inline std::shared_ptr<ToyOracle> random_oracle(std::uint64_t seed = 7) {
  auto lang = std::make_shared<MiniLanguage>();
  ToyModelConfig cfg;
  cfg.vocab_size = lang->tokenizer().vocab_size();
  cfg.d_model = 32;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.context = 256;
  cfg.init_seed = seed;
  ToyModel model(cfg);
  auto tok = std::shared_ptr<const Tokenizer>(lang, &lang->tokenizer());
  return std::make_shared<ToyOracle>(std::move(model), tok, lang, "mini", "random");
}

}  // namespace csteer::test
