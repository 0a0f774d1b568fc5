#include "csteer/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "csteer/errors.hpp"
#include "csteer/rng.hpp"

namespace csteer {

namespace {

std::vector<double> softmax_row(const double* logits, int n, double temperature = 1.0) {
  std::vector<double> p(static_cast<std::size_t>(n));
  const double inv_t = 1.0 / temperature;
  double mx = logits[0] * inv_t;
  for (int i = 1; i < n; ++i) {
    mx = std::max(mx, logits[i] * inv_t);
  }
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    p[static_cast<std::size_t>(i)] = std::exp(logits[i] * inv_t - mx);
    sum += p[static_cast<std::size_t>(i)];
  }
  const double inv = 1.0 / sum;
  for (int i = 0; i < n; ++i) {
    p[static_cast<std::size_t>(i)] *= inv;
  }
  return p;
}

std::vector<TokenId> with_bos(std::span<const TokenId> ids) {
  std::vector<TokenId> input;
  input.reserve(ids.size() + 1);
  input.push_back(Tokenizer::kBos);
  input.insert(input.end(), ids.begin(), ids.end());
  return input;
}

}  // namespace

TeacherForcedProbs ModelOracle::target_probs(const TokenSequence& prefix,
                                             const TokenSequence& target) const {
  if (static_cast<int>(prefix.size() + target.size()) + 1 > context_window()) {
    throw Error(ErrorCode::context_overflow, "prefix plus target exceeds the context window");
  }
  std::vector<TokenId> ids = prefix.ids;
  ids.insert(ids.end(), target.ids.begin(), target.ids.end());
  auto dists = step_distributions(ids, prefix.size(), target.size());
  TeacherForcedProbs out;
  out.probs.reserve(target.size());
  for (std::size_t j = 0; j < target.size(); ++j) {
    out.probs.push_back(dists[j][static_cast<std::size_t>(target.ids[j])]);
  }
  return out;
}

std::vector<double> ModelOracle::hidden_state(std::span<const TokenId>, int) const {
  throw Error(ErrorCode::probe_unsupported, "oracle does not expose hidden states");
}

ToyOracle::ToyOracle(ToyModel model, std::shared_ptr<const Tokenizer> tokenizer,
                     std::shared_ptr<const MiniLanguage> language, std::string grammar_kind,
                     std::string config_snapshot)
    : model_(std::move(model)),
      tokenizer_(std::move(tokenizer)),
      language_(std::move(language)),
      grammar_kind_(std::move(grammar_kind)),
      config_snapshot_(std::move(config_snapshot)) {}

int ToyOracle::vocab_size() const { return model_.config().vocab_size; }
int ToyOracle::embedding_dim() const { return model_.config().d_model; }
int ToyOracle::context_window() const { return model_.config().context; }
const std::vector<TokenId>& ToyOracle::special_tokens() const {
  return tokenizer_->special_tokens();
}
std::span<const double> ToyOracle::embedding(TokenId id) const {
  return model_.embedding_row(id);
}

TokenSequence ToyOracle::encode(std::string_view text) const {
  return tokenizer_->sequence(text);
}

std::string ToyOracle::decode(std::span<const TokenId> ids) const {
  return tokenizer_->render(ids);
}

std::vector<std::vector<double>> ToyOracle::step_distributions(
    std::span<const TokenId> ids, std::size_t first_prefix_len, std::size_t n_steps) const {
  if (first_prefix_len + n_steps > ids.size() + 1) {
    throw Error(ErrorCode::invalid_slot, "step range exceeds the provided sequence");
  }
  const std::size_t need = first_prefix_len + n_steps - 1;
  if (need + 1 > static_cast<std::size_t>(context_window())) {
    throw Error(ErrorCode::context_overflow, "sequence exceeds the context window");
  }
  auto input = with_bos(ids.subspan(0, need));
  std::vector<int> positions(n_steps);
  for (std::size_t j = 0; j < n_steps; ++j) {
    positions[j] = static_cast<int>(first_prefix_len + j);
  }
  ToyModel::Activations acts;
  model_.forward(input, acts, positions);

  const int v = vocab_size();
  std::vector<std::vector<double>> dists;
  dists.reserve(n_steps);
  for (std::size_t j = 0; j < n_steps; ++j) {
    dists.push_back(softmax_row(
        acts.logits.data() + static_cast<std::size_t>(positions[j]) * v, v));
  }
  return dists;
}

double ToyOracle::variant_loss(std::span<const TokenId> variant, std::span<const TokenId> target,
                               const LossConfig& cfg, std::vector<double>* input_grads,
                               const std::vector<std::size_t>* nudge_slots, int nudge_dim,
                               double nudge_delta) const {
  const std::size_t L = variant.size();
  const std::size_t k = target.size();
  if (1 + L + k > static_cast<std::size_t>(context_window()) + 1) {
    throw Error(ErrorCode::context_overflow, "task variant plus target exceeds the window");
  }

  std::vector<TokenId> input = with_bos(variant);
  input.insert(input.end(), target.begin(), target.end() - 1);

  std::vector<int> positions(k);
  for (std::size_t j = 0; j < k; ++j) {
    positions[j] = static_cast<int>(L + j);
  }

  ToyModel::EmbeddingNudge nudge;
  const ToyModel::EmbeddingNudge* nudge_ptr = nullptr;
  if (nudge_slots) {
    nudge.position = static_cast<int>(1 + (*nudge_slots)[0]);
    nudge.dim = nudge_dim;
    nudge.delta = nudge_delta;
    nudge_ptr = &nudge;
  }

  ToyModel::Activations acts;
  model_.forward(input, acts, positions, nudge_ptr);

  const int v = vocab_size();
  std::vector<std::vector<double>> dists;
  dists.reserve(k);
  for (std::size_t j = 0; j < k; ++j) {
    dists.push_back(softmax_row(
        acts.logits.data() + static_cast<std::size_t>(positions[j]) * v, v));
  }

  std::vector<std::vector<double>> dp;
  std::vector<TokenId> target_vec(target.begin(), target.end());
  const double loss = assemble_loss(dists, target_vec, cfg, input_grads ? &dp : nullptr);

  if (input_grads) {
    // chain d loss / d prob through the softmax at each scored step
    std::vector<std::pair<int, std::vector<double>>> dlogits;
    dlogits.reserve(k);
    for (std::size_t j = 0; j < k; ++j) {
      const auto& p = dists[j];
      const auto& dpj = dp[j];
      double dot = 0.0;
      for (int u = 0; u < v; ++u) {
        dot += dpj[static_cast<std::size_t>(u)] * p[static_cast<std::size_t>(u)];
      }
      std::vector<double> dz(static_cast<std::size_t>(v));
      for (int u = 0; u < v; ++u) {
        dz[static_cast<std::size_t>(u)] =
            p[static_cast<std::size_t>(u)] * (dpj[static_cast<std::size_t>(u)] - dot);
      }
      dlogits.emplace_back(positions[j], std::move(dz));
    }
    model_.backward(acts, dlogits, input_grads, nullptr);
  }
  return loss;
}

LossAndGrads ToyOracle::loss_and_grads(const std::vector<TokenSequence>& task_variants,
                                       const std::vector<std::size_t>& slot_positions,
                                       const TokenSequence& target,
                                       const LossConfig& cfg) const {
  const int d = embedding_dim();
  for (const auto& variant : task_variants) {
    for (std::size_t slot : slot_positions) {
      if (slot >= variant.size()) {
        throw Error(ErrorCode::invalid_slot, "slot position exceeds a variant length");
      }
    }
  }

  LossAndGrads out;
  out.grads.resize(slot_positions.size());
  for (std::size_t s = 0; s < slot_positions.size(); ++s) {
    out.grads[s].position = static_cast<int>(s);
    out.grads[s].grad.assign(static_cast<std::size_t>(d), 0.0);
  }

  const double inv_v = 1.0 / static_cast<double>(task_variants.size());
  double loss_sum = 0.0;
  for (const auto& variant : task_variants) {
    std::vector<double> input_grads;
    loss_sum += variant_loss(variant.ids, target.ids, cfg, &input_grads, nullptr, 0, 0.0);
    for (std::size_t s = 0; s < slot_positions.size(); ++s) {
      const std::size_t row = (1 + slot_positions[s]) * static_cast<std::size_t>(d);
      for (int i = 0; i < d; ++i) {
        out.grads[s].grad[static_cast<std::size_t>(i)] +=
            inv_v * input_grads[row + static_cast<std::size_t>(i)];
      }
    }
  }
  out.loss = loss_sum * inv_v;
  return out;
}

double ToyOracle::loss_with_embedding_nudge(const std::vector<TokenSequence>& task_variants,
                                            const std::vector<std::size_t>& slot_positions,
                                            const TokenSequence& target, const LossConfig& cfg,
                                            std::size_t slot_index, int dim,
                                            double delta) const {
  std::vector<std::size_t> nudge_slot = {slot_positions.at(slot_index)};
  double loss_sum = 0.0;
  for (const auto& variant : task_variants) {
    loss_sum += variant_loss(variant.ids, target.ids, cfg, nullptr, &nudge_slot, dim, delta);
  }
  return loss_sum / static_cast<double>(task_variants.size());
}

TokenSequence ToyOracle::generate(const TokenSequence& prefix, int max_tokens,
                                  const DecodeConfig& cfg) const {
  if (max_tokens < 1) {
    throw Error(ErrorCode::config_invalid, "max_tokens must be at least 1");
  }
  if (static_cast<int>(prefix.size()) + 1 >= context_window()) {
    throw Error(ErrorCode::context_overflow, "no room to generate after the prefix");
  }

  auto state = model_.make_state();
  std::vector<double> logits = model_.step(Tokenizer::kBos, state);
  for (TokenId id : prefix.ids) {
    logits = model_.step(id, state);
  }

  Rng rng(cfg.seed);
  std::vector<TokenId> generated;
  for (int i = 0; i < max_tokens && state.n < context_window(); ++i) {
    TokenId next = 0;
    if (cfg.mode == DecodeConfig::Mode::greedy) {
      for (int u = 1; u < vocab_size(); ++u) {
        if (logits[static_cast<std::size_t>(u)] > logits[static_cast<std::size_t>(next)]) {
          next = u;
        }
      }
    } else {
      auto p = softmax_row(logits.data(), vocab_size(), cfg.temperature);
      const double r = rng.real01();
      double acc = 0.0;
      next = vocab_size() - 1;
      for (int u = 0; u < vocab_size(); ++u) {
        acc += p[static_cast<std::size_t>(u)];
        if (r < acc) {
          next = u;
          break;
        }
      }
    }
    if (next == Tokenizer::kEos) {
      break;
    }
    generated.push_back(next);
    if (state.n >= context_window()) {
      break;
    }
    logits = model_.step(next, state);
  }
  return tokenizer_->sequence_from_ids(std::move(generated));
}

std::vector<double> ToyOracle::hidden_state(std::span<const TokenId> ids, int layer) const {
  auto input = with_bos(ids);
  if (static_cast<int>(input.size()) > context_window()) {
    throw Error(ErrorCode::context_overflow, "probe sequence exceeds the context window");
  }
  return model_.hidden_state(input, layer);
}

double forced_token_accuracy(const ToyModel& model, const Tokenizer& tokenizer,
                             const MiniLanguage& language,
                             const std::vector<std::string>& docs, int max_docs) {
  long correct = 0;
  long total = 0;
  const int n_docs = std::min<int>(max_docs, static_cast<int>(docs.size()));
  for (int di = 0; di < n_docs; ++di) {
    const auto doc_ids = tokenizer.encode(docs[static_cast<std::size_t>(di)]);
    if (doc_ids.empty() || static_cast<int>(doc_ids.size()) + 1 > model.config().context) {
      continue;
    }
    auto input = with_bos(doc_ids);
    ToyModel::Activations acts;
    model.forward(input, acts);
    const int v = model.config().vocab_size;
    for (std::size_t i = 0; i <= doc_ids.size(); ++i) {
      auto forced = language.forced_next(std::span<const TokenId>(doc_ids.data(), i));
      if (!forced) {
        continue;
      }
      const double* row = acts.logits.data() + i * static_cast<std::size_t>(v);
      int best = 0;
      for (int u = 1; u < v; ++u) {
        if (row[u] > row[best]) {
          best = u;
        }
      }
      ++total;
      if (best == *forced) {
        ++correct;
      }
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

std::string toy_config_snapshot(const CorpusConfig& corpus_cfg, const TrainConfig& train_cfg,
                                const ToyModelConfig& shape) {
  return "grammar=" + corpus_cfg.grammar +
         ";corpus_seed=" + std::to_string(corpus_cfg.seed) +
         ";n_docs=" + std::to_string(corpus_cfg.n_docs) +
         ";train_seed=" + std::to_string(train_cfg.seed) +
         ";steps=" + std::to_string(train_cfg.steps) +
         ";batch=" + std::to_string(train_cfg.batch_docs) +
         ";lr=" + std::to_string(train_cfg.lr) +
         ";d=" + std::to_string(shape.d_model) +
         ";layers=" + std::to_string(shape.n_layers) +
         ";heads=" + std::to_string(shape.n_heads) +
         ";context=" + std::to_string(shape.context) +
         ";init_seed=" + std::to_string(shape.init_seed);
}

std::shared_ptr<ToyOracle> train_toy_model(const CorpusConfig& corpus_cfg,
                                           const TrainConfig& train_cfg,
                                           const ToyModelConfig& shape) {
  Corpus corpus = build_corpus(corpus_cfg);
  ToyModelConfig model_cfg = shape;
  model_cfg.vocab_size = corpus.tokenizer->vocab_size();

  const std::size_t n_docs = corpus.docs.size();
  std::size_t holdout = static_cast<std::size_t>(
      std::max(1.0, train_cfg.holdout_fraction * static_cast<double>(n_docs)));
  holdout = std::min(holdout, n_docs / 2);
  const std::size_t n_train = n_docs - holdout;

  std::vector<std::vector<TokenId>> encoded;
  encoded.reserve(n_train);
  for (std::size_t i = 0; i < n_train; ++i) {
    std::vector<TokenId> ids = {Tokenizer::kBos};
    auto body = corpus.tokenizer->encode(corpus.docs[i]);
    ids.insert(ids.end(), body.begin(), body.end());
    ids.push_back(Tokenizer::kEos);
    if (static_cast<int>(ids.size()) > model_cfg.context + 1) {
      ids.resize(static_cast<std::size_t>(model_cfg.context) + 1);
    }
    encoded.push_back(std::move(ids));
  }

  ToyModel model = train_toy_model_impl(model_cfg, train_cfg, encoded);

  if (corpus.language) {
    std::vector<std::string> holdout_docs(corpus.docs.begin() + static_cast<long>(n_train),
                                          corpus.docs.end());
    model.heldout_forced_accuracy =
        forced_token_accuracy(model, *corpus.tokenizer, *corpus.language, holdout_docs);
  }

  return std::make_shared<ToyOracle>(std::move(model), corpus.tokenizer, corpus.language,
                                     corpus_cfg.grammar,
                                     toy_config_snapshot(corpus_cfg, train_cfg, model_cfg));
}

// ---------------------------------------------------------------------------
// checkpoint io (single versioned binary file)
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'C', 'S', 'O', 'R'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

void write_str(std::ofstream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  return value;
}

std::string read_str(std::ifstream& in) {
  const auto len = read_pod<std::uint32_t>(in);
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  return s;
}

}  // namespace

void save_checkpoint(const ToyOracle& oracle, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::io_failure, "cannot open checkpoint for writing: " + path);
  }
  out.write(kMagic, 4);
  write_pod<std::uint32_t>(out, kVersion);
  write_str(out, oracle.grammar_kind());
  write_str(out, oracle.config_snapshot());

  const auto& cfg = oracle.model().config();
  write_pod<std::int32_t>(out, cfg.vocab_size);
  write_pod<std::int32_t>(out, cfg.d_model);
  write_pod<std::int32_t>(out, cfg.n_layers);
  write_pod<std::int32_t>(out, cfg.n_heads);
  write_pod<std::int32_t>(out, cfg.context);
  write_pod<std::uint64_t>(out, cfg.init_seed);
  write_pod<double>(out, cfg.init_std);
  write_pod<double>(out, oracle.model().heldout_forced_accuracy);

  const Tokenizer& tok = oracle.tokenizer();
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tok.vocab_size()));
  for (TokenId id = 0; id < tok.vocab_size(); ++id) {
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(tok.entry(id).kind));
    write_str(out, tok.entry(id).surface);
  }

  const auto& params = oracle.model().params();
  write_pod<std::uint64_t>(out, params.size());
  out.write(reinterpret_cast<const char*>(params.data()),
            static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!out) {
    throw Error(ErrorCode::io_failure, "checkpoint write failed: " + path);
  }
}

std::shared_ptr<ToyOracle> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::artifact_missing, "checkpoint not found: " + path);
  }
  char magic[4];
  in.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(ErrorCode::io_failure, "not a checkpoint file: " + path);
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion) {
    throw Error(ErrorCode::io_failure, "unsupported checkpoint version");
  }
  const std::string grammar_kind = read_str(in);
  const std::string snapshot = read_str(in);

  ToyModelConfig cfg;
  cfg.vocab_size = read_pod<std::int32_t>(in);
  cfg.d_model = read_pod<std::int32_t>(in);
  cfg.n_layers = read_pod<std::int32_t>(in);
  cfg.n_heads = read_pod<std::int32_t>(in);
  cfg.context = read_pod<std::int32_t>(in);
  cfg.init_seed = read_pod<std::uint64_t>(in);
  cfg.init_std = read_pod<double>(in);
  const double accuracy = read_pod<double>(in);

  const auto vocab_count = read_pod<std::uint32_t>(in);
  std::vector<TokenEntry> table;
  table.reserve(vocab_count);
  for (std::uint32_t i = 0; i < vocab_count; ++i) {
    const auto kind = static_cast<TokenKind>(read_pod<std::uint8_t>(in));
    table.push_back({read_str(in), kind});
  }

  ToyModel model(cfg);
  const auto n_params = read_pod<std::uint64_t>(in);
  if (n_params != model.param_count()) {
    throw Error(ErrorCode::io_failure, "checkpoint parameter count mismatch");
  }
  in.read(reinterpret_cast<char*>(model.params().data()),
          static_cast<std::streamsize>(n_params * sizeof(double)));
  if (!in) {
    throw Error(ErrorCode::io_failure, "checkpoint truncated: " + path);
  }
  model.heldout_forced_accuracy = accuracy;

  std::shared_ptr<const Tokenizer> tokenizer;
  std::shared_ptr<const MiniLanguage> language;
  if (grammar_kind == "mini") {
    auto lang = std::make_shared<MiniLanguage>();
    const Tokenizer& lt = lang->tokenizer();
    bool matches = lt.vocab_size() == static_cast<int>(table.size());
    for (TokenId id = 0; matches && id < lt.vocab_size(); ++id) {
      matches = lt.entry(id).surface == table[static_cast<std::size_t>(id)].surface &&
                lt.entry(id).kind == table[static_cast<std::size_t>(id)].kind;
    }
    if (!matches) {
      throw Error(ErrorCode::io_failure, "checkpoint vocabulary does not match the mini grammar");
    }
    tokenizer = std::shared_ptr<const Tokenizer>(lang, &lang->tokenizer());
    language = std::move(lang);
  } else {
    tokenizer = std::make_shared<Tokenizer>(std::move(table));
  }

  return std::make_shared<ToyOracle>(std::move(model), std::move(tokenizer),
                                     std::move(language), grammar_kind, snapshot);
}

}  // namespace csteer
