#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csteer/rng.hpp"
#include "csteer/tokenizer.hpp"

namespace csteer {

struct CorpusConfig {
  std::string grammar = "mini";  // "mini" | "unigram3"
  int n_docs = 4000;
  std::uint64_t seed = 100;

  // mini-grammar shape
  int min_body_lines = 2;
  int max_body_lines = 9;
  double directive_prob = 0.70;
  double default_style_prob = 0.30;  // P(default style | directive present)
  double noise_pool_rate = 0.20;     // identifiers drawn from the aux pools

  // unigram3 shape
  std::vector<double> unigram_freqs = {0.5, 0.3, 0.2};
  int unigram_doc_len = 24;
};

/// The toy corpus language: single-line statements over a small fixed
/// vocabulary. Programs declare functions, carry comments, and end with a
/// call whose arguments are determined by a style word planted in an earlier
/// comment (the association the steering attack exploits). A second,
/// identifier-disjoint pool feeds task-irrelevant noise so noise text can
/// never contain the call line or a style word.
class MiniLanguage {
 public:
  MiniLanguage();

  const Tokenizer& tokenizer() const { return *tokenizer_; }

  /// One full program in canonical rendering (trailing newline included).
  std::string generate_doc(Rng& rng, const CorpusConfig& cfg) const;
  std::vector<std::string> generate_corpus(const CorpusConfig& cfg) const;

  /// Statements drawn exclusively from the noise pools, sized to a token
  /// budget. Used for context noise and evaluation prompts.
  std::string noise_statements(Rng& rng, int min_tokens, int max_tokens) const;

  /// Unique legal continuation when the grammar forces one (nullopt where the
  /// generator has a choice). `kEos` is reported after the final call line.
  std::optional<TokenId> forced_next(std::span<const TokenId> prefix) const;

  /// Line-structure validation: every line is a statement the grammar accepts.
  bool parse_check(std::string_view text) const;

  const std::vector<std::string>& styles() const { return styles_; }
  const std::string& partner_for(const std::string& style) const;
  const std::string& default_style() const { return styles_.front(); }

  const std::vector<std::string>& main_words() const { return words_main_; }
  const std::vector<std::string>& noise_words() const { return words_noise_; }
  const std::vector<std::string>& noise_vars() const { return vars_noise_; }

 private:
  struct LineShape;
  std::string body_line(Rng& rng, const CorpusConfig& cfg) const;
  std::string statement(Rng& rng, const std::vector<std::string>& vars,
                        const std::vector<std::string>& fns,
                        const std::vector<std::string>& words, double aux_rate,
                        Rng* aux) const;
  bool line_valid(std::span<const TokenId> line) const;

  std::unique_ptr<Tokenizer> tokenizer_;

  std::vector<std::string> fns_main_;
  std::vector<std::string> fns_noise_;
  std::vector<std::string> vars_main_;
  std::vector<std::string> vars_noise_;
  std::vector<std::string> words_main_;
  std::vector<std::string> words_noise_;
  std::vector<std::string> styles_;
  std::vector<std::string> partners_;

  // id-level lookups for forced_next / parse_check
  std::vector<bool> is_fn_;
  std::vector<bool> is_var_;
  std::vector<TokenId> style_partner_;  // style id -> partner id, else -1
  TokenId id_def_, id_out_, id_trg_, id_log_, id_hash_, id_quote_, id_eq_,
      id_lparen_, id_rparen_, id_comma_, id_plus_, id_newline_;
};

/// Corpus for either grammar; `language` is set for "mini".
struct Corpus {
  std::vector<std::string> docs;
  std::shared_ptr<const MiniLanguage> language;  // null for unigram3
  std::shared_ptr<const Tokenizer> tokenizer;
};

Corpus build_corpus(const CorpusConfig& cfg);

}  // namespace csteer
