#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "csteer/token_sequence.hpp"

namespace csteer {

enum class TokenKind { special, punct, word, digit, newline };

struct TokenEntry {
  std::string surface;
  TokenKind kind;
};

/// Atom-level tokenizer for the mini language. Every token is a lexical atom
/// (identifier, digit, punctuation mark, or newline); atoms never merge across
/// the canonical spacing the renderer emits, so decode(encode(text)) is
/// byte-identical for generator output and re-encoding a rendered run always
/// reproduces the same ids.
class Tokenizer {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kPad = 2;

  explicit Tokenizer(std::vector<TokenEntry> table);

  int vocab_size() const { return static_cast<int>(table_.size()); }
  const TokenEntry& entry(TokenId id) const { return table_[static_cast<std::size_t>(id)]; }
  const std::string& surface(TokenId id) const { return entry(id).surface; }
  bool is_special(TokenId id) const { return entry(id).kind == TokenKind::special; }
  bool is_newline(TokenId id) const { return entry(id).kind == TokenKind::newline; }
  const std::vector<TokenId>& special_tokens() const { return specials_; }

  std::optional<TokenId> lookup(std::string_view surface) const;

  /// Lex text into token ids. Throws UNENCODABLE_TEXT on unknown atoms.
  std::vector<TokenId> encode(std::string_view text) const;

  /// Render ids back to text with the canonical spacing rules. Special tokens
  /// render as empty.
  std::string render(std::span<const TokenId> ids) const;

  TokenSequence sequence(std::string_view text) const {
    TokenSequence seq;
    seq.ids = encode(text);
    seq.surface = std::string(text);
    return seq;
  }

  TokenSequence sequence_from_ids(std::vector<TokenId> ids) const {
    TokenSequence seq;
    seq.surface = render(ids);
    seq.ids = std::move(ids);
    return seq;
  }

 private:
  bool space_between(TokenId prev, TokenId next) const;

  std::vector<TokenEntry> table_;
  std::unordered_map<std::string, TokenId> by_surface_;
  std::vector<TokenId> specials_;
  TokenId newline_id_ = -1;
};

}  // namespace csteer
