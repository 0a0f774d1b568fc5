#include "csteer/tokenizer.hpp"

#include <cctype>

#include "csteer/errors.hpp"

namespace csteer {

namespace {

bool is_word_start(char c) { return c >= 'a' && c <= 'z'; }
bool is_word_char(char c) { return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9'); }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

}  // namespace

Tokenizer::Tokenizer(std::vector<TokenEntry> table) : table_(std::move(table)) {
  for (TokenId id = 0; id < static_cast<TokenId>(table_.size()); ++id) {
    const TokenEntry& e = table_[static_cast<std::size_t>(id)];
    if (e.kind == TokenKind::special) {
      specials_.push_back(id);
    } else {
      by_surface_.emplace(e.surface, id);
    }
    if (e.kind == TokenKind::newline) {
      newline_id_ = id;
    }
  }
}

std::optional<TokenId> Tokenizer::lookup(std::string_view surface) const {
  auto it = by_surface_.find(std::string(surface));
  if (it == by_surface_.end()) {
    return std::nullopt;
  }
  return it->second;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  std::size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (c == ' ' || c == '\t' || c == '\r') {
      ++i;
      continue;
    }
    std::string atom;
    if (c == '\n') {
      atom = "\n";
      ++i;
    } else if (is_word_start(c)) {
      std::size_t j = i + 1;
      while (j < text.size() && is_word_char(text[j])) {
        ++j;
      }
      atom = std::string(text.substr(i, j - i));
      i = j;
    } else if (is_digit(c)) {
      // Digits are single tokens; "12" lexes as [1][2].
      atom = std::string(1, c);
      ++i;
    } else {
      atom = std::string(1, c);
      ++i;
    }
    auto id = lookup(atom);
    if (!id) {
      throw Error(ErrorCode::unencodable_text,
                  "atom '" + atom + "' is outside the vocabulary");
    }
    ids.push_back(*id);
  }
  return ids;
}

bool Tokenizer::space_between(TokenId prev, TokenId next) const {
  const TokenEntry& a = entry(prev);
  const TokenEntry& b = entry(next);
  if (a.kind == TokenKind::newline || b.kind == TokenKind::newline) {
    return false;
  }
  if (a.kind == TokenKind::special || b.kind == TokenKind::special) {
    return false;
  }
  // Call style: identifier or digit glued to an opening paren, and paren
  // contents glued to the delimiters.
  if (b.surface == "(" && (a.kind == TokenKind::word || a.kind == TokenKind::digit)) {
    return false;
  }
  if (a.surface == "(") {
    return false;
  }
  if (b.surface == ")" || b.surface == ",") {
    return false;
  }
  return true;
}

std::string Tokenizer::render(std::span<const TokenId> ids) const {
  std::string out;
  bool have_prev = false;
  TokenId prev = 0;
  for (TokenId id : ids) {
    const TokenEntry& e = entry(id);
    if (e.kind == TokenKind::special) {
      continue;
    }
    if (have_prev && space_between(prev, id)) {
      out += ' ';
    }
    out += e.surface;
    prev = id;
    have_prev = true;
  }
  return out;
}

}  // namespace csteer
