#include "csteer/grammar.hpp"

#include <algorithm>
#include <cassert>

#include "csteer/errors.hpp"

namespace csteer {

namespace {

const char* kPunct[] = {"=", "(", ")", ",", "+", "#", "\""};

std::vector<std::string> names(std::initializer_list<const char*> list) {
  return {list.begin(), list.end()};
}

}  // namespace

MiniLanguage::MiniLanguage() {
  fns_main_ = names({"fa", "fb", "fc", "fd", "fe", "fg", "fh", "fk"});
  fns_noise_ = names({"qa", "qb", "qc", "qd", "qe", "qf"});
  vars_main_ = names({"va", "vb", "vc", "vd", "ve", "vf", "vg", "vh", "vi",
                      "vj", "vk", "vl", "vm", "vn"});
  vars_noise_ = names({"na", "nb", "nc", "nd", "ne", "nf", "ng", "nh", "ni", "nj"});
  // "st" and "d" lex back into the style word "std" when adjacent, giving the
  // continuity checker a real merge pair to flag
  words_main_ = names({"note", "keep", "fast", "slow", "tmp", "old", "init",
                       "done", "mark", "part", "real", "left", "st", "d"});
  words_noise_ = names({"pad", "pin", "mix", "gap", "fill", "turn", "rest", "wide"});
  // styles_[0] is the default completion absent a directive.
  styles_ = names({"std", "alt", "opt", "dbg", "raw", "hex", "bin", "oct",
                   "dec", "lit", "chk", "del"});
  partners_ = names({"ok", "two", "top", "row", "buf", "pal", "bit", "grp",
                     "pt", "str", "crc", "all"});

  std::vector<TokenEntry> table;
  table.push_back({"<bos>", TokenKind::special});
  table.push_back({"<eos>", TokenKind::special});
  table.push_back({"<pad>", TokenKind::special});
  table.push_back({"\n", TokenKind::newline});
  for (const char* p : kPunct) {
    table.push_back({p, TokenKind::punct});
  }
  table.push_back({"def", TokenKind::word});
  table.push_back({"cls", TokenKind::word});
  for (int d = 0; d < 10; ++d) {
    table.push_back({std::string(1, static_cast<char>('0' + d)), TokenKind::digit});
  }
  auto push_words = [&table](const std::vector<std::string>& ws) {
    for (const auto& w : ws) {
      table.push_back({w, TokenKind::word});
    }
  };
  push_words(fns_main_);
  table.push_back({"trg", TokenKind::word});
  table.push_back({"log", TokenKind::word});
  push_words(fns_noise_);
  table.push_back({"out", TokenKind::word});
  push_words(vars_main_);
  push_words(vars_noise_);
  push_words(words_main_);
  push_words(words_noise_);
  push_words(styles_);
  push_words(partners_);

  tokenizer_ = std::make_unique<Tokenizer>(std::move(table));
  const Tokenizer& tok = *tokenizer_;

  auto id_of = [&tok](const std::string& s) { return *tok.lookup(s); };
  id_def_ = id_of("def");
  id_out_ = id_of("out");
  id_trg_ = id_of("trg");
  id_log_ = id_of("log");
  id_hash_ = id_of("#");
  id_quote_ = id_of("\"");
  id_eq_ = id_of("=");
  id_lparen_ = id_of("(");
  id_rparen_ = id_of(")");
  id_comma_ = id_of(",");
  id_plus_ = id_of("+");
  id_newline_ = id_of("\n");

  is_fn_.assign(static_cast<std::size_t>(tok.vocab_size()), false);
  is_var_.assign(static_cast<std::size_t>(tok.vocab_size()), false);
  for (const auto& f : fns_main_) is_fn_[static_cast<std::size_t>(id_of(f))] = true;
  for (const auto& f : fns_noise_) is_fn_[static_cast<std::size_t>(id_of(f))] = true;
  is_fn_[static_cast<std::size_t>(id_trg_)] = true;
  is_fn_[static_cast<std::size_t>(id_log_)] = true;
  for (const auto& v : vars_main_) is_var_[static_cast<std::size_t>(id_of(v))] = true;
  for (const auto& v : vars_noise_) is_var_[static_cast<std::size_t>(id_of(v))] = true;

  style_partner_.assign(static_cast<std::size_t>(tok.vocab_size()), -1);
  for (std::size_t i = 0; i < styles_.size(); ++i) {
    style_partner_[static_cast<std::size_t>(id_of(styles_[i]))] = id_of(partners_[i]);
  }
}

const std::string& MiniLanguage::partner_for(const std::string& style) const {
  for (std::size_t i = 0; i < styles_.size(); ++i) {
    if (styles_[i] == style) {
      return partners_[i];
    }
  }
  throw Error(ErrorCode::config_invalid, "unknown style word '" + style + "'");
}

std::string MiniLanguage::statement(Rng& rng, const std::vector<std::string>& vars,
                                    const std::vector<std::string>& fns,
                                    const std::vector<std::string>& words,
                                    double aux_rate, Rng* aux) const {
  auto var = [&]() -> const std::string& {
    if (aux && rng.real01() < aux_rate) return aux->pick(vars_noise_);
    return rng.pick(vars);
  };
  auto fn = [&]() -> const std::string& {
    if (aux && rng.real01() < aux_rate) return aux->pick(fns_noise_);
    return rng.pick(fns);
  };
  auto word = [&]() -> const std::string& {
    if (aux && rng.real01() < aux_rate) return aux->pick(words_noise_);
    return rng.pick(words);
  };
  auto digit = [&rng]() { return std::string(1, static_cast<char>('0' + rng.below(10))); };
  auto arg = [&]() { return rng.real01() < 0.5 ? var() : digit(); };

  double roll = rng.real01();
  if (roll < 0.28) {
    std::string s = var() + " = " + fn() + "(" + arg();
    if (rng.real01() < 0.5) {
      s += ", " + arg();
    }
    return s + ")\n";
  }
  if (roll < 0.43) {
    return var() + " = " + var() + " + " + digit() + "\n";
  }
  if (roll < 0.53) {
    return var() + " = " + digit() + "\n";
  }
  if (roll < 0.73) {
    std::string s = "#";
    int n = 1 + static_cast<int>(rng.below(4));
    for (int i = 0; i < n; ++i) {
      s += " " + word();
    }
    return s + "\n";
  }
  if (roll < 0.88) {
    std::string s = var() + " = \"";
    int n = 1 + static_cast<int>(rng.below(3));
    for (int i = 0; i < n; ++i) {
      s += " " + word();
    }
    return s + " \"\n";
  }
  std::string s = "log(\"";
  int n = 1 + static_cast<int>(rng.below(2));
  for (int i = 0; i < n; ++i) {
    s += " " + word();
  }
  return s + " \")\n";
}

std::string MiniLanguage::generate_doc(Rng& rng, const CorpusConfig& cfg) const {
  Rng aux(rng.next_u64());
  std::string doc = "def trg(" + rng.pick(vars_main_) + ")\n";
  if (rng.real01() < 0.5) {
    doc += "def " + rng.pick(fns_main_) + "(" + rng.pick(vars_main_) + ")\n";
  }

  int n_body = cfg.min_body_lines +
               static_cast<int>(rng.below(
                   static_cast<std::uint64_t>(cfg.max_body_lines - cfg.min_body_lines + 1)));
  bool has_directive = rng.real01() < cfg.directive_prob;
  std::string style = default_style();
  int directive_at = 0;
  if (has_directive) {
    if (rng.real01() >= cfg.default_style_prob) {
      style = styles_[1 + rng.below(styles_.size() - 1)];
    }
    directive_at = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_body + 1)));
  }

  for (int i = 0; i <= n_body; ++i) {
    if (has_directive && i == directive_at) {
      std::string line = "#";
      int pre = static_cast<int>(rng.below(3));
      int post = static_cast<int>(rng.below(3));
      for (int w = 0; w < pre; ++w) line += " " + rng.pick(words_main_);
      line += " " + style;
      for (int w = 0; w < post; ++w) line += " " + rng.pick(words_main_);
      doc += line + "\n";
    }
    if (i < n_body) {
      doc += statement(rng, vars_main_, fns_main_, words_main_, cfg.noise_pool_rate, &aux);
    }
  }

  doc += "out = trg(" + style + " " + partner_for(style) + ")\n";
  return doc;
}

std::vector<std::string> MiniLanguage::generate_corpus(const CorpusConfig& cfg) const {
  Rng rng(cfg.seed);
  std::vector<std::string> docs;
  docs.reserve(static_cast<std::size_t>(cfg.n_docs));
  for (int i = 0; i < cfg.n_docs; ++i) {
    docs.push_back(generate_doc(rng, cfg));
  }
  return docs;
}

std::string MiniLanguage::noise_statements(Rng& rng, int min_tokens, int max_tokens) const {
  std::string text;
  int total = 0;
  while (total < min_tokens) {
    std::string line = statement(rng, vars_noise_, fns_noise_, words_noise_, 0.0, nullptr);
    int len = static_cast<int>(tokenizer_->encode(line).size());
    if (total + len > max_tokens) {
      // minimal filler keeps the budget exact enough
      line = "# " + rng.pick(words_noise_) + "\n";
      len = 3;
      if (total + len > max_tokens) {
        break;
      }
    }
    text += line;
    total += len;
  }
  return text;
}

std::optional<TokenId> MiniLanguage::forced_next(std::span<const TokenId> prefix) const {
  if (prefix.empty()) {
    return id_def_;  // every program opens with the trg declaration
  }

  // current (possibly empty) line
  std::size_t line_start = 0;
  for (std::size_t i = prefix.size(); i-- > 0;) {
    if (prefix[i] == id_newline_) {
      line_start = i + 1;
      break;
    }
  }
  std::span<const TokenId> line = prefix.subspan(line_start);

  if (line.empty()) {
    // just closed a line; after the final call line the program ends
    std::size_t prev_start = 0;
    for (std::size_t i = line_start - 1; i-- > 0;) {
      if (prefix[i] == id_newline_) {
        prev_start = i + 1;
        break;
      }
    }
    if (prev_start < line_start - 1 && prefix[prev_start] == id_out_) {
      return Tokenizer::kEos;
    }
    return std::nullopt;
  }

  auto is_fn = [this](TokenId t) { return is_fn_[static_cast<std::size_t>(t)]; };
  auto is_var = [this](TokenId t) { return is_var_[static_cast<std::size_t>(t)]; };
  const TokenId head = line[0];

  if (head == id_hash_) {
    return std::nullopt;
  }
  if (head == id_def_) {
    bool first_line = line_start == 0;
    switch (line.size()) {
      case 1: return first_line ? std::optional<TokenId>(id_trg_) : std::nullopt;
      case 2: return id_lparen_;
      case 3: return std::nullopt;
      case 4: return id_rparen_;
      case 5: return id_newline_;
      default: return std::nullopt;
    }
  }
  if (head == id_out_) {
    switch (line.size()) {
      case 1: return id_eq_;
      case 2: return id_trg_;
      case 3: return id_lparen_;
      case 4: return std::nullopt;  // style choice
      case 5: {
        TokenId partner = style_partner_[static_cast<std::size_t>(line[4])];
        return partner >= 0 ? std::optional<TokenId>(partner) : std::nullopt;
      }
      case 6: return id_rparen_;
      case 7: return id_newline_;
      default: return std::nullopt;
    }
  }
  if (head == id_log_) {
    if (line.size() == 1) return id_lparen_;
    if (line.size() == 2) return id_quote_;
    if (line.size() >= 4 && line.back() == id_quote_) return id_rparen_;
    if (line.size() >= 5 && line.back() == id_rparen_) return id_newline_;
    return std::nullopt;
  }
  if (is_var(head)) {
    if (line.size() == 1) return id_eq_;
    if (line.size() == 2) return std::nullopt;
    const TokenId rhs = line[2];
    if (is_fn(rhs)) {
      if (line.size() == 3) return id_lparen_;
      if (line.size() == 7) return id_rparen_;  // v = f(a, b
      if (line.back() == id_rparen_) return id_newline_;
      return std::nullopt;
    }
    if (is_var(rhs)) {
      if (line.size() == 3) return id_plus_;
      if (line.size() == 5) return id_newline_;
      return std::nullopt;
    }
    if (rhs == id_quote_) {
      if (line.size() >= 4 && line.back() == id_quote_) return id_newline_;
      return std::nullopt;
    }
    if (line.size() == 3) return id_newline_;  // v = d
    return std::nullopt;
  }
  return std::nullopt;
}

bool MiniLanguage::line_valid(std::span<const TokenId> line) const {
  if (line.empty()) {
    return true;
  }
  auto is_fn = [this](TokenId t) { return is_fn_[static_cast<std::size_t>(t)]; };
  auto is_var = [this](TokenId t) { return is_var_[static_cast<std::size_t>(t)]; };
  auto is_arg = [&](TokenId t) {
    return is_var(t) || tokenizer_->entry(t).kind == TokenKind::digit;
  };
  const TokenId head = line[0];

  if (head == id_hash_) {
    return true;  // comments accept anything up to the newline
  }
  if (head == id_def_) {
    return line.size() == 5 && is_fn(line[1]) && line[2] == id_lparen_ &&
           is_var(line[3]) && line[4] == id_rparen_;
  }
  if (head == id_out_) {
    return line.size() >= 5 && line[1] == id_eq_ && line[2] == id_trg_ &&
           line[3] == id_lparen_ && line.back() == id_rparen_;
  }
  if (head == id_log_) {
    if (line.size() < 5 || line[1] != id_lparen_ || line[2] != id_quote_ ||
        line[line.size() - 2] != id_quote_ || line.back() != id_rparen_) {
      return false;
    }
    for (std::size_t i = 3; i + 2 < line.size(); ++i) {
      if (line[i] == id_quote_) return false;
    }
    return true;
  }
  if (is_var(head)) {
    if (line.size() < 3 || line[1] != id_eq_) {
      return false;
    }
    const TokenId rhs = line[2];
    if (is_fn(rhs)) {
      if (line.size() == 6) {
        return line[3] == id_lparen_ && is_arg(line[4]) && line[5] == id_rparen_;
      }
      if (line.size() == 8) {
        return line[3] == id_lparen_ && is_arg(line[4]) && line[5] == id_comma_ &&
               is_arg(line[6]) && line[7] == id_rparen_;
      }
      return false;
    }
    if (is_var(rhs)) {
      return line.size() == 5 && line[3] == id_plus_ &&
             tokenizer_->entry(line[4]).kind == TokenKind::digit;
    }
    if (rhs == id_quote_) {
      if (line.size() < 4 || line.back() != id_quote_) return false;
      for (std::size_t i = 3; i + 1 < line.size(); ++i) {
        if (line[i] == id_quote_) return false;
      }
      return true;
    }
    return line.size() == 3 && tokenizer_->entry(rhs).kind == TokenKind::digit;
  }
  return false;
}

bool MiniLanguage::parse_check(std::string_view text) const {
  std::vector<TokenId> ids;
  try {
    ids = tokenizer_->encode(text);
  } catch (const Error&) {
    return false;
  }
  std::size_t start = 0;
  for (std::size_t i = 0; i <= ids.size(); ++i) {
    if (i == ids.size() || ids[i] == id_newline_) {
      if (!line_valid(std::span<const TokenId>(ids).subspan(start, i - start))) {
        return false;
      }
      start = i + 1;
    }
  }
  return true;
}

Corpus build_corpus(const CorpusConfig& cfg) {
  Corpus corpus;
  if (cfg.grammar == "mini") {
    auto lang = std::make_shared<MiniLanguage>();
    corpus.docs = lang->generate_corpus(cfg);
    corpus.tokenizer = std::shared_ptr<const Tokenizer>(lang, &lang->tokenizer());
    corpus.language = std::move(lang);
    return corpus;
  }
  if (cfg.grammar == "unigram3") {
    std::vector<TokenEntry> table = {{"<bos>", TokenKind::special},
                                     {"<eos>", TokenKind::special},
                                     {"<pad>", TokenKind::special},
                                     {"\n", TokenKind::newline},
                                     {"a", TokenKind::word},
                                     {"b", TokenKind::word},
                                     {"c", TokenKind::word}};
    corpus.tokenizer = std::make_shared<Tokenizer>(std::move(table));
    Rng rng(cfg.seed);
    double total = 0.0;
    for (double f : cfg.unigram_freqs) total += f;
    for (int d = 0; d < cfg.n_docs; ++d) {
      std::string doc;
      for (int i = 0; i < cfg.unigram_doc_len; ++i) {
        double r = rng.real01() * total;
        std::size_t pick = 0;
        double acc = 0.0;
        for (std::size_t k = 0; k < cfg.unigram_freqs.size(); ++k) {
          acc += cfg.unigram_freqs[k];
          if (r < acc) {
            pick = k;
            break;
          }
        }
        if (!doc.empty()) doc += " ";
        doc += static_cast<char>('a' + pick);
      }
      corpus.docs.push_back(doc);
    }
    return corpus;
  }
  throw Error(ErrorCode::config_invalid, "unknown corpus grammar '" + cfg.grammar + "'");
}

}  // namespace csteer
