#include "csteer/task.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "csteer/errors.hpp"
#include "csteer/grammar.hpp"
#include "csteer/rng.hpp"

namespace csteer {

std::string case_language_name(CaseLanguage lang) {
  switch (lang) {
    case CaseLanguage::c_cpp: return "c_cpp";
    case CaseLanguage::python_like: return "python_like";
    case CaseLanguage::java_like: return "java_like";
    case CaseLanguage::mini: return "mini";
  }
  return "mini";
}

CaseLanguage parse_case_language(const std::string& name) {
  if (name == "c_cpp") return CaseLanguage::c_cpp;
  if (name == "python_like") return CaseLanguage::python_like;
  if (name == "java_like") return CaseLanguage::java_like;
  if (name == "mini") return CaseLanguage::mini;
  throw Error(ErrorCode::config_invalid, "unknown case language '" + name + "'");
}

// ---------------------------------------------------------------------------
// case template files
// ---------------------------------------------------------------------------

MaliciousObjective load_case_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::artifact_missing, "case file not found: " + path);
  }
  std::string line;
  if (!std::getline(in, line) || line.rfind("CSTEER-CASE v1", 0) != 0) {
    throw Error(ErrorCode::config_invalid, "not a v1 case file: " + path);
  }

  MaliciousObjective obj;
  auto read_block = [&in, &path]() {
    std::string marker;
    if (!std::getline(in, marker) || marker != "<<<") {
      throw Error(ErrorCode::config_invalid, "expected '<<<' block in " + path);
    }
    std::string body, row;
    while (std::getline(in, row)) {
      if (row == ">>>") {
        return body;
      }
      body += row;
      body += '\n';
    }
    throw Error(ErrorCode::config_invalid, "unterminated block in " + path);
  };

  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    if (line.rfind("ID: ", 0) == 0) {
      obj.identifier = line.substr(4);
    } else if (line.rfind("LANGUAGE: ", 0) == 0) {
      obj.language = parse_case_language(line.substr(10));
    } else if (line.rfind("DESCRIPTION: ", 0) == 0) {
      obj.description = line.substr(13);
    } else if (line == "CONDITIONAL:") {
      obj.conditional_code = read_block();
    } else if (line == "POSITION:") {
      std::string block = read_block();
      while (!block.empty() && block.back() == '\n') {
        block.pop_back();  // the position stays open for the target
      }
      obj.target_position_code = block;
    } else if (line == "TARGET:") {
      std::string block = read_block();
      while (!block.empty() && block.back() == '\n') {
        block.pop_back();
      }
      obj.target_code = block;
    } else {
      throw Error(ErrorCode::config_invalid, "unrecognized case line: " + line);
    }
  }
  if (obj.target_position_code.empty() || obj.target_code.empty()) {
    throw Error(ErrorCode::config_invalid,
                "case file must provide non-empty POSITION and TARGET: " + path);
  }
  return obj;
}

// ---------------------------------------------------------------------------
// continuity
// ---------------------------------------------------------------------------

ContinuityReport validate_continuity(const MaliciousObjective& objective,
                                     const ModelOracle& oracle) {
  ContinuityReport report;
  if (objective.target_code.empty()) {
    return report;  // vacuous
  }
  std::vector<TokenId> pos, tgt, joined;
  try {
    pos = oracle.encode(objective.target_position_code).ids;
    tgt = oracle.encode(objective.target_code).ids;
    joined = oracle.encode(objective.target_position_code + objective.target_code).ids;
  } catch (const Error& e) {
    report.stable = false;
    report.boundary_merges.push_back(std::string("encoding failed: ") + e.what());
    return report;
  }

  std::vector<TokenId> expected = pos;
  expected.insert(expected.end(), tgt.begin(), tgt.end());
  if (joined != expected) {
    report.stable = false;
    std::size_t i = 0;
    while (i < joined.size() && i < expected.size() && joined[i] == expected[i]) {
      ++i;
    }
    std::ostringstream msg;
    msg << "token split diverges at index " << i << ": joined text produces '"
        << (i < joined.size() ? oracle.decode({&joined[i], 1}) : std::string("<end>"))
        << "' where separate encoding produces '"
        << (i < expected.size() ? oracle.decode({&expected[i], 1}) : std::string("<end>"))
        << "'";
    report.boundary_merges.push_back(msg.str());
  }
  return report;
}

// ---------------------------------------------------------------------------
// noise generation
// ---------------------------------------------------------------------------

namespace {

// plain-text noise for the non-mini languages; identifier pools are reserved
// prefixes so noise can never collide with case code
std::string text_noise(Rng& rng, CaseLanguage lang, int min_words, int max_words) {
  static const std::vector<std::string> vars = {"aux_a", "aux_b", "aux_c", "aux_d",
                                                "aux_e", "aux_f", "aux_g", "aux_h"};
  static const std::vector<std::string> fns = {"helper_a", "helper_b", "helper_c",
                                               "helper_d", "helper_e"};
  static const std::vector<std::string> words = {"buffer", "cursor", "offset", "window",
                                                 "record", "shim",   "probe",  "filler"};
  auto digit = [&rng]() { return std::to_string(rng.below(90) + 10); };

  std::string text;
  int count = 0;
  while (count < min_words) {
    std::string line;
    const double roll = rng.real01();
    const std::string comment_mark = lang == CaseLanguage::python_like ? "#" : "//";
    if (roll < 0.4) {
      line = rng.pick(vars) + " = " + rng.pick(fns) + "(" + digit() + ", " + digit() + ")";
      if (lang == CaseLanguage::c_cpp) {
        line = "int " + line + ";";
      } else if (lang == CaseLanguage::java_like) {
        line = "int " + line + ";";
      }
    } else if (roll < 0.7) {
      line = comment_mark + " " + rng.pick(words) + " " + rng.pick(words);
    } else {
      line = rng.pick(vars) + " = \"" + rng.pick(words) + "\"";
      if (lang != CaseLanguage::python_like) {
        line += ";";
      }
    }
    int line_words = 1 + static_cast<int>(std::count(line.begin(), line.end(), ' '));
    if (count + line_words > max_words && count >= min_words) {
      break;
    }
    text += line + "\n";
    count += line_words;
  }
  return text;
}

}  // namespace

std::vector<TaskCode> build_tasks(const MaliciousObjective& objective,
                                  const NoiseProfile& noise,
                                  const ModelOracle* oracle) {
  if (objective.target_position_code.empty() || objective.target_code.empty()) {
    throw Error(ErrorCode::config_invalid,
                "objective requires non-empty position and target code");
  }
  if (noise.n_variants < 1) {
    throw Error(ErrorCode::config_invalid, "noise profile needs n_variants >= 1");
  }
  if (oracle) {
    auto report = validate_continuity(objective, *oracle);
    if (!report.stable) {
      throw Error(ErrorCode::tokenization_unstable,
                  "position/target boundary is not tokenization-stable: " +
                      (report.boundary_merges.empty() ? "" : report.boundary_merges[0]));
    }
  }

  std::string conditional = objective.conditional_code;
  if (!conditional.empty() && conditional.back() != '\n') {
    conditional += '\n';
  }

  const bool empty_noise = noise.grammar.empty() || noise.grammar == "none";
  MiniLanguage mini_lang;  // deterministic tables, cheap to construct

  std::vector<TaskCode> tasks;
  std::set<std::string> seen;
  Rng chain(noise.seed);
  for (int i = 0; i < noise.n_variants; ++i) {
    Rng variant_rng(chain.next_u64());
    std::string context;
    for (int attempt = 0; attempt < 64; ++attempt) {
      if (empty_noise) {
        context.clear();
      } else if (noise.grammar == "mini") {
        context = mini_lang.noise_statements(variant_rng, noise.min_tokens, noise.max_tokens);
      } else if (noise.grammar == "text") {
        context = text_noise(variant_rng, objective.language, noise.min_tokens,
                             noise.max_tokens);
      } else {
        throw Error(ErrorCode::config_invalid,
                    "unknown noise grammar '" + noise.grammar + "'");
      }
      if (empty_noise || !seen.count(context)) {
        break;
      }
    }
    if (!empty_noise && seen.count(context)) {
      throw Error(ErrorCode::config_invalid, "could not generate distinct noise variants");
    }
    seen.insert(context);

    TaskCode task;
    task.conditional = conditional;
    task.context = context;
    task.position = objective.target_position_code;
    if (oracle) {
      const auto ids = oracle->encode(task.rendered());
      if (static_cast<int>(ids.size()) + 1 > oracle->context_window()) {
        throw Error(ErrorCode::context_window_exceeded,
                    "task variant " + std::to_string(i) + " exceeds the context window");
      }
    }
    tasks.push_back(std::move(task));
  }
  return tasks;
}

}  // namespace csteer
