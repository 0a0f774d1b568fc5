#include "csteer/injection.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "csteer/errors.hpp"
#include "csteer/grammar.hpp"

namespace csteer {

std::string carrier_form_name(CarrierFormKind kind) {
  switch (kind) {
    case CarrierFormKind::comment: return "comment";
    case CarrierFormKind::variable_assignment: return "variable_assignment";
    case CarrierFormKind::output_content: return "output_content";
  }
  return "comment";
}

CarrierFormKind parse_carrier_form(const std::string& name) {
  if (name == "comment") return CarrierFormKind::comment;
  if (name == "variable_assignment") return CarrierFormKind::variable_assignment;
  if (name == "output_content") return CarrierFormKind::output_content;
  throw Error(ErrorCode::config_invalid, "unknown carrier form '" + name + "'");
}

namespace {

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : text) {
    cur += c;
    if (c == '\n') {
      lines.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) {
    lines.push_back(cur);
  }
  return lines;
}

bool line_is_comment(const std::string& line, CaseLanguage lang) {
  std::size_t i = 0;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) {
    ++i;
  }
  const std::string marker = comment_marker(lang);
  return line.compare(i, marker.size(), marker) == 0;
}

void sanity_check_carrier(const std::string& carrier, CaseLanguage lang) {
  if (lang == CaseLanguage::mini) {
    MiniLanguage mini;
    if (!mini.parse_check(carrier)) {
      throw Error(ErrorCode::config_invalid, "carrier does not parse under the mini language");
    }
    return;
  }
  // real languages: per-line double-quote balance
  for (const auto& line : split_lines(carrier)) {
    if (std::count(line.begin(), line.end(), '"') % 2 != 0) {
      throw Error(ErrorCode::config_invalid, "carrier line has unbalanced quotes");
    }
  }
}

/// A variable name for the assignment form that does not already occur in the
/// carrier.
std::string fresh_variable(const std::string& carrier, CaseLanguage lang) {
  std::vector<std::string> pool;
  if (lang == CaseLanguage::mini) {
    MiniLanguage mini;
    pool = mini.noise_vars();
  } else {
    pool = {"aux_inj", "aux_inj2", "aux_inj3", "aux_inj4"};
  }
  for (const auto& name : pool) {
    if (carrier.find(name) == std::string::npos) {
      return name;
    }
  }
  throw Error(ErrorCode::anchor_not_found, "no unused variable name for the assignment form");
}

std::string wrap_line(const std::string& rendered, const CarrierForm& form,
                      const std::string& carrier) {
  switch (form.kind) {
    case CarrierFormKind::comment:
      return comment_marker(form.language) + " " + rendered + "\n";
    case CarrierFormKind::variable_assignment: {
      const std::string var = fresh_variable(carrier, form.language);
      switch (form.language) {
        case CaseLanguage::mini: return var + " = \" " + rendered + " \"\n";
        case CaseLanguage::python_like: return var + " = \"" + rendered + "\"\n";
        case CaseLanguage::c_cpp: return "const char* " + var + " = \"" + rendered + "\";\n";
        case CaseLanguage::java_like: return "String " + var + " = \"" + rendered + "\";\n";
      }
      break;
    }
    case CarrierFormKind::output_content:
      switch (form.language) {
        case CaseLanguage::mini: return "log(\" " + rendered + " \")\n";
        case CaseLanguage::python_like: return "print(\"" + rendered + "\")\n";
        case CaseLanguage::c_cpp: return "printf(\"" + rendered + "\");\n";
        case CaseLanguage::java_like: return "System.out.println(\"" + rendered + "\");\n";
      }
      break;
  }
  throw Error(ErrorCode::config_invalid, "unsupported carrier form");
}

}  // namespace

InjectedContext clean_context(const std::string& carrier) {
  InjectedContext ctx;
  ctx.carrier_text = carrier;
  ctx.span_begin = 0;
  ctx.span_end = 0;
  return ctx;
}

InjectedContext inject(const std::string& carrier, const Perturbation& p,
                       const CarrierForm& form, const AnchorRule& anchor,
                       const ModelOracle& oracle) {
  const auto run = p.run();
  if (run.empty()) {
    return clean_context(carrier);
  }
  sanity_check_carrier(carrier, form.language);

  const std::string rendered = oracle.decode(run);
  if (rendered.find('\n') != std::string::npos) {
    throw Error(ErrorCode::form_breaks_syntax,
                "perturbation text contains a newline and cannot stay on one line");
  }
  if (form.kind != CarrierFormKind::comment &&
      rendered.find('"') != std::string::npos) {
    throw Error(ErrorCode::form_breaks_syntax,
                "perturbation text would split the string literal");
  }
  if (carrier.find(rendered) != std::string::npos) {
    throw Error(ErrorCode::form_breaks_syntax,
                "perturbation text already occurs in the carrier");
  }

  auto lines = split_lines(carrier);

  // resolve the anchor to a line index
  std::size_t anchor_line = 0;
  if (anchor.kind == AnchorRule::Kind::first_comment) {
    bool found = false;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (line_is_comment(lines[i], form.language)) {
        anchor_line = i;
        found = true;
        break;
      }
    }
    if (!found) {
      throw Error(ErrorCode::anchor_not_found, "carrier has no comment line to anchor on");
    }
  } else {
    if (anchor.line < 0 || static_cast<std::size_t>(anchor.line) > lines.size()) {
      throw Error(ErrorCode::anchor_not_found, "anchor line index out of range");
    }
    anchor_line = static_cast<std::size_t>(anchor.line);
  }

  InjectedContext ctx;
  if (form.kind == CarrierFormKind::comment &&
      anchor.kind == AnchorRule::Kind::first_comment) {
    // append into the anchored comment line
    std::size_t offset = 0;
    for (std::size_t i = 0; i < anchor_line; ++i) {
      offset += lines[i].size();
    }
    const std::string& line = lines[anchor_line];
    const std::size_t line_end =
        line.ends_with("\n") ? line.size() - 1 : line.size();
    const std::string inserted = " " + rendered;
    ctx.span_begin = offset + line_end;
    ctx.span_end = ctx.span_begin + inserted.size();
    ctx.carrier_text = carrier.substr(0, ctx.span_begin) + inserted +
                       carrier.substr(ctx.span_begin);
  } else {
    // insert a whole new line at the anchor point (after an anchored comment)
    std::size_t insert_at_line =
        anchor.kind == AnchorRule::Kind::first_comment ? anchor_line + 1 : anchor_line;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < insert_at_line && i < lines.size(); ++i) {
      offset += lines[i].size();
    }
    const std::string inserted = wrap_line(rendered, form, carrier);
    ctx.span_begin = offset;
    ctx.span_end = offset + inserted.size();
    ctx.carrier_text = carrier.substr(0, offset) + inserted + carrier.substr(offset);
  }

  if (form.language == CaseLanguage::mini) {
    MiniLanguage mini;
    if (!mini.parse_check(ctx.carrier_text)) {
      throw Error(ErrorCode::form_breaks_syntax,
                  "injected carrier no longer parses under the mini language");
    }
  }
  return ctx;
}

PromptSet build_eval_prompts(const std::vector<DatasetItem>& items,
                             const InjectedContext& injected,
                             const MaliciousObjective& objective,
                             const ModelOracle& oracle, int reserve_tokens) {
  PromptSet out;
  std::string carrier = injected.carrier_text;
  if (!carrier.empty() && carrier.back() != '\n') {
    carrier += '\n';
  }
  for (const auto& item : items) {
    std::string user = item.prompt;
    while (!user.empty() && user.back() == '\n') {
      user.pop_back();
    }
    if (!user.empty()) {
      user += '\n';
    }
    const std::string text = carrier + user + objective.target_position_code;
    TokenSequence seq;
    try {
      seq = oracle.encode(text);
    } catch (const Error& e) {
      out.skipped.emplace_back(item.id, e.what());
      continue;
    }
    if (static_cast<int>(seq.size()) + 1 + reserve_tokens > oracle.context_window()) {
      out.skipped.emplace_back(item.id, "context window exceeded");
      continue;
    }
    out.prompts.push_back(std::move(seq));
    out.prompt_item_ids.push_back(item.id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// dataset io
// ---------------------------------------------------------------------------

std::vector<DatasetItem> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::artifact_missing, "dataset not found: " + path);
  }
  std::vector<DatasetItem> items;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::config_invalid,
                  "bad dataset record at line " + std::to_string(line_no) + ": " + e.what());
    }
    DatasetItem item;
    item.id = j.value("id", "item-" + std::to_string(line_no));
    item.prompt = j.value("prompt", "");
    item.canonical_solution = j.value("canonical_solution", "");
    item.language = j.value("language", "mini");
    items.push_back(std::move(item));
  }
  return items;
}

void save_dataset(const std::vector<DatasetItem>& items, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::io_failure, "cannot write dataset: " + path);
  }
  for (const auto& item : items) {
    nlohmann::json j = {{"id", item.id},
                        {"prompt", item.prompt},
                        {"canonical_solution", item.canonical_solution},
                        {"language", item.language}};
    out << j.dump() << "\n";
  }
}

}  // namespace csteer
