#pragma once

#include <string>
#include <vector>

#include "csteer/optimizer.hpp"
#include "csteer/task.hpp"

namespace csteer {

enum class CarrierFormKind { comment, variable_assignment, output_content };

std::string carrier_form_name(CarrierFormKind kind);
CarrierFormKind parse_carrier_form(const std::string& name);

/// A non-functional embedding of the perturbation: appended to a comment, or
/// wrapped in an inert string literal (assignment / output call).
struct CarrierForm {
  CarrierFormKind kind = CarrierFormKind::comment;
  CaseLanguage language = CaseLanguage::mini;
};

struct AnchorRule {
  enum class Kind { first_comment, line_index };
  Kind kind = Kind::first_comment;
  int line = 0;  // for line_index
};

struct InjectedContext {
  std::string carrier_text;     // carrier with the perturbation embedded
  std::size_t span_begin = 0;   // character interval of the injection
  std::size_t span_end = 0;

  /// Carrier with the injection span deleted; byte-equal to the original.
  std::string without_injection() const {
    return carrier_text.substr(0, span_begin) + carrier_text.substr(span_end);
  }
};

struct DatasetItem {
  std::string id;
  std::string prompt;
  std::string canonical_solution;
  std::string language;
};

/// Line-delimited dataset records ({id, prompt, canonical_solution, language}).
std::vector<DatasetItem> load_dataset(const std::string& path);
void save_dataset(const std::vector<DatasetItem>& items, const std::string& path);

/// Embeds the rendered perturbation into the carrier under the given form.
/// Deleting the recorded span restores the carrier byte-exactly and the
/// perturbation text occurs exactly once.
InjectedContext inject(const std::string& carrier, const Perturbation& p,
                       const CarrierForm& form, const AnchorRule& anchor,
                       const ModelOracle& oracle);

/// The no-injection baseline context (empty span).
InjectedContext clean_context(const std::string& carrier);

struct PromptSet {
  std::vector<TokenSequence> prompts;       // carrier + item prompt + position code
  std::vector<std::string> prompt_item_ids;  // parallel to prompts
  std::vector<std::pair<std::string, std::string>> skipped;  // (item id, reason)
};

/// Victim-side completion inputs: injected carrier, then the item's context,
/// then the position trigger. Items that would overflow the window (leaving
/// `reserve_tokens` for generation) are skipped and reported.
PromptSet build_eval_prompts(const std::vector<DatasetItem>& items,
                             const InjectedContext& injected,
                             const MaliciousObjective& objective,
                             const ModelOracle& oracle, int reserve_tokens = 16);

}  // namespace csteer
