#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csteer/oracle.hpp"

namespace csteer {

enum class CaseLanguage { c_cpp, python_like, java_like, mini };

std::string case_language_name(CaseLanguage lang);
CaseLanguage parse_case_language(const std::string& name);

/// The attacker tuple: where the malicious code should appear and what it is,
/// plus the declarations that make it runnable.
struct MaliciousObjective {
  std::string identifier;
  CaseLanguage language = CaseLanguage::mini;
  std::string target_position_code;  // the position the model must reproduce
  std::string target_code;           // the continuation the attack wants
  std::string conditional_code;      // required declarations, first in the task
  std::string description;
};

/// One constructed optimization input: conditional, then noise context, then
/// the position segment (always last, continuous with the target).
struct TaskCode {
  std::string conditional;
  std::string context;
  std::string position;

  std::string rendered() const { return conditional + context + position; }
};

struct NoiseProfile {
  std::uint64_t seed = 100;
  int n_variants = 5;
  int min_tokens = 20;
  int max_tokens = 80;
  std::string grammar = "mini";  // "mini", "text", or "none" for empty context
};

struct ContinuityReport {
  bool stable = true;
  std::vector<std::string> boundary_merges;
};

/// Case template file io (versioned text format with CONDITIONAL / POSITION /
/// TARGET / LANGUAGE / DESCRIPTION sections).
MaliciousObjective load_case_file(const std::string& path);

/// Confirms encode(position + target) splits exactly as encode(position)
/// followed by encode(target). Report-only; encoding failures are reported as
/// instability, never thrown.
ContinuityReport validate_continuity(const MaliciousObjective& objective,
                                     const ModelOracle& oracle);

/// Expands the objective into n_variants task codes sharing conditional and
/// position and differing only in context noise. When an oracle is supplied
/// the tokenization-stability precondition and the context window are
/// enforced; without one the construction is text-only.
std::vector<TaskCode> build_tasks(const MaliciousObjective& objective,
                                  const NoiseProfile& noise,
                                  const ModelOracle* oracle = nullptr);

}  // namespace csteer
