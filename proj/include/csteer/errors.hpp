#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace csteer {

enum class ErrorCode {
  unencodable_text,
  context_overflow,
  invalid_slot,
  training_diverged,
  context_window_exceeded,
  tokenization_unstable,
  anchor_not_found,
  form_breaks_syntax,
  empty_pool,
  empty_case_list,
  config_invalid,
  artifact_missing,
  probe_unsupported,
  io_failure,
};

constexpr std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::unencodable_text: return "UNENCODABLE_TEXT";
    case ErrorCode::context_overflow: return "CONTEXT_OVERFLOW";
    case ErrorCode::invalid_slot: return "INVALID_SLOT";
    case ErrorCode::training_diverged: return "TRAINING_DIVERGED";
    case ErrorCode::context_window_exceeded: return "CONTEXT_WINDOW_EXCEEDED";
    case ErrorCode::tokenization_unstable: return "TOKENIZATION_UNSTABLE";
    case ErrorCode::anchor_not_found: return "ANCHOR_NOT_FOUND";
    case ErrorCode::form_breaks_syntax: return "FORM_BREAKS_SYNTAX";
    case ErrorCode::empty_pool: return "EMPTY_POOL";
    case ErrorCode::empty_case_list: return "EMPTY_CASE_LIST";
    case ErrorCode::config_invalid: return "CONFIG_INVALID";
    case ErrorCode::artifact_missing: return "ARTIFACT_MISSING";
    case ErrorCode::probe_unsupported: return "PROBE_UNSUPPORTED";
    case ErrorCode::io_failure: return "IO_FAILURE";
  }
  return "UNKNOWN";
}

/// Exception carrying a stable error code alongside the human-readable message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace csteer
