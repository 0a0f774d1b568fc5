#pragma once

#include <memory>
#include <string>
#include <vector>

#include "csteer/config.hpp"

namespace csteer {

struct CommandOutcome {
  std::vector<std::string> written;
  std::string perturbation_path;  // set by optimize
  double attack_asr = -1.0;       // set by evaluate
  double clean_asr = -1.0;        // set by evaluate when the baseline runs
};

/// Loads the configured checkpoint, or trains the toy oracle. A trained
/// oracle is checkpointed under the output directory and reused by later
/// commands running the same configuration; a path written this way is
/// appended to `written`.
std::shared_ptr<ToyOracle> resolve_oracle(const RunConfig& cfg,
                                          std::vector<std::string>* written = nullptr);

/// Trains and checkpoints the toy oracle under the output directory.
CommandOutcome cmd_train_toy(const RunConfig& cfg);

/// Runs the full perturbation optimization and persists the artifact, the
/// step trace, and a manifest.
CommandOutcome cmd_optimize(const RunConfig& cfg);

/// Injects a previously optimized perturbation, evaluates the case over the
/// dataset (plus the clean baseline when configured), and writes the metrics
/// table and raw trial log.
CommandOutcome cmd_evaluate(const RunConfig& cfg, const std::string& artifact_path);

/// Runs the removal sweep, the carrier-form comparison, and the hidden-state
/// feature export for a previously optimized perturbation.
CommandOutcome cmd_defend(const RunConfig& cfg, const std::string& artifact_path);

}  // namespace csteer
