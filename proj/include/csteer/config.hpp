#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csteer/defense.hpp"
#include "csteer/grammar.hpp"
#include "csteer/injection.hpp"
#include "csteer/metrics.hpp"
#include "csteer/optimizer.hpp"

namespace csteer {

struct OracleSpec {
  std::string kind = "toy-train";  // "toy-train" | "checkpoint"
  std::string checkpoint_path;
  CorpusConfig corpus;
  TrainConfig train;
  ToyModelConfig shape;
};

struct InjectionConfig {
  CarrierFormKind form = CarrierFormKind::comment;
  AnchorRule anchor;
};

struct DefenseRunConfig {
  std::vector<double> fractions;  // empty selects the default 21-point grid
  int repeats = 3;
  std::uint64_t sweep_seed = 0;  // 0 derives from the global seed
  int probe_layer = 2;
  std::string probe_token = "cls";
  std::vector<CarrierFormKind> forms = {CarrierFormKind::comment,
                                        CarrierFormKind::variable_assignment,
                                        CarrierFormKind::output_content};
  int n_feature_snippets = 100;
};

/// One experiment, fully specified. All randomness flows from `seed` through
/// named sub-seeds unless a component seed is pinned explicitly in the file.
struct RunConfig {
  int version = 1;
  std::uint64_t seed = 100;
  std::string output_dir = "out";

  OracleSpec oracle;
  std::string case_template;
  std::string dataset;
  std::string carrier;

  OptimizerConfig optimizer;
  LossConfig loss;
  JudgeConfig judge;
  NoiseProfile noise;
  DecodeConfig decode;
  InjectionConfig injection;
  int samples_per_item = 1;
  int max_new_tokens = 8;
  double r1 = 0.2;
  double r2 = 0.8;
  bool clean_baseline = true;
  DefenseRunConfig defense;
  ExecPolicy policy = ExecPolicy::parallel;

  std::string raw_json;  // exact file contents, hashed into the manifest
};

/// Parses and validates; throws CONFIG_INVALID naming every offending field.
/// Relative paths resolve against `base_dir` (the config file's directory).
RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir);
RunConfig load_run_config(const std::string& path);

/// A ready-to-run configuration with the standard defaults pre-filled for the
/// toy pipeline (top-k 400, 10+2 tokens, 5 noise variants, thresholds 0.2/0.8).
std::string default_config_json();

}  // namespace csteer
