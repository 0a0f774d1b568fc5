#pragma once

#include <string>
#include <vector>

#include "csteer/metrics.hpp"

namespace csteer {

struct RemovalSweepConfig {
  std::vector<double> fractions;  // empty selects the default 21-point grid
  std::uint64_t seed = 100;
  int repeats = 3;
};

/// 0.00, 0.05, ..., 1.00.
std::vector<double> default_sweep_fractions();

struct SweepPoint {
  double fraction = 0.0;
  double mean_asr = 0.0;
  double stddev = 0.0;
};

/// Character-removal defense: for each fraction, deletes floor(f * span)
/// characters uniformly at random inside the injection span (seeded per
/// point and repeat), re-runs the case, and averages. At f=0 the context is
/// the injected one; at f=1 it is byte-equal to the clean carrier.
std::vector<SweepPoint> removal_sweep(const InjectedContext& injected,
                                      const MaliciousObjective& objective,
                                      const Perturbation& perturbation,
                                      const std::vector<DatasetItem>& items,
                                      const ModelOracle& oracle,
                                      const RemovalSweepConfig& cfg,
                                      const DecodeConfig& decode_cfg,
                                      const JudgeConfig& judge_cfg,
                                      const RunCaseOptions& options = {});

struct FormResult {
  CarrierForm form;
  CaseResult result;
  double degradation = 0.0;  // ASR(form) - ASR(comment)
  std::string error;         // set when the form could not be injected
};

/// Re-injects the identical perturbation under each requested form and
/// reports ASR plus degradation against the comment-form reference.
std::vector<FormResult> form_variant_eval(const MaliciousObjective& objective,
                                          const Perturbation& perturbation,
                                          const std::string& carrier,
                                          const std::vector<DatasetItem>& items,
                                          const ModelOracle& oracle,
                                          const std::vector<CarrierForm>& forms,
                                          const AnchorRule& anchor,
                                          const DecodeConfig& decode_cfg,
                                          const JudgeConfig& judge_cfg,
                                          const RunCaseOptions& options = {});

struct LabeledSnippet {
  std::string text;
  std::string label;  // "clean" or "injected"
};

struct FeatureExport {
  int probe_layer = 0;
  std::string probe_token;
  std::vector<std::string> labels;
  std::vector<std::vector<double>> rows;  // one vector of dim d per snippet
};

/// Appends the probe token to each snippet and records its residual-stream
/// vector at the probe layer. Labels are metadata only and never affect the
/// vectors. Oracles without hidden-state access raise PROBE_UNSUPPORTED.
FeatureExport export_features(const std::vector<LabeledSnippet>& snippets,
                              const ModelOracle& oracle, int probe_layer,
                              const std::string& probe_token);

void write_sweep_csv(const std::vector<SweepPoint>& curve, const std::string& path);
void write_features_csv(const FeatureExport& features, const std::string& path);
void write_forms_csv(const std::vector<FormResult>& forms, const std::string& path);

}  // namespace csteer
