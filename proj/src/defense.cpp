#include "csteer/defense.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "csteer/errors.hpp"
#include "csteer/rng.hpp"

namespace csteer {

std::vector<double> default_sweep_fractions() {
  std::vector<double> fractions;
  for (int i = 0; i <= 20; ++i) {
    fractions.push_back(static_cast<double>(i) * 0.05);
  }
  return fractions;
}

namespace {

/// Injected context with `n_remove` characters deleted uniformly at random
/// inside the span.
InjectedContext remove_chars(const InjectedContext& injected, std::size_t n_remove,
                             Rng& rng) {
  const std::size_t span_len = injected.span_end - injected.span_begin;
  std::vector<std::size_t> indices(span_len);
  for (std::size_t i = 0; i < span_len; ++i) {
    indices[i] = injected.span_begin + i;
  }
  rng.shuffle(indices);
  indices.resize(n_remove);
  std::sort(indices.begin(), indices.end(), std::greater<>());

  InjectedContext out;
  out.carrier_text = injected.carrier_text;
  for (std::size_t idx : indices) {
    out.carrier_text.erase(idx, 1);
  }
  out.span_begin = injected.span_begin;
  out.span_end = injected.span_end - n_remove;
  return out;
}

}  // namespace

std::vector<SweepPoint> removal_sweep(const InjectedContext& injected,
                                      const MaliciousObjective& objective,
                                      const Perturbation& perturbation,
                                      const std::vector<DatasetItem>& items,
                                      const ModelOracle& oracle,
                                      const RemovalSweepConfig& cfg,
                                      const DecodeConfig& decode_cfg,
                                      const JudgeConfig& judge_cfg,
                                      const RunCaseOptions& options) {
  if (cfg.repeats < 1) {
    throw Error(ErrorCode::config_invalid, "sweep repeats must be at least 1");
  }
  std::vector<double> fractions =
      cfg.fractions.empty() ? default_sweep_fractions() : cfg.fractions;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (fractions[i] < 0.0 || fractions[i] > 1.0 ||
        (i > 0 && fractions[i] <= fractions[i - 1])) {
      throw Error(ErrorCode::config_invalid,
                  "sweep fractions must be strictly increasing within [0, 1]");
    }
  }

  const std::size_t span_len = injected.span_end - injected.span_begin;
  std::vector<SweepPoint> curve;
  curve.reserve(fractions.size());
  for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
    const double f = fractions[fi];
    const auto n_remove =
        static_cast<std::size_t>(std::floor(f * static_cast<double>(span_len)));

    double sum = 0.0, sum_sq = 0.0;
    for (int rep = 0; rep < cfg.repeats; ++rep) {
      Rng rng(derive_seed(cfg.seed,
                          "sweep." + std::to_string(fi) + "." + std::to_string(rep)));
      const auto mutated = remove_chars(injected, n_remove, rng);
      const auto result = run_case(objective, perturbation, items, mutated, oracle,
                                   decode_cfg, judge_cfg, options);
      sum += result.asr;
      sum_sq += result.asr * result.asr;
    }
    const double mean = sum / cfg.repeats;
    const double var = std::max(0.0, sum_sq / cfg.repeats - mean * mean);
    curve.push_back({f, mean, std::sqrt(var)});
  }
  return curve;
}

std::vector<FormResult> form_variant_eval(const MaliciousObjective& objective,
                                          const Perturbation& perturbation,
                                          const std::string& carrier,
                                          const std::vector<DatasetItem>& items,
                                          const ModelOracle& oracle,
                                          const std::vector<CarrierForm>& forms,
                                          const AnchorRule& anchor,
                                          const DecodeConfig& decode_cfg,
                                          const JudgeConfig& judge_cfg,
                                          const RunCaseOptions& options) {
  if (forms.empty()) {
    throw Error(ErrorCode::config_invalid, "form evaluation needs at least one form");
  }

  CarrierForm comment_form;
  comment_form.kind = CarrierFormKind::comment;
  comment_form.language = objective.language;
  const auto reference_ctx = inject(carrier, perturbation, comment_form, anchor, oracle);
  const auto reference = run_case(objective, perturbation, items, reference_ctx, oracle,
                                  decode_cfg, judge_cfg, options);

  std::vector<FormResult> out;
  for (const auto& form : forms) {
    FormResult fr;
    fr.form = form;
    if (form.kind == CarrierFormKind::comment) {
      fr.result = reference;
      fr.degradation = 0.0;
      out.push_back(std::move(fr));
      continue;
    }
    try {
      const auto ctx = inject(carrier, perturbation, form, anchor, oracle);
      fr.result = run_case(objective, perturbation, items, ctx, oracle, decode_cfg,
                           judge_cfg, options);
      fr.degradation = fr.result.asr - reference.asr;
    } catch (const Error& e) {
      fr.error = e.what();
    }
    out.push_back(std::move(fr));
  }
  return out;
}

FeatureExport export_features(const std::vector<LabeledSnippet>& snippets,
                              const ModelOracle& oracle, int probe_layer,
                              const std::string& probe_token) {
  FeatureExport features;
  features.probe_layer = probe_layer;
  features.probe_token = probe_token;
  const auto probe_ids = oracle.encode(probe_token).ids;
  if (probe_ids.empty()) {
    throw Error(ErrorCode::config_invalid, "probe token encodes to nothing");
  }

  for (const auto& snippet : snippets) {
    auto ids = oracle.encode(snippet.text).ids;
    ids.insert(ids.end(), probe_ids.begin(), probe_ids.end());
    auto row = oracle.hidden_state(ids, probe_layer);
    for (double v : row) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::probe_unsupported, "non-finite feature vector");
      }
    }
    features.labels.push_back(snippet.label);
    features.rows.push_back(std::move(row));
  }
  return features;
}

void write_sweep_csv(const std::vector<SweepPoint>& curve, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::io_failure, "cannot write sweep curve: " + path);
  }
  out.precision(17);
  out << "fraction,mean_asr,stddev\n";
  for (const auto& p : curve) {
    out << p.fraction << "," << p.mean_asr << "," << p.stddev << "\n";
  }
}

void write_features_csv(const FeatureExport& features, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::io_failure, "cannot write feature export: " + path);
  }
  out.precision(17);
  out << "label";
  const std::size_t dim = features.rows.empty() ? 0 : features.rows[0].size();
  for (std::size_t i = 0; i < dim; ++i) {
    out << ",v_" << i;
  }
  out << "\n";
  for (std::size_t r = 0; r < features.rows.size(); ++r) {
    out << features.labels[r];
    for (double v : features.rows[r]) {
      out << "," << v;
    }
    out << "\n";
  }
}

void write_forms_csv(const std::vector<FormResult>& forms, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::io_failure, "cannot write form table: " + path);
  }
  out.precision(17);
  out << "form,asr,degradation,error\n";
  for (const auto& f : forms) {
    out << carrier_form_name(f.form.kind) << "," << f.result.asr << "," << f.degradation
        << "," << f.error << "\n";
  }
}

}  // namespace csteer
