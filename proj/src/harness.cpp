#include "csteer/harness.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "csteer/artifacts.hpp"
#include "csteer/defense.hpp"
#include "csteer/errors.hpp"

namespace csteer {

namespace {

namespace fs = std::filesystem;

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::artifact_missing, "cannot read file: " + path);
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.output_dir);
  return (fs::path(cfg.output_dir) / name).string();
}

RunManifest start_manifest(const RunConfig& cfg, const std::string& command) {
  RunManifest manifest;
  manifest.command = command;
  manifest.config_hash = config_hash_hex(cfg.raw_json);
  manifest.created_at = iso_timestamp_now();
  return manifest;
}

RunCaseOptions case_options(const RunConfig& cfg) {
  RunCaseOptions options;
  options.samples_per_item = cfg.samples_per_item;
  options.max_new_tokens = cfg.max_new_tokens;
  options.policy = cfg.policy;
  return options;
}

struct EvalInputs {
  std::shared_ptr<ToyOracle> oracle;
  MaliciousObjective objective;
  std::vector<DatasetItem> items;
  std::string carrier;
  InjectedContext injected;
  Perturbation perturbation;
};

EvalInputs prepare_eval(const RunConfig& cfg, const std::string& artifact_path,
                        std::vector<std::string>* written) {
  EvalInputs inputs;
  const auto artifact = load_perturbation(artifact_path);
  inputs.perturbation = artifact.perturbation;
  inputs.oracle = resolve_oracle(cfg, written);
  inputs.objective = load_case_file(cfg.case_template);
  inputs.items = load_dataset(cfg.dataset);
  inputs.carrier = read_text_file(cfg.carrier);

  CarrierForm form;
  form.kind = cfg.injection.form;
  form.language = inputs.objective.language;
  inputs.injected = inject(inputs.carrier, inputs.perturbation, form,
                           cfg.injection.anchor, *inputs.oracle);
  return inputs;
}

}  // namespace

std::shared_ptr<ToyOracle> resolve_oracle(const RunConfig& cfg,
                                          std::vector<std::string>* written) {
  if (cfg.oracle.kind == "checkpoint") {
    return load_checkpoint(cfg.oracle.checkpoint_path);
  }
  const std::string expected =
      toy_config_snapshot(cfg.oracle.corpus, cfg.oracle.train, cfg.oracle.shape);
  const std::string cache = out_path(cfg, "model.bin");
  if (fs::exists(cache)) {
    try {
      auto oracle = load_checkpoint(cache);
      if (oracle->config_snapshot() == expected) {
        return oracle;
      }
    } catch (const Error&) {
      // stale or foreign file: retrain below
    }
  }
  auto oracle = train_toy_model(cfg.oracle.corpus, cfg.oracle.train, cfg.oracle.shape);
  save_checkpoint(*oracle, cache);
  if (written) {
    written->push_back(cache);
  }
  return oracle;
}

CommandOutcome cmd_train_toy(const RunConfig& cfg) {
  if (cfg.oracle.kind != "toy-train") {
    throw Error(ErrorCode::config_invalid,
                "train-toy needs an oracle of kind 'toy-train'");
  }
  auto oracle = train_toy_model(cfg.oracle.corpus, cfg.oracle.train, cfg.oracle.shape);

  CommandOutcome outcome;
  const std::string model_path = out_path(cfg, "model.bin");
  save_checkpoint(*oracle, model_path);
  outcome.written.push_back(model_path);

  auto manifest = start_manifest(cfg, "train-toy");
  manifest.artifacts = outcome.written;
  const std::string manifest_path = out_path(cfg, "manifest_train.json");
  save_manifest(manifest, manifest_path);
  outcome.written.push_back(manifest_path);
  return outcome;
}

CommandOutcome cmd_optimize(const RunConfig& cfg) {
  CommandOutcome outcome;
  auto oracle = resolve_oracle(cfg, &outcome.written);
  const auto objective = load_case_file(cfg.case_template);

  auto [perturbation, trace] =
      optimize(objective, *oracle, cfg.optimizer, cfg.loss, cfg.noise);

  PerturbationArtifact artifact;
  artifact.case_id = objective.identifier;
  artifact.perturbation = perturbation;
  artifact.rendered = oracle->decode(perturbation.run());
  artifact.nit = perturbation.token_count();
  artifact.nic = static_cast<int>(artifact.rendered.size());
  artifact.initial_loss = trace.initial_loss;
  artifact.final_loss = trace.final_loss;
  artifact.pass_limit_reached = trace.pass_limit_reached;
  artifact.seed = cfg.optimizer.seed;
  artifact.config_hash = config_hash_hex(cfg.raw_json);

  outcome.perturbation_path = out_path(cfg, "perturbation.json");
  save_perturbation(artifact, outcome.perturbation_path);
  outcome.written.push_back(outcome.perturbation_path);

  const std::string trace_path = out_path(cfg, "trace.csv");
  save_trace_csv(trace, trace_path);
  outcome.written.push_back(trace_path);

  auto manifest = start_manifest(cfg, "optimize");
  manifest.artifacts = outcome.written;
  const std::string manifest_path = out_path(cfg, "manifest_optimize.json");
  save_manifest(manifest, manifest_path);
  outcome.written.push_back(manifest_path);
  return outcome;
}

CommandOutcome cmd_evaluate(const RunConfig& cfg, const std::string& artifact_path) {
  CommandOutcome outcome;
  auto inputs = prepare_eval(cfg, artifact_path, &outcome.written);
  const auto options = case_options(cfg);

  std::vector<CaseResult> cases;
  cases.push_back(run_case(inputs.objective, inputs.perturbation, inputs.items,
                           inputs.injected, *inputs.oracle, cfg.decode, cfg.judge,
                           options));
  outcome.attack_asr = cases.back().asr;
  if (cfg.clean_baseline) {
    auto clean = run_case(inputs.objective, inputs.perturbation, inputs.items,
                          clean_context(inputs.carrier), *inputs.oracle, cfg.decode,
                          cfg.judge, options);
    clean.case_id += "-clean";
    outcome.clean_asr = clean.asr;
    cases.push_back(std::move(clean));
  }

  const auto report = make_report(std::move(cases), cfg.r1, cfg.r2);
  const std::string metrics_path = out_path(cfg, "metrics.csv");
  write_metrics_csv(report, metrics_path);
  outcome.written.push_back(metrics_path);

  const std::string trials_path = out_path(cfg, "trials.jsonl");
  write_trials_jsonl(report, trials_path);
  outcome.written.push_back(trials_path);

  auto manifest = start_manifest(cfg, "evaluate");
  manifest.artifacts = outcome.written;
  const std::string manifest_path = out_path(cfg, "manifest_evaluate.json");
  save_manifest(manifest, manifest_path);
  outcome.written.push_back(manifest_path);
  return outcome;
}

CommandOutcome cmd_defend(const RunConfig& cfg, const std::string& artifact_path) {
  CommandOutcome outcome;
  auto inputs = prepare_eval(cfg, artifact_path, &outcome.written);
  const auto options = case_options(cfg);

  RemovalSweepConfig sweep_cfg;
  sweep_cfg.fractions = cfg.defense.fractions;
  sweep_cfg.seed = cfg.defense.sweep_seed;
  sweep_cfg.repeats = cfg.defense.repeats;
  const auto curve =
      removal_sweep(inputs.injected, inputs.objective, inputs.perturbation, inputs.items,
                    *inputs.oracle, sweep_cfg, cfg.decode, cfg.judge, options);
  const std::string sweep_path = out_path(cfg, "sweep.csv");
  write_sweep_csv(curve, sweep_path);
  outcome.written.push_back(sweep_path);

  std::vector<CarrierForm> forms;
  for (auto kind : cfg.defense.forms) {
    CarrierForm form;
    form.kind = kind;
    form.language = inputs.objective.language;
    forms.push_back(form);
  }
  const auto form_results =
      form_variant_eval(inputs.objective, inputs.perturbation, inputs.carrier,
                        inputs.items, *inputs.oracle, forms, cfg.injection.anchor,
                        cfg.decode, cfg.judge, options);
  const std::string forms_path = out_path(cfg, "forms.csv");
  write_forms_csv(form_results, forms_path);
  outcome.written.push_back(forms_path);

  std::vector<LabeledSnippet> snippets;
  const int n = std::min<int>(cfg.defense.n_feature_snippets,
                              static_cast<int>(inputs.items.size()));
  for (int i = 0; i < n; ++i) {
    snippets.push_back({inputs.carrier + inputs.items[static_cast<std::size_t>(i)].prompt,
                        "clean"});
    snippets.push_back(
        {inputs.injected.carrier_text + inputs.items[static_cast<std::size_t>(i)].prompt,
         "injected"});
  }
  const auto features = export_features(snippets, *inputs.oracle,
                                        cfg.defense.probe_layer, cfg.defense.probe_token);
  const std::string features_path = out_path(cfg, "features.csv");
  write_features_csv(features, features_path);
  outcome.written.push_back(features_path);

  auto manifest = start_manifest(cfg, "defend");
  manifest.artifacts = outcome.written;
  const std::string manifest_path = out_path(cfg, "manifest_defend.json");
  save_manifest(manifest, manifest_path);
  outcome.written.push_back(manifest_path);
  return outcome;
}

}  // namespace csteer
