#include "csteer/config.hpp"

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "csteer/errors.hpp"
#include "csteer/rng.hpp"

namespace csteer {

namespace {

using nlohmann::json;

class FieldErrors {
 public:
  void add(const std::string& field, const std::string& message) {
    issues_.push_back(field + ": " + message);
  }
  void raise_if_any() const {
    if (issues_.empty()) {
      return;
    }
    std::string msg = "invalid configuration";
    for (const auto& issue : issues_) {
      msg += "\n  - " + issue;
    }
    throw Error(ErrorCode::config_invalid, msg);
  }

 private:
  std::vector<std::string> issues_;
};

std::string resolve(const std::string& base_dir, const std::string& path) {
  if (path.empty()) {
    return path;
  }
  std::filesystem::path p(path);
  if (p.is_absolute() || base_dir.empty()) {
    return path;
  }
  return (std::filesystem::path(base_dir) / p).string();
}

void require_exists(FieldErrors& errors, const std::string& field, const std::string& path) {
  if (path.empty()) {
    errors.add(field, "missing required path");
  } else if (!std::filesystem::exists(path)) {
    errors.add(field, "path does not exist: " + path);
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config_invalid, std::string("config is not valid JSON: ") + e.what());
  }

  FieldErrors errors;
  RunConfig cfg;
  cfg.raw_json = json_text;

  cfg.version = j.value("version", 1);
  if (cfg.version != 1) {
    errors.add("version", "unsupported config version");
  }
  cfg.seed = j.value("seed", std::uint64_t{100});
  cfg.output_dir = resolve(base_dir, j.value("output_dir", std::string("out")));

  // every seeded component derives from the global seed unless pinned
  const auto derived = [&cfg](const char* name) { return derive_seed(cfg.seed, name); };

  if (j.contains("oracle")) {
    const json& o = j["oracle"];
    cfg.oracle.kind = o.value("kind", std::string("toy-train"));
    if (cfg.oracle.kind != "toy-train" && cfg.oracle.kind != "checkpoint") {
      errors.add("oracle.kind", "must be 'toy-train' or 'checkpoint'");
    }
    cfg.oracle.checkpoint_path = resolve(base_dir, o.value("checkpoint", std::string()));
    if (o.contains("corpus")) {
      const json& c = o["corpus"];
      cfg.oracle.corpus.grammar = c.value("grammar", std::string("mini"));
      cfg.oracle.corpus.n_docs = c.value("n_docs", 3000);
      cfg.oracle.corpus.seed = c.value("seed", derived("corpus"));
    } else {
      cfg.oracle.corpus.seed = derived("corpus");
    }
    if (o.contains("train")) {
      const json& t = o["train"];
      cfg.oracle.train.steps = t.value("steps", 1500);
      cfg.oracle.train.batch_docs = t.value("batch_docs", 8);
      cfg.oracle.train.lr = t.value("lr", 3e-3);
      cfg.oracle.train.seed = t.value("seed", derived("train"));
    } else {
      cfg.oracle.train.steps = 1500;
      cfg.oracle.train.seed = derived("train");
    }
    if (o.contains("shape")) {
      const json& s = o["shape"];
      cfg.oracle.shape.d_model = s.value("d_model", 64);
      cfg.oracle.shape.n_layers = s.value("n_layers", 2);
      cfg.oracle.shape.n_heads = s.value("n_heads", 4);
      cfg.oracle.shape.context = s.value("context", 256);
      cfg.oracle.shape.init_seed = s.value("init_seed", derived("model-init"));
    } else {
      cfg.oracle.shape.init_seed = derived("model-init");
    }
  } else {
    cfg.oracle.corpus.seed = derived("corpus");
    cfg.oracle.train.steps = 1500;
    cfg.oracle.train.seed = derived("train");
    cfg.oracle.shape.init_seed = derived("model-init");
  }

  cfg.case_template = resolve(base_dir, j.value("case_template", std::string()));
  cfg.dataset = resolve(base_dir, j.value("dataset", std::string()));
  cfg.carrier = resolve(base_dir, j.value("carrier", std::string()));

  cfg.optimizer.seed = derived("perturbation-init");
  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    cfg.optimizer.top_k = o.value("top_k", 400);
    cfg.optimizer.adversarial_length = o.value("adversarial_length", 10);
    cfg.optimizer.n_keywords = o.value("n_keywords", 2);
    cfg.optimizer.max_passes = o.value("max_passes", 50);
    cfg.optimizer.seed = o.value("seed", cfg.optimizer.seed);
    cfg.optimizer.keyword_pool_cap = o.value("keyword_pool_cap", 30);
    try {
      cfg.optimizer.placement = parse_placement(o.value("placement", std::string("key_first")));
    } catch (const Error& e) {
      errors.add("optimizer.placement", e.what());
    }
    if (cfg.optimizer.top_k < 1) errors.add("optimizer.top_k", "must be >= 1");
    if (cfg.optimizer.adversarial_length < 1) {
      errors.add("optimizer.adversarial_length", "must be >= 1");
    }
    if (cfg.optimizer.n_keywords < 0) errors.add("optimizer.n_keywords", "must be >= 0");
  }

  if (j.contains("loss")) {
    const json& l = j["loss"];
    cfg.loss.enhanced_tokens = l.value("h", 2);
    cfg.loss.enhancement_rate = l.value("r", 0.4);
    cfg.loss.clamp_eps = l.value("clamp_eps", 1e-6);
    if (l.value("aggregate", std::string("mean")) != "mean") {
      errors.add("loss.aggregate", "only 'mean' aggregation over variants is supported");
    }
    if (cfg.loss.enhanced_tokens < 1) errors.add("loss.h", "must be >= 1");
    if (cfg.loss.enhancement_rate < 0) errors.add("loss.r", "must be >= 0");
    if (cfg.loss.clamp_eps <= 0 || cfg.loss.clamp_eps >= 0.5) {
      errors.add("loss.clamp_eps", "must lie in (0, 0.5)");
    }
  }

  if (j.contains("judge")) {
    const json& jj = j["judge"];
    cfg.judge.strip_whitespace = jj.value("strip_whitespace", true);
    cfg.judge.case_fold = jj.value("case_fold", false);
    const std::string matcher = jj.value("matcher", std::string("canonical"));
    if (matcher != "canonical") {
      errors.add("judge.matcher", "only 'canonical' is configurable from a file");
    }
  }

  if (j.contains("noise")) {
    const json& n = j["noise"];
    cfg.noise.n_variants = n.value("n_variants", 5);
    cfg.noise.min_tokens = n.value("min_tokens", 20);
    cfg.noise.max_tokens = n.value("max_tokens", 80);
    cfg.noise.grammar = n.value("grammar", std::string("mini"));
    cfg.noise.seed = n.value("seed", derived("noise"));
    if (cfg.noise.n_variants < 1) errors.add("noise.n_variants", "must be >= 1");
    if (cfg.noise.min_tokens > cfg.noise.max_tokens) {
      errors.add("noise.min_tokens", "must not exceed noise.max_tokens");
    }
  } else {
    cfg.noise.seed = derived("noise");
  }

  if (j.contains("decode")) {
    const json& d = j["decode"];
    const std::string mode = d.value("mode", std::string("greedy"));
    if (mode == "greedy") {
      cfg.decode.mode = DecodeConfig::Mode::greedy;
    } else if (mode == "sample") {
      cfg.decode.mode = DecodeConfig::Mode::sample;
    } else {
      errors.add("decode.mode", "must be 'greedy' or 'sample'");
    }
    cfg.decode.temperature = d.value("temperature", 1.0);
    cfg.decode.seed = d.value("seed", derived("decode"));
    if (cfg.decode.temperature <= 0) errors.add("decode.temperature", "must be positive");
  } else {
    cfg.decode.seed = derived("decode");
  }

  if (j.contains("injection")) {
    const json& inj = j["injection"];
    try {
      cfg.injection.form = parse_carrier_form(inj.value("form", std::string("comment")));
    } catch (const Error& e) {
      errors.add("injection.form", e.what());
    }
    const std::string anchor = inj.value("anchor", std::string("first_comment"));
    if (anchor == "first_comment") {
      cfg.injection.anchor.kind = AnchorRule::Kind::first_comment;
    } else if (anchor == "line_index") {
      cfg.injection.anchor.kind = AnchorRule::Kind::line_index;
      cfg.injection.anchor.line = inj.value("anchor_line", 0);
    } else {
      errors.add("injection.anchor", "must be 'first_comment' or 'line_index'");
    }
  }

  cfg.samples_per_item = j.value("samples_per_item", 1);
  cfg.max_new_tokens = j.value("max_new_tokens", 8);
  cfg.r1 = j.value("r1", 0.2);
  cfg.r2 = j.value("r2", 0.8);
  cfg.clean_baseline = j.value("clean_baseline", true);
  if (cfg.samples_per_item < 1) errors.add("samples_per_item", "must be >= 1");
  if (cfg.max_new_tokens < 1) errors.add("max_new_tokens", "must be >= 1");
  if (cfg.r1 <= 0 || cfg.r1 >= 1) errors.add("r1", "must lie in (0, 1)");
  if (cfg.r2 <= 0 || cfg.r2 >= 1) errors.add("r2", "must lie in (0, 1)");

  if (j.contains("defense")) {
    const json& d = j["defense"];
    if (d.contains("fractions")) {
      for (const auto& f : d["fractions"]) {
        cfg.defense.fractions.push_back(f.get<double>());
      }
    }
    cfg.defense.repeats = d.value("repeats", 3);
    cfg.defense.sweep_seed = d.value("sweep_seed", std::uint64_t{0});
    cfg.defense.probe_layer = d.value("probe_layer", 2);
    cfg.defense.probe_token = d.value("probe_token", std::string("cls"));
    cfg.defense.n_feature_snippets = d.value("n_feature_snippets", 100);
    if (d.contains("forms")) {
      cfg.defense.forms.clear();
      for (const auto& f : d["forms"]) {
        try {
          cfg.defense.forms.push_back(parse_carrier_form(f.get<std::string>()));
        } catch (const Error& e) {
          errors.add("defense.forms", e.what());
        }
      }
    }
    if (cfg.defense.repeats < 1) errors.add("defense.repeats", "must be >= 1");
  }
  if (cfg.defense.sweep_seed == 0) {
    cfg.defense.sweep_seed = derived("sweep");
  }

  const std::string policy = j.value("execution", json::object()).value("policy", std::string("parallel"));
  if (policy == "serial") {
    cfg.policy = ExecPolicy::serial;
  } else if (policy == "parallel") {
    cfg.policy = ExecPolicy::parallel;
  } else {
    errors.add("execution.policy", "must be 'serial' or 'parallel'");
  }
  cfg.optimizer.policy = cfg.policy;

  // referenced paths must exist up front
  require_exists(errors, "case_template", cfg.case_template);
  require_exists(errors, "dataset", cfg.dataset);
  require_exists(errors, "carrier", cfg.carrier);
  if (cfg.oracle.kind == "checkpoint") {
    require_exists(errors, "oracle.checkpoint", cfg.oracle.checkpoint_path);
  }

  errors.raise_if_any();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::config_invalid, "config file not found: " + path);
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), std::filesystem::path(path).parent_path().string());
}

std::string default_config_json() {
  json j = {
      {"version", 1},
      {"seed", 100},
      {"output_dir", "out"},
      {"oracle",
       {{"kind", "toy-train"},
        {"corpus", {{"grammar", "mini"}, {"n_docs", 3000}}},
        {"train", {{"steps", 1500}, {"batch_docs", 8}, {"lr", 3e-3}}},
        {"shape", {{"d_model", 64}, {"n_layers", 2}, {"n_heads", 4}, {"context", 256}}}}},
      {"case_template", "data/cases/st_mini.case"},
      {"dataset", "data/datasets/mini_eval.jsonl"},
      {"carrier", "data/carriers/mini_tool.mini"},
      {"optimizer",
       {{"top_k", 400},
        {"adversarial_length", 10},
        {"n_keywords", 2},
        {"max_passes", 50},
        {"seed", 100},
        {"keyword_pool_cap", 30},
        {"placement", "key_first"}}},
      {"loss", {{"h", 2}, {"r", 0.4}, {"clamp_eps", 1e-6}, {"aggregate", "mean"}}},
      {"judge", {{"strip_whitespace", true}, {"case_fold", false}, {"matcher", "canonical"}}},
      {"noise",
       {{"n_variants", 5}, {"min_tokens", 20}, {"max_tokens", 80}, {"grammar", "mini"}}},
      {"decode", {{"mode", "greedy"}, {"temperature", 1.0}}},
      {"injection", {{"form", "comment"}, {"anchor", "first_comment"}}},
      {"samples_per_item", 1},
      {"max_new_tokens", 8},
      {"r1", 0.2},
      {"r2", 0.8},
      {"clean_baseline", true},
      {"defense",
       {{"repeats", 3},
        {"probe_layer", 2},
        {"probe_token", "cls"},
        {"n_feature_snippets", 100},
        {"forms", {"comment", "variable_assignment", "output_content"}}}},
      {"execution", {{"policy", "parallel"}}},
  };
  return j.dump(2) + "\n";
}

}  // namespace csteer
