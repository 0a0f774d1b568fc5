#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "csteer/errors.hpp"
#include "csteer/harness.hpp"

namespace {

using csteer::Error;
using csteer::ErrorCode;
using csteer::RunConfig;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::config_invalid:
    case ErrorCode::artifact_missing:
      return kExitConfig;
    default:
      return kExitRuntime;
  }
}

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  long long seed = -1;
};

/// Overrides are applied to the JSON text itself so the manifest hash always
/// reflects the effective configuration.
RunConfig load_with_overrides(const CommonArgs& args) {
  std::ifstream in(args.config_path);
  if (!in) {
    throw Error(ErrorCode::config_invalid, "config file not found: " + args.config_path);
  }
  std::stringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();

  if (args.seed >= 0 || !args.out_dir.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::config_invalid, std::string("config is not valid JSON: ") + e.what());
    }
    if (args.seed >= 0) {
      j["seed"] = static_cast<std::uint64_t>(args.seed);
    }
    if (!args.out_dir.empty()) {
      j["output_dir"] = args.out_dir;
    }
    text = j.dump(2);
  }
  const std::string base_dir =
      std::filesystem::path(args.config_path).parent_path().string();
  return csteer::parse_run_config(text, base_dir);
}

void report_written(const csteer::CommandOutcome& outcome) {
  for (const auto& path : outcome.written) {
    std::cout << "wrote " << path << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"csteer: adversarial context-steering toolkit for code completion models"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string artifact_path;
  bool clean_baseline_flag = false;

  auto add_common = [&args](CLI::App* cmd) {
    cmd->add_option("--config", args.config_path, "run configuration (JSON)")
        ->required();
    cmd->add_option("--out", args.out_dir, "output directory override");
    cmd->add_option("--seed", args.seed, "global seed override");
  };

  CLI::App* cmd_validate = app.add_subcommand("validate-config", "parse and validate a config");
  add_common(cmd_validate);

  CLI::App* cmd_train = app.add_subcommand("train-toy", "train and checkpoint the toy oracle");
  add_common(cmd_train);

  CLI::App* cmd_opt = app.add_subcommand("optimize", "run the perturbation optimization");
  add_common(cmd_opt);

  CLI::App* cmd_eval = app.add_subcommand("evaluate", "inject and measure attack success");
  add_common(cmd_eval);
  cmd_eval->add_option("--perturbation", artifact_path, "perturbation artifact path");
  cmd_eval->add_flag("--clean-baseline", clean_baseline_flag,
                     "also run the no-injection baseline");

  CLI::App* cmd_def = app.add_subcommand("defend", "removal sweep, form study, feature export");
  add_common(cmd_def);
  cmd_def->add_option("--perturbation", artifact_path, "perturbation artifact path");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = load_with_overrides(args);
    if (artifact_path.empty()) {
      artifact_path =
          (std::filesystem::path(cfg.output_dir) / "perturbation.json").string();
    }

    if (cmd_validate->parsed()) {
      std::cout << "config ok (seed " << cfg.seed << ", output " << cfg.output_dir
                << ")\n";
      return kExitOk;
    }
    if (cmd_train->parsed()) {
      auto outcome = cmd_train_toy(cfg);
      report_written(outcome);
      return kExitOk;
    }
    if (cmd_opt->parsed()) {
      auto outcome = cmd_optimize(cfg);
      report_written(outcome);
      return kExitOk;
    }
    if (cmd_eval->parsed()) {
      if (clean_baseline_flag) {
        cfg.clean_baseline = true;
      }
      auto outcome = cmd_evaluate(cfg, artifact_path);
      std::cout << "attack ASR " << outcome.attack_asr;
      if (outcome.clean_asr >= 0) {
        std::cout << ", clean ASR " << outcome.clean_asr;
      }
      std::cout << "\n";
      report_written(outcome);
      return kExitOk;
    }
    if (cmd_def->parsed()) {
      auto outcome = cmd_defend(cfg, artifact_path);
      report_written(outcome);
      return kExitOk;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
