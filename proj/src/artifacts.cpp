#include "csteer/artifacts.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>

#include "csteer/errors.hpp"
#include "csteer/rng.hpp"

namespace csteer {

std::string config_hash_hex(const std::string& raw_json) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(raw_json)));
  return buf;
}

std::string iso_timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

void save_perturbation(const PerturbationArtifact& artifact, const std::string& path) {
  nlohmann::json j = {
      {"version", artifact.version},
      {"case_id", artifact.case_id},
      {"keyword_tokens", artifact.perturbation.keyword_tokens},
      {"adversarial_tokens", artifact.perturbation.adversarial_tokens},
      {"placement", placement_name(artifact.perturbation.placement)},
      {"run_tokens", artifact.perturbation.run()},
      {"rendered", artifact.rendered},
      {"nit", artifact.nit},
      {"nic", artifact.nic},
      {"initial_loss", artifact.initial_loss},
      {"final_loss", artifact.final_loss},
      {"pass_limit_reached", artifact.pass_limit_reached},
      {"seed", artifact.seed},
      {"config_hash", artifact.config_hash},
  };
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::io_failure, "cannot write perturbation artifact: " + path);
  }
  out << j.dump(2) << "\n";
}

PerturbationArtifact load_perturbation(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::artifact_missing, "perturbation artifact not found: " + path);
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io_failure, std::string("bad perturbation artifact: ") + e.what());
  }
  PerturbationArtifact artifact;
  artifact.version = j.value("version", 1);
  if (artifact.version != 1) {
    throw Error(ErrorCode::io_failure, "unsupported perturbation artifact version");
  }
  artifact.case_id = j.value("case_id", "");
  artifact.perturbation.keyword_tokens = j.value("keyword_tokens", std::vector<TokenId>{});
  artifact.perturbation.adversarial_tokens =
      j.value("adversarial_tokens", std::vector<TokenId>{});
  artifact.perturbation.placement = parse_placement(j.value("placement", "key_first"));
  artifact.rendered = j.value("rendered", "");
  artifact.nit = j.value("nit", 0);
  artifact.nic = j.value("nic", 0);
  artifact.initial_loss = j.value("initial_loss", 0.0);
  artifact.final_loss = j.value("final_loss", 0.0);
  artifact.pass_limit_reached = j.value("pass_limit_reached", false);
  artifact.seed = j.value("seed", std::uint64_t{0});
  artifact.config_hash = j.value("config_hash", "");
  return artifact;
}

void save_trace_csv(const OptimizationTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::io_failure, "cannot write trace: " + path);
  }
  out.precision(17);
  out << "pass,slot,candidate,old_loss,new_loss,accepted\n";
  for (const auto& s : trace.steps) {
    out << s.pass << "," << s.slot << "," << s.candidate << "," << s.old_loss << ","
        << s.new_loss << "," << (s.accepted ? 1 : 0) << "\n";
  }
  out << "# initial_loss=" << trace.initial_loss << " final_loss=" << trace.final_loss
      << " pass_limit_reached=" << (trace.pass_limit_reached ? 1 : 0) << "\n";
}

void save_manifest(const RunManifest& manifest, const std::string& path) {
  nlohmann::json j = {
      {"command", manifest.command},
      {"tool_version", manifest.tool_version},
      {"config_hash", manifest.config_hash},
      {"created_at", manifest.created_at},
      {"artifacts", manifest.artifacts},
  };
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::io_failure, "cannot write manifest: " + path);
  }
  out << j.dump(2) << "\n";
}

}  // namespace csteer
