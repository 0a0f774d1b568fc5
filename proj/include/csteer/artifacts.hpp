#pragma once

#include <string>
#include <vector>

#include "csteer/optimizer.hpp"

namespace csteer {

inline constexpr const char* kToolVersion = "0.1.0";

/// The optimized perturbation with its provenance: token ids, rendered text,
/// and a snapshot hash of the producing configuration. Serialized without
/// timestamps so identical runs write identical bytes.
struct PerturbationArtifact {
  int version = 1;
  std::string case_id;
  Perturbation perturbation;
  std::string rendered;
  int nit = 0;
  int nic = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  bool pass_limit_reached = false;
  std::uint64_t seed = 0;
  std::string config_hash;
};

void save_perturbation(const PerturbationArtifact& artifact, const std::string& path);
PerturbationArtifact load_perturbation(const std::string& path);

/// One optimization step per line: pass, slot, candidate, losses, accepted.
void save_trace_csv(const OptimizationTrace& trace, const std::string& path);

struct RunManifest {
  std::string command;
  std::string tool_version = kToolVersion;
  std::string config_hash;
  std::string created_at;
  std::vector<std::string> artifacts;
};

void save_manifest(const RunManifest& manifest, const std::string& path);

std::string config_hash_hex(const std::string& raw_json);
std::string iso_timestamp_now();

}  // namespace csteer
