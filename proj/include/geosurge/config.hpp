#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "geosurge/datakit.hpp"
#include "geosurge/evalkit.hpp"
#include "geosurge/fusion.hpp"
#include "geosurge/inference.hpp"
#include "geosurge/trainer.hpp"

namespace geosurge::config {

struct PartitionCfg {
  size_t tau_min = 50;
  std::vector<size_t> schedule = {25000, 10000, 5000, 2000, 1000, 750, 500};
  std::string split = "train";
  bool member_ids = false;
};

struct InferenceCfg {
  inference::ScoreMode mode = inference::ScoreMode::kSoftmax;
  size_t top_k = 5;
  std::string split = "query";
};

struct EvalCfg {
  std::vector<double> thresholds_km = evalkit::kDefaultThresholdsKm;
};

// The full run configuration. The JSON document is the source of truth;
// flags override individual keys; unknown keys are rejected.
struct RunConfig {
  uint64_t seed = 42;
  size_t threads = 1;
  std::string precision = "f32";
  PartitionCfg partition;
  fusion::FusionConfig fusion;
  trainer::TrainConfig train;
  InferenceCfg inference;
  EvalCfg eval;
  datakit::SyntheticConfig synth;

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& doc);
  static RunConfig load(const std::string& path);
};

// Applies "dotted.path=value" onto a config document; the value is parsed as
// JSON when possible, else taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace geosurge::config
