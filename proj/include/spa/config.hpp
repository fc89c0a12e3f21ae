#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "spa/data.hpp"
#include "spa/generator.hpp"
#include "spa/metrics.hpp"
#include "spa/objective.hpp"

namespace spa {

// Everything a run needs. The JSON form is strict: unknown keys and wrong
// types are ConfigErrors; absent keys keep their defaults.
struct RunConfig {
  ModelConfig model;
  EncodingFlags encodings;
  TrainConfig train;
  MetricConfig metrics;
  SequencePattern pattern = SequencePattern::kDiagonal;

  // Copies the encoding flags and PA threshold into `train`, then validates
  // every section.
  void Resolve();

  // Small model and short schedule for single-core desk runs.
  static RunConfig Desk();
};

RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& config);

RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& config, const std::filesystem::path& path);

}  // namespace spa
