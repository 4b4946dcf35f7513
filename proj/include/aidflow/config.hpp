#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "aidflow/classifier.hpp"
#include "aidflow/detection.hpp"
#include "aidflow/ensemble.hpp"
#include "aidflow/pipeline.hpp"
#include "aidflow/preprocess.hpp"
#include "aidflow/synthgen.hpp"
#include "aidflow/weaklabel.hpp"
#include "json.hpp"

namespace aidflow {

/// Every tunable of the toolkit. Module defaults are taken from the module
/// structs themselves. Per-stage seeds derive from `seed`.
struct RunConfig {
  std::uint64_t seed = 7;
  synthgen::SynthConfig synth;
  preprocess::Options preprocess;
  weaklabel::LfThresholds lf;
  weaklabel::LabelModelConfig label_model;
  classifier::ModelConfig model;
  classifier::TrainConfig train;
  classifier::SearchSpace search;
  std::size_t search_budget = 10;
  std::size_t knn_k = 5;
  ensemble::EnsembleConfig ensemble;
  detection::DetectionConfig detection;
  pipeline::DatasetConfig dataset;
  std::string slice_format = "csv";

  void validate() const;

  synthgen::SynthConfig synth_config() const;
  classifier::TrainConfig train_config() const;
  std::uint64_t ensemble_seed() const { return derive_seed(seed, 102); }
  std::uint64_t search_seed() const { return derive_seed(seed, 103); }
};

/// Dotted keys ("synth.days", "train.learning_rate", ...) in declaration
/// order.
std::vector<std::string> config_keys();

/// Nested JSON object of every key.
nlohmann::json to_json(const RunConfig& config);

/// Starts from defaults; any key not in config_keys() is rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// "key=value"; the value is parsed as JSON, falling back to a string.
void apply_override(RunConfig& config, std::string_view assignment);

/// AIDFLOW_SEED, when set, replaces the master seed.
void apply_environment(RunConfig& config);

}  // namespace aidflow
