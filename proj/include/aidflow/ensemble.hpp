#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "aidflow/classifier.hpp"

namespace aidflow::ensemble {

struct EnsembleConfig {
  std::size_t n_seeds = 50;
  double selection_threshold = 0.9;  // validation accuracy, strict

  void validate() const;
  bool operator==(const EnsembleConfig&) const = default;
};

struct Ensemble {
  std::vector<classifier::TrainedModel> members;
  std::vector<std::uint64_t> member_seeds;
  std::vector<double> val_accuracies;
  double selection_threshold = 0.9;

  std::size_t size() const { return members.size(); }
  const classifier::ModelConfig& config() const { return members.front().config; }
};

struct EnsemblePrediction {
  double mean = 0.0;
  double variance = 0.0;  // population variance over members
  double quantile_75 = 0.0;
  std::vector<double> member_outputs;
};

/// Seeds of the members trained from `master_seed`.
std::vector<std::uint64_t> member_seeds(std::uint64_t master_seed, std::size_t n);

/// Trains one model per derived seed (OpenMP across seeds). A member whose
/// training aborts is dropped with a warning; the result is never empty
/// unless every member failed, which throws.
std::vector<classifier::TrainedModel> train_ensemble(const classifier::ModelConfig& model_config,
                                                     const classifier::TrainConfig& train_config,
                                                     const classifier::LabeledView& train_set,
                                                     const classifier::LabeledView& val_set, std::size_t n_seeds,
                                                     std::uint64_t master_seed);

/// Accuracy of hard predictions (p > threshold) against val targets > 0.5.
double validation_accuracy(const classifier::TrainedModel& model, const classifier::LabeledView& val_set);

/// Keeps members whose validation accuracy is strictly above `threshold`;
/// falls back to the single most accurate member (first on ties).
Ensemble select_members(std::vector<classifier::TrainedModel> candidates, const classifier::LabeledView& val_set,
                        double threshold = 0.9);

EnsemblePrediction summarize(std::vector<double> member_outputs);
EnsemblePrediction predict(const Ensemble& ensemble, const TimeSlice& slice);
/// OpenMP over slices.
std::vector<EnsemblePrediction> predict_batch(const Ensemble& ensemble, std::span<const TimeSlice> slices);

namespace reference {
std::vector<EnsemblePrediction> predict_batch(const Ensemble& ensemble, std::span<const TimeSlice> slices);
}

/// Directory with manifest.json and member_NNN.json files.
void save_ensemble(const Ensemble& ensemble, const std::filesystem::path& dir);
Ensemble load_ensemble(const std::filesystem::path& dir);

}  // namespace aidflow::ensemble
