#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "aidflow/types.hpp"
#include "json.hpp"

namespace aidflow::classifier {

class TrainingError : public Error {
public:
  using Error::Error;
};

struct ModelConfig {
  std::size_t lstm_layers = 1;
  std::size_t units = 32;
  bool bidirectional = false;
  std::size_t dense_layers = 1;
  std::size_t dense_units = 16;
  std::size_t seq_len = 20;
  std::size_t input_channels = kChannels;

  void validate() const;
  std::size_t directions() const { return bidirectional ? 2 : 1; }
  bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  double learning_rate = 1e-3;
  std::size_t patience = 10;
  double gamma = 2.0;
  std::uint64_t seed = 1;
  double threshold = 0.5;
  bool hard_targets = false;  // threshold probabilistic targets at 0.5 before training

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

/// Parameters live in one flat vector. Order: for each LSTM layer, for each
/// direction (forward, then backward): kernel [(in + units) x 4 units]
/// row-major with gate blocks (input, forget, cell, output), then bias
/// [4 units]; for each dense layer: kernel [in x out] row-major, bias [out];
/// finally the output kernel [in] and bias [1].
struct TrainedModel {
  ModelConfig config;
  TrainConfig train_config;
  std::vector<double> params;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

std::size_t parameter_count(const ModelConfig& config);

/// Glorot-uniform kernels, forget-gate bias 1, other biases 0.
TrainedModel init_model(const ModelConfig& config, std::uint64_t seed);

// ---- inference ------------------------------------------------------------

double forward_logit(const ModelConfig& config, std::span<const double> params, std::span<const double> input);
double forward(const TrainedModel& model, const TimeSlice& slice);
/// OpenMP over slices.
std::vector<double> forward_batch(const TrainedModel& model, std::span<const TimeSlice> slices);

// ---- loss -----------------------------------------------------------------

/// Soft-target focal loss: -q (1-p)^g ln p - (1-q) p^g ln(1-p), p clipped to
/// [1e-7, 1 - 1e-7].
double focal_loss(double p, double target, double gamma);
/// Derivative of focal_loss(sigmoid(z), target, gamma) with respect to z.
double focal_loss_grad_logit(double logit, double target, double gamma);
double binary_cross_entropy(double p, double target);

// ---- training -------------------------------------------------------------

/// Slices paired with per-slice targets (probabilities or 0/1 labels).
struct LabeledView {
  std::span<const TimeSlice> slices;
  std::span<const double> targets;
  std::size_t size() const { return slices.size(); }
};

/// Loss of one example; `grad` (parameter_count entries) is overwritten.
double sample_loss_and_gradient(const ModelConfig& config, std::span<const double> params,
                                std::span<const double> input, double target, double gamma, std::span<double> grad);

/// Mean loss and mean gradient over data[indices]. OpenMP over fixed chunks
/// of eight samples, reduced in chunk order, so results do not depend on
/// the thread count.
double batch_loss_and_gradient(const ModelConfig& config, std::span<const double> params, const LabeledView& data,
                               std::span<const std::size_t> indices, double gamma, std::vector<double>& grad);

double mean_focal_loss(const ModelConfig& config, std::span<const double> params, const LabeledView& data,
                       double gamma);

TrainedModel train(const ModelConfig& config, const TrainConfig& train_config, const LabeledView& train_set,
                   const LabeledView& val_set);

// ---- gradient check -------------------------------------------------------

std::vector<double> numerical_gradient(const ModelConfig& config, std::span<const double> params,
                                       const LabeledView& batch, double gamma, double epsilon);
/// max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-8)
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric);
/// Central differences versus backpropagation on a model with at most 500
/// parameters.
double gradient_check(const TrainedModel& model, const LabeledView& batch, double epsilon = 1e-5, double gamma = 2.0);

// ---- k-NN baseline --------------------------------------------------------

/// Fraction of incident labels (label > 0.5) among the k nearest training
/// slices by Euclidean distance over the flattened channels; equal
/// distances are ordered by training index.
double knn_baseline(std::span<const TimeSlice> train, std::span<const double> labels, const TimeSlice& query,
                    std::size_t k);
/// Uses each training slice's prob_label as its label.
double knn_baseline(std::span<const TimeSlice> train, const TimeSlice& query, std::size_t k);
/// OpenMP over queries.
std::vector<double> knn_predict(std::span<const TimeSlice> train, std::span<const double> labels,
                                std::span<const TimeSlice> queries, std::size_t k);

namespace reference {
double batch_loss_and_gradient(const ModelConfig& config, std::span<const double> params, const LabeledView& data,
                               std::span<const std::size_t> indices, double gamma, std::vector<double>& grad);
std::vector<double> forward_batch(const TrainedModel& model, std::span<const TimeSlice> slices);
std::vector<double> knn_predict(std::span<const TimeSlice> train, std::span<const double> labels,
                                std::span<const TimeSlice> queries, std::size_t k);
}  // namespace reference

// ---- hyperparameter search --------------------------------------------------

struct SearchSpace {
  std::size_t min_lstm_layers = 1;
  std::size_t max_lstm_layers = 2;
  std::vector<std::size_t> units{16, 32, 64};
  std::vector<bool> bidirectional{false, true};
  std::size_t min_dense_layers = 0;
  std::size_t max_dense_layers = 2;
  double min_learning_rate = 1e-4;
  double max_learning_rate = 1e-2;
  std::vector<std::size_t> batch_sizes{32, 64, 128};
};

struct Trial {
  ModelConfig model;
  TrainConfig train;
  double val_bce = 0.0;
  std::size_t epochs_run = 0;
};

struct SearchResult {
  Trial best;
  std::vector<Trial> trials;
};

/// Samples `budget` configurations (seeded), trains each on `train_set`, and
/// keeps the one with the lowest validation binary cross-entropy.
SearchResult random_search(const SearchSpace& space, std::size_t budget, const LabeledView& train_set,
                           const LabeledView& val_set, const ModelConfig& base_model, const TrainConfig& base_train,
                           std::uint64_t seed);

// ---- persistence ----------------------------------------------------------

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainedModel& model);
TrainedModel model_from_json(const nlohmann::json& j);
void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);
/// epoch,train_loss,val_loss,val_acc
std::string history_csv(const TrainedModel& model);

/// Targets from slice label fields.
std::vector<double> weak_targets(std::span<const TimeSlice> slices);
std::vector<double> reported_targets(std::span<const TimeSlice> slices);
std::vector<double> true_targets(std::span<const TimeSlice> slices);
std::vector<double> hard(std::span<const double> targets);

}  // namespace aidflow::classifier
