#include "aidflow/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>

namespace aidflow::ensemble {

using classifier::TrainedModel;

void EnsembleConfig::validate() const {
  if (n_seeds < 1) throw ConfigError("n_seeds must be >= 1");
  if (!(selection_threshold >= 0.0 && selection_threshold <= 1.0))
    throw ConfigError("selection_threshold must be in [0, 1]");
}

std::vector<std::uint64_t> member_seeds(std::uint64_t master_seed, std::size_t n) {
  std::vector<std::uint64_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = derive_seed(master_seed, 0xe25e, i);
  return out;
}

std::vector<TrainedModel> train_ensemble(const classifier::ModelConfig& model_config,
                                         const classifier::TrainConfig& train_config,
                                         const classifier::LabeledView& train_set,
                                         const classifier::LabeledView& val_set, std::size_t n_seeds,
                                         std::uint64_t master_seed) {
  if (n_seeds < 1) throw ConfigError("n_seeds must be >= 1");
  const std::vector<std::uint64_t> seeds = member_seeds(master_seed, n_seeds);
  std::vector<std::optional<TrainedModel>> slots(n_seeds);
  std::vector<std::string> errors(n_seeds);
  const auto n = static_cast<std::ptrdiff_t>(n_seeds);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    classifier::TrainConfig tc = train_config;
    tc.seed = seeds[i];
    try {
      slots[i] = classifier::train(model_config, tc, train_set, val_set);
    } catch (const classifier::TrainingError& e) {
      errors[i] = e.what();
    }
  }
  std::vector<TrainedModel> out;
  for (std::size_t i = 0; i < n_seeds; ++i) {
    if (slots[i]) {
      out.push_back(std::move(*slots[i]));
    } else {
      warn("ensemble member " + std::to_string(i) + " dropped: " + errors[i]);
    }
  }
  if (out.empty()) throw classifier::TrainingError("every ensemble member failed to train");
  return out;
}

double validation_accuracy(const TrainedModel& model, const classifier::LabeledView& val_set) {
  if (val_set.size() == 0) throw Error("empty validation set");
  const std::vector<double> p = classifier::forward_batch(model, val_set.slices);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    correct += (p[i] > model.train_config.threshold) == (val_set.targets[i] > 0.5) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(p.size());
}

Ensemble select_members(std::vector<TrainedModel> candidates, const classifier::LabeledView& val_set,
                        double threshold) {
  if (candidates.empty()) throw Error("select_members: no candidates");
  for (const TrainedModel& m : candidates) {
    if (!(m.config == candidates.front().config)) throw ConfigError("ensemble members must share one model config");
  }
  std::vector<double> acc(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) acc[i] = validation_accuracy(candidates[i], val_set);

  Ensemble e;
  e.selection_threshold = threshold;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (acc[i] > threshold) {
      e.member_seeds.push_back(candidates[i].train_config.seed);
      e.val_accuracies.push_back(acc[i]);
      e.members.push_back(std::move(candidates[i]));
    }
  }
  if (e.members.empty()) {
    const std::size_t best = static_cast<std::size_t>(std::max_element(acc.begin(), acc.end()) - acc.begin());
    char buf[160];
    std::snprintf(buf, sizeof buf, "no ensemble member exceeds validation accuracy %.3f; keeping the best (%.3f)",
                  threshold, acc[best]);
    warn(buf);
    e.member_seeds.push_back(candidates[best].train_config.seed);
    e.val_accuracies.push_back(acc[best]);
    e.members.push_back(std::move(candidates[best]));
  }
  return e;
}

EnsemblePrediction summarize(std::vector<double> member_outputs) {
  if (member_outputs.empty()) throw Error("ensemble prediction needs at least one member");
  EnsemblePrediction p;
  const double m = static_cast<double>(member_outputs.size());
  // Sorted copy so that the statistics do not depend on member order.
  std::vector<double> sorted = member_outputs;
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0;
  for (double v : sorted) sum += v;
  p.mean = sorted.front() == sorted.back() ? sorted.front() : std::clamp(sum / m, sorted.front(), sorted.back());
  double ss = 0.0;
  for (double v : sorted) ss += (v - p.mean) * (v - p.mean);
  p.variance = ss / m;
  p.quantile_75 = quantile_inclusive(sorted, 0.75);
  p.member_outputs = std::move(member_outputs);
  return p;
}

EnsemblePrediction predict(const Ensemble& ensemble, const TimeSlice& slice) {
  if (ensemble.members.empty()) throw Error("empty ensemble");
  std::vector<double> outputs;
  outputs.reserve(ensemble.size());
  for (const TrainedModel& m : ensemble.members) outputs.push_back(classifier::forward(m, slice));
  return summarize(std::move(outputs));
}

std::vector<EnsemblePrediction> predict_batch(const Ensemble& ensemble, std::span<const TimeSlice> slices) {
  if (ensemble.members.empty()) throw Error("empty ensemble");
  std::vector<EnsemblePrediction> out(slices.size());
  const auto n = static_cast<std::ptrdiff_t>(slices.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = predict(ensemble, slices[static_cast<std::size_t>(i)]);
  }
  return out;
}

namespace reference {
std::vector<EnsemblePrediction> predict_batch(const Ensemble& ensemble, std::span<const TimeSlice> slices) {
  std::vector<EnsemblePrediction> out;
  out.reserve(slices.size());
  for (const TimeSlice& s : slices) out.push_back(predict(ensemble, s));
  return out;
}
}  // namespace reference

void save_ensemble(const Ensemble& ensemble, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (ensemble.members.empty()) throw Error("cannot save an empty ensemble");
  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  nlohmann::json members = nlohmann::json::array();
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "member_%03zu.json", i);
    classifier::save_model(ensemble.members[i], tmp / name);
    members.push_back({{"file", name}, {"seed", ensemble.member_seeds[i]}, {"val_accuracy", ensemble.val_accuracies[i]}});
  }
  const nlohmann::json manifest = {{"format", "aidflow-ensemble"},
                                   {"version", 1},
                                   {"selection_threshold", ensemble.selection_threshold},
                                   {"members", members}};
  write_file_atomic(tmp / "manifest.json", manifest.dump(2) + "\n");
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

Ensemble load_ensemble(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed ensemble manifest in " + dir.string() + ": " + e.what());
  }
  if (manifest.value("format", std::string{}) != "aidflow-ensemble") throw Error(dir.string() + " is not an ensemble");
  Ensemble e;
  e.selection_threshold = manifest.at("selection_threshold").get<double>();
  for (const auto& m : manifest.at("members")) {
    e.members.push_back(classifier::load_model(dir / m.at("file").get<std::string>()));
    e.member_seeds.push_back(m.at("seed").get<std::uint64_t>());
    e.val_accuracies.push_back(m.at("val_accuracy").get<double>());
  }
  if (e.members.empty()) throw Error("ensemble in " + dir.string() + " has no members");
  for (const auto& m : e.members) {
    if (!(m.config == e.members.front().config)) throw Error("ensemble members disagree on model config");
  }
  return e;
}

}  // namespace aidflow::ensemble
