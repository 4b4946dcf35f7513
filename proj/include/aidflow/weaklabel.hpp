#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aidflow/types.hpp"

namespace aidflow::weaklabel {

/// +1 incident, -1 non-incident, 0 abstain.
using Vote = std::int8_t;
inline constexpr Vote kIncident = 1;
inline constexpr Vote kNormal = -1;
inline constexpr Vote kAbstain = 0;

inline constexpr std::size_t kCatalogSize = 10;

/// Thresholds of the labeling-function catalog, in normalized units.
struct LfThresholds {
  std::size_t recent_steps = 4;              // LF1, LF2, LF5, LF6 averaging span
  double separation = 0.20;                  // LF1
  double strong_separation = 0.40;           // LF2
  double one_sided_drop = 0.30;              // LF3
  double one_sided_drop_steady = 0.10;       // LF3 downstream range bound
  std::size_t double_drop_steps = 10;        // LF4 look-back
  double double_sided_drop = 0.30;           // LF4
  double occupancy_separation = 0.15;        // LF5
  double strong_occupancy_separation = 0.30; // LF6
  double occupancy_rise = 0.15;              // LF7, LF8
  double occupancy_steady = 0.05;            // LF7 downstream range bound
  double free_flow_speed = 0.85;             // LF9
  double free_flow_occupancy = 0.08;         // LF9
  double parallel_tolerance = 0.05;          // LF10

  bool operator==(const LfThresholds&) const = default;
};

const std::array<std::string, kCatalogSize>& lf_names();

/// Row-major votes, rows = slices.
struct LabelMatrix {
  std::size_t cols = kCatalogSize;
  std::vector<Vote> votes;

  LabelMatrix() = default;
  LabelMatrix(std::size_t rows, std::size_t columns) : cols(columns), votes(rows * columns, kAbstain) {}

  std::size_t rows() const { return cols == 0 ? 0 : votes.size() / cols; }
  Vote at(std::size_t r, std::size_t c) const { return votes[r * cols + c]; }
  Vote& at(std::size_t r, std::size_t c) { return votes[r * cols + c]; }
  std::span<const Vote> row(std::size_t r) const { return {votes.data() + r * cols, cols}; }
};

std::array<Vote, kCatalogSize> apply_lfs(const TimeSlice& slice, const LfThresholds& th = {});

/// OpenMP over slices.
LabelMatrix apply_lfs(std::span<const TimeSlice> slices, const LfThresholds& th = {});

namespace reference {
LabelMatrix apply_lfs(std::span<const TimeSlice> slices, const LfThresholds& th = {});
}

struct LfStats {
  std::vector<double> coverage;
  std::vector<double> overlap;
  std::vector<double> conflict;
};

LfStats lf_stats(const LabelMatrix& matrix);

struct LabelModelConfig {
  std::optional<double> prior;  // estimated from majority vote when absent
  std::size_t min_pairs = 50;
  double accuracy_floor = 0.5;
  double accuracy_ceiling = 0.99;
  double fallback_accuracy = 0.7;
  double min_moment = 1e-6;

  bool operator==(const LabelModelConfig&) const = default;
};

struct LabelModel {
  std::vector<double> accuracies;
  std::vector<double> coverages;
  double prior = 0.5;
  std::vector<std::size_t> fallback_lfs;  // LFs whose accuracy fell back
};

/// Triplet method-of-moments under conditional independence: for LFs
/// i, j, k, |E[l_i l_j] E[l_i l_k] / E[l_j l_k]| = a_i^2 where a_i is the
/// correlation of LF i with the label. Moments use only rows where both LFs
/// vote; the per-LF estimate is the median over valid triplets.
LabelModel fit_label_model(const LabelMatrix& matrix, const LabelModelConfig& config = {});

/// Naive-Bayes posterior P(Y = incident | votes).
double predict_proba(const LabelModel& model, std::span<const Vote> votes);

struct LabelSummary {
  std::size_t incident = 0;
  std::size_t non_incident = 0;
  std::size_t all_abstain = 0;  // these rows received the prior
};

/// Sets prob_label on every slice (row i of `matrix` belongs to slice i).
LabelSummary label_training_set(std::span<TimeSlice> slices, const LabelMatrix& matrix, const LabelModel& model);

std::string format_lf_stats(const LfStats& stats, const LabelModel* model = nullptr);

}  // namespace aidflow::weaklabel
