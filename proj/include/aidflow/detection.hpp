#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aidflow/classifier.hpp"
#include "aidflow/ensemble.hpp"
#include "aidflow/preprocess.hpp"

namespace aidflow::detection {

struct DetectionConfig {
  double prob_threshold = 0.5;
  double free_flow_cut = 0.8;             // normalized speed
  std::size_t consecutive_threshold = 6;  // slices
  bool strict = true;                     // runs must exceed the threshold rather than reach it
  bool use_quantile = true;               // ensemble score: quantile_75 instead of the mean
  std::int64_t match_tolerance_s = 300;

  void validate() const;
  /// Whether a run of `length` incident slices is an event.
  bool run_is_event(std::size_t length) const {
    return strict ? length > consecutive_threshold : length >= consecutive_threshold;
  }
  bool operator==(const DetectionConfig&) const = default;
};

struct Score {
  double value = 0.0;
  std::optional<double> uncertainty;  // ensemble variance
};

/// Slice scorer backed by a model, an ensemble or an arbitrary function.
/// Holds references; the model or ensemble must outlive the scorer.
class Scorer {
public:
  using Function = std::function<Score(const TimeSlice&)>;

  static Scorer from_model(const classifier::TrainedModel& model);
  static Scorer from_ensemble(const ensemble::Ensemble& ensemble, bool use_quantile = true);
  static Scorer from_function(Function fn, std::size_t seq_len = 20);

  Score score(const TimeSlice& slice) const { return fn_(slice); }
  /// OpenMP over slices.
  std::vector<Score> score_batch(std::span<const TimeSlice> slices) const;
  std::size_t seq_len() const { return seq_len_; }

private:
  Scorer(Function fn, std::size_t seq_len) : fn_(std::move(fn)), seq_len_(seq_len) {}
  Function fn_;
  std::size_t seq_len_ = 20;
};

struct DetectionEvent {
  std::string pair_id;
  Timestamp start = 0;
  Timestamp end = 0;
  double peak_prob = 0.0;
  std::optional<double> mean_uncertainty;

  bool operator==(const DetectionEvent&) const = default;
};

struct SeriesScores {
  std::vector<double> scores;
  std::vector<std::optional<double>> uncertainty;
  std::vector<std::uint8_t> flags;  // score > prob_threshold
};

/// Scores slices of one pair (strictly increasing t_end) and thresholds them.
SeriesScores classify_series(const Scorer& scorer, std::span<const TimeSlice> slices, const DetectionConfig& config);

/// Binary flags from scores: strictly greater than the threshold.
std::vector<std::uint8_t> classify(std::span<const double> scores, double threshold);

/// True when both speeds of the slice's newest step exceed the cut.
bool free_flowing(const TimeSlice& slice, double cut);

/// Filter 1: clears flags of free-flowing slices.
std::vector<std::uint8_t> free_flow_filter(std::span<const std::uint8_t> flags, std::span<const TimeSlice> slices,
                                           double cut);

/// Filter 2: maximal runs that qualify under run_is_event become events.
/// Scores and uncertainties are optional and feed peak_prob and
/// mean_uncertainty.
std::vector<DetectionEvent> extract_events(std::span<const std::uint8_t> flags, std::span<const TimeSlice> slices,
                                           const DetectionConfig& config, std::span<const double> scores = {},
                                           std::span<const std::optional<double>> uncertainty = {});

/// Filter 1 followed by filter 2.
std::vector<DetectionEvent> apply_filters(std::span<const std::uint8_t> flags, std::span<const TimeSlice> slices,
                                          const DetectionConfig& config, std::span<const double> scores = {},
                                          std::span<const std::optional<double>> uncertainty = {});

// ---- matching and metrics ---------------------------------------------------

struct TruthEvent {
  std::string pair_id;
  Timestamp start = 0;
  Timestamp end = 0;
};

std::vector<TruthEvent> truth_events(std::span<const IncidentRecord> incidents);

struct MatchReport {
  std::vector<std::pair<std::size_t, std::size_t>> matches;  // (detected index, truth index)
  std::size_t correctly_detected = 0;
  std::size_t false_alarms = 0;
  std::size_t missed = 0;
  std::size_t total_truth = 0;
  std::size_t total_detected = 0;
  std::optional<double> dr;
  std::optional<double> far;
};

/// A detection matches a truth incident of the same pair when the intervals
/// overlap or the detection starts within `tolerance_s` after the truth
/// start. Detections are visited in start order and take the earliest
/// unmatched qualifying incident.
MatchReport match_events(std::span<const DetectionEvent> detected, std::span<const TruthEvent> truth,
                         std::int64_t tolerance_s = 300);

/// correct / total; empty when total is zero.
std::optional<double> detection_rate(std::size_t correct, std::size_t total_truth);
/// false / detected; empty when nothing was detected.
std::optional<double> false_alarm_rate(std::size_t false_alarms, std::size_t total_detected);

struct ClassMetrics {
  std::size_t support = 0;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
};

struct ClassificationMetrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  ClassMetrics incident;
  ClassMetrics non_incident;
  double accuracy = 0.0;
};

ClassificationMetrics classification_metrics(std::span<const int> predictions, std::span<const int> labels);

// ---- offline detection on a pair series -------------------------------------

struct OfflineOptions {
  std::size_t history_steps = 20;
  std::int64_t offset_window_s = 3600;
  double speed_clip = 1.5;
  double initial_offset = 0.0;
};

struct OfflineResult {
  std::vector<TimeSlice> slices;
  std::vector<double> scores;
  std::vector<std::optional<double>> uncertainty;
  std::vector<std::uint8_t> flags;          // after the free-flow filter
  std::vector<std::uint8_t> offset_mask;    // per sample, 1 = excluded from the offset window
  std::vector<DetectionEvent> events;
  std::size_t passes = 0;                   // offset recomputations
};

/// Runs detection over a smoothed (not yet offset) pair in mph. The offset
/// excludes sample t whenever the slice ending at t - 1 was classified as an
/// incident, which is the causal rule the stream follows. Because the mask
/// depends on the classifications it feeds, the offset is recomputed until
/// the mask is stable; slices before the first changed sample keep their
/// scores.
OfflineResult detect_offline(const preprocess::PairSeries& smoothed, const preprocess::References& refs,
                             const Scorer& scorer, const DetectionConfig& config, const OfflineOptions& options = {});

// ---- text output --------------------------------------------------------------

/// pair_id,start_iso8601,end_iso8601,peak_prob,mean_uncertainty
std::string events_csv(std::span<const DetectionEvent> events);
std::string match_report_text(const MatchReport& report);
std::string classification_metrics_text(const ClassificationMetrics& m);

struct PlotRow {
  Timestamp t = 0;
  double up_speed = 0.0;
  double down_speed = 0.0;
  double score = 0.0;
  std::optional<double> uncertainty;
  bool in_event = false;
};

/// timestamp_iso8601,up_speed,down_speed,score,uncertainty,event
std::vector<PlotRow> plot_rows(const OfflineResult& result);
std::string plot_csv(std::span<const PlotRow> rows);

}  // namespace aidflow::detection
