#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "aidflow/detection.hpp"
#include "aidflow/preprocess.hpp"
#include "aidflow/synthgen.hpp"
#include "aidflow/types.hpp"

namespace aidflow::pipeline {

/// Day-based split and training-set curation.
struct DatasetConfig {
  int train_days = 9;
  int val_days = 2;                        // remaining days are the test period
  std::int64_t context_margin_s = 1800;    // slices this close to a reported incident are kept
  std::size_t background_stride = 30;      // every n-th slice elsewhere
  std::int64_t detection_warmup_s = 7200;  // history prepended to the test period for detection
  std::string label_source = "weak";       // weak | reported

  void validate() const;
  bool operator==(const DatasetConfig&) const = default;
};

struct RawCorpus {
  std::vector<DetectorMeta> detectors;
  std::vector<MeasurementSeries> series;  // detector order
  std::vector<IncidentRecord> incidents;
};

RawCorpus from_synthetic(const synthgen::Corpus& corpus);
void write_corpus(const std::filesystem::path& dir, const RawCorpus& corpus);
RawCorpus read_corpus(const std::filesystem::path& dir);

struct QualityReport {
  std::size_t windows = 0;
  std::size_t failed_windows = 0;
  std::size_t forward_filled = 0;
  std::size_t spatially_filled = 0;
  preprocess::QualityStats stats;
};

struct PreparedPair {
  DetectorPair ids;
  preprocess::PairSeries filled;    // aligned and gap-filled, mph
  preprocess::PairSeries smoothed;  // plus EMA
  std::vector<std::uint8_t> bad;    // sample lies in a failed detector-hour of either detector
};

struct Prepared {
  preprocess::Grid grid;
  std::vector<PreparedPair> pairs;
  QualityReport quality;
};

struct SplitBounds {
  Timestamp begin = 0;
  Timestamp train_end = 0;
  Timestamp val_end = 0;
  Timestamp end = 0;
};

SplitBounds split_bounds(const preprocess::Grid& grid, const DatasetConfig& config);

/// Lane aggregation, grid alignment, gap filling and EMA for every
/// detector; quality statistics are fitted on the training days and applied
/// to every detector-hour of smoothed speed.
Prepared prepare(const RawCorpus& corpus, const preprocess::Options& options, const DatasetConfig& config);

struct Dataset {
  std::vector<TimeSlice> train;
  std::vector<TimeSlice> val;
  std::vector<TimeSlice> test;
  std::vector<std::pair<std::string, preprocess::References>> references;
};

/// Offset (reported incidents widened by the mask margin are excluded),
/// normalization with references fitted on the training days, slicing,
/// quality exclusion and curation. Pairs run in parallel.
Dataset build_dataset(const Prepared& prepared, std::span<const IncidentRecord> incidents,
                      const preprocess::Options& options, const DatasetConfig& config);

/// Samples with t in [from, to).
preprocess::PairSeries subseries(const preprocess::PairSeries& pair, Timestamp from, Timestamp to);

struct TestDetection {
  std::vector<detection::OfflineResult> per_pair;  // prepared pair order
  std::vector<detection::DetectionEvent> events;
  std::vector<detection::TruthEvent> truth;
  detection::MatchReport report;
};

/// Causal offline detection over [from, end) with detection_warmup_s of
/// preceding history; events ending before `from` and incidents ending
/// before `from` are ignored.
TestDetection detect_period(const Prepared& prepared,
                            std::span<const std::pair<std::string, preprocess::References>> references,
                            std::span<const IncidentRecord> incidents, const detection::Scorer& scorer,
                            const detection::DetectionConfig& detection_config, const preprocess::Options& options,
                            const DatasetConfig& config, Timestamp from);

const preprocess::References& find_references(
    std::span<const std::pair<std::string, preprocess::References>> references, const std::string& pair_id);

}  // namespace aidflow::pipeline
