#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aidflow/detection.hpp"
#include "aidflow/preprocess.hpp"

namespace aidflow::stream {

enum class Status { normal, require_attention, incident_detected };

std::string to_string(Status s);

struct StreamConfig {
  detection::DetectionConfig detection;
  std::size_t history_steps = 20;
  std::size_t ema_window = 5;
  double ema_alpha = 0.33;
  std::int64_t offset_window_s = 3600;
  double speed_clip = 1.5;

  void validate() const;
};

/// One aligned sample of a detector pair, speeds in mph.
struct Sample {
  Timestamp t = 0;
  double up_speed = 0.0;
  double down_speed = 0.0;
  double up_occupancy = 0.0;
  double down_occupancy = 0.0;
};

struct ClosedEvent {
  int id = 0;
  detection::DetectionEvent event;
};

struct StreamUpdate {
  Timestamp t = 0;
  bool skipped = false;  // sample contained NaN
  std::optional<double> score;
  std::optional<double> uncertainty;
  bool incident = false;  // after the free-flow filter
  Status status = Status::normal;
  std::size_t run_length = 0;
  std::optional<int> opened_event;
  std::optional<ClosedEvent> closed_event;
};

/// Online detector for one pair: EMA, offset, normalization, slicing,
/// scoring and the flag state machine, with memory bounded by the EMA
/// window, the history length and the offset window.
class Stream {
public:
  Stream(std::string pair_id, detection::Scorer scorer, preprocess::References refs, StreamConfig config,
         double initial_offset = 0.0);

  /// Feeds samples to the smoother and the offset tracker only.
  void warm_up(std::span<const Sample> samples);

  StreamUpdate push(const Sample& sample);

  /// Closes an open event at end of input.
  std::optional<ClosedEvent> finish();

  Status status() const { return status_; }
  std::size_t run_length() const { return run_length_; }
  double offset() const { return offset_; }
  /// Samples accepted by the offset tracker so far.
  std::size_t offset_ingested() const { return ingested_; }
  std::size_t buffered_rows() const { return rows_.size(); }
  std::size_t offset_window_size() const { return window_.size(); }
  const std::string& pair_id() const { return pair_id_; }

private:
  struct Smoothed {
    double up_speed, down_speed, up_occupancy, down_occupancy;
  };
  void check_order(Timestamp t);
  Smoothed smooth(const Sample& s);
  void track_offset(Timestamp t, double diff, bool ingest);

  std::string pair_id_;
  detection::Scorer scorer_;
  preprocess::References refs_;
  StreamConfig config_;

  std::optional<Timestamp> last_t_;
  std::array<std::deque<double>, 4> raw_;
  std::deque<std::pair<Timestamp, double>> window_;
  double offset_ = 0.0;
  std::size_t ingested_ = 0;
  std::deque<std::array<double, kChannels>> rows_;

  Status status_ = Status::normal;
  std::size_t run_length_ = 0;
  Timestamp run_start_ = 0;
  Timestamp last_incident_t_ = 0;
  double run_peak_ = 0.0;
  double run_uncertainty_sum_ = 0.0;
  bool run_has_uncertainty_ = true;
  int next_event_id_ = 1;
  int active_event_ = 0;
};

/// {"t":...,"pair":...,"score":...,"status":...,"run_length":...,"opened":...,"closed":...}
std::string to_json_line(const StreamUpdate& update, const std::string& pair_id);

/// Samples of an aligned pair (speeds in mph, before smoothing).
std::vector<Sample> samples_from_pair(const preprocess::PairSeries& pair);

struct ReplayResult {
  std::vector<StreamUpdate> updates;
  std::vector<detection::DetectionEvent> events;
};

/// Pushes every sample, then finishes the stream.
ReplayResult replay(Stream& stream, std::span<const Sample> samples);

}  // namespace aidflow::stream
