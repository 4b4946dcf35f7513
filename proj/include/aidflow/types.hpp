#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "aidflow/common.hpp"

namespace aidflow {

enum class Direction { east, west };

struct DetectorMeta {
  std::string detector_id;
  double milepost_km = 0.0;
  int lane_count = 1;
  Direction direction = Direction::east;
};

/// Samples of one detector. Aggregated channels are always present; the
/// per-lane channels are filled only when lane-level data exists
/// (indexed [lane][sample]). A missing sample is NaN in the aggregated
/// channels.
struct MeasurementSeries {
  std::string detector_id;
  std::vector<Timestamp> timestamps;
  std::vector<double> speed;      // mph
  std::vector<double> volume;     // vehicles per interval
  std::vector<double> occupancy;  // fraction in [0, 1]
  std::vector<std::vector<double>> lane_speed;
  std::vector<std::vector<double>> lane_volume;
  std::vector<std::vector<double>> lane_occupancy;

  std::size_t size() const { return timestamps.size(); }
  bool has_lanes() const { return !lane_speed.empty(); }
};

enum class IncidentTemplate { separation, strong_separation, one_sided_drop, double_sided_drop };

std::string to_string(IncidentTemplate t);
IncidentTemplate incident_template_from_string(std::string_view s);
std::string to_string(Direction d);
Direction direction_from_string(std::string_view s);

struct IncidentRecord {
  int id = 0;
  std::string pair_id;
  Timestamp start = 0;
  std::int64_t duration_s = 0;
  IncidentTemplate kind = IncidentTemplate::separation;
  Timestamp reported_start = 0;
  std::int64_t reported_duration_s = 0;

  Timestamp end() const { return start + duration_s; }
  Timestamp reported_end() const { return reported_start + reported_duration_s; }
};

/// Upstream/downstream detector pairing used throughout the pipeline.
struct DetectorPair {
  std::string pair_id;
  std::string upstream_id;
  std::string downstream_id;
};

/// Consecutive, disjoint pairs along each direction in traffic order:
/// eastbound sorts by ascending milepost, westbound by descending. The
/// first detector of each pair is upstream. pair_id is "<up>-<down>".
std::vector<DetectorPair> form_pairs(const std::vector<DetectorMeta>& detectors);

inline constexpr std::size_t kChannels = 5;

enum Channel : std::size_t {
  kUpSpeed = 0,
  kDownSpeed = 1,
  kUpOccupancy = 2,
  kDownOccupancy = 3,
  kRelativeSpeed = 4,  // downstream minus offset-corrected upstream
};

/// One classification instance: `steps` x kChannels normalized values,
/// oldest step first, row-major by step.
struct TimeSlice {
  std::string pair_id;
  Timestamp t_end = 0;
  std::size_t steps = 0;
  std::vector<double> channels;
  int reported_label = -1;  // -1 = unknown
  std::optional<double> prob_label;
  std::optional<int> true_label;

  double at(std::size_t step, std::size_t channel) const { return channels[step * kChannels + channel]; }
};

}  // namespace aidflow
