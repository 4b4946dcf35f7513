#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "aidflow/types.hpp"

namespace aidflow::synthgen {

inline constexpr std::int64_t kSampleSeconds = 30;
inline constexpr Timestamp kDefaultStart = 1546300800;  // 2019-01-01T00:00:00Z

struct SynthConfig {
  int days = 14;
  int detector_pairs = 8;
  double incident_rate = 1.0;            // expected incidents per pair per day
  double report_time_jitter_min = 15.0;  // reported start/duration shift bound
  // separation, strong_separation, one_sided_drop, double_sided_drop
  std::array<double, 4> template_mix{0.3, 0.25, 0.25, 0.2};
  double noise_std = 0.03;      // normalized units (fraction of free-flow speed)
  double missing_rate = 0.001;  // probability that a sample row is dropped
  std::uint64_t seed = 7;
  Timestamp start = kDefaultStart;

  void validate() const;
};

struct Corpus {
  std::vector<DetectorMeta> detectors;
  std::vector<MeasurementSeries> series;  // one per detector, same order
  std::vector<IncidentRecord> incidents;  // sorted by (pair, start)

  Timestamp begin = 0;  // first grid instant
  Timestamp end = 0;    // one past the last grid instant
};

/// Deterministic in the config. Every pair draws its base signal, noise,
/// incidents and dropouts from independent sub-streams of (seed, pair), so
/// changing incident_rate leaves the incident-free signal untouched.
Corpus generate_corpus(const SynthConfig& config);

/// Flat-lines round(fraction * N) of the N detector-hours (aligned to
/// `window_s`) present in `series`: every channel of a chosen window takes
/// the window's first value.
std::vector<MeasurementSeries> corrupt_quality(std::vector<MeasurementSeries> series, double fraction,
                                               std::uint64_t seed = 0, std::int64_t window_s = 3600);

}  // namespace aidflow::synthgen
