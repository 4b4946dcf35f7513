#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aidflow/types.hpp"

namespace aidflow::preprocess {

class AlignmentError : public Error {
public:
  using Error::Error;
};

struct Options {
  std::int64_t grid_step_s = 30;
  std::int64_t max_interp_gap_s = 60;  // wider raw gaps become missing samples
  std::size_t ema_window = 5;
  double ema_alpha = 0.33;
  std::int64_t quality_window_s = 3600;
  double quality_k = 1.0;
  std::int64_t offset_window_s = 3600;
  std::int64_t offset_mask_margin_s = 1800;  // widening of reported incidents in the offset mask
  double ref_percentile = 95.0;
  double speed_clip = 1.5;
  std::size_t history_steps = 20;
  std::size_t stride = 1;

  void validate() const;
};

struct Interval {
  Timestamp begin = 0;
  Timestamp end = 0;  // inclusive
  bool contains(Timestamp t) const { return t >= begin && t <= end; }
};

// ---- alignment and lane aggregation -------------------------------------

struct Grid {
  Timestamp begin = 0;
  Timestamp end = 0;  // exclusive
  std::int64_t step_s = 30;
  std::size_t size() const { return end > begin ? static_cast<std::size_t>((end - begin + step_s - 1) / step_s) : 0; }
};

/// Resamples onto a uniform grid (the series' own span when `grid` is
/// empty). Each grid value is interpolated linearly between the bracketing
/// raw samples; queries outside the raw span take the nearest end value.
/// When the bracketing samples (or the nearest end sample) are further than
/// `max_gap_s` apart the grid value is NaN. Lane channels are dropped.
MeasurementSeries align_timestamps(const MeasurementSeries& series, std::int64_t grid_step_s,
                                   std::optional<Grid> grid = std::nullopt,
                                   std::int64_t max_gap_s = std::numeric_limits<std::int64_t>::max());

/// Volume-weighted lane average; plain mean when total volume is zero.
double aggregate_lanes(std::span<const double> speeds, std::span<const double> volumes);

/// Collapses lane channels into the aggregated ones (speed volume-weighted,
/// volume summed, occupancy averaged). No-op without lane data.
MeasurementSeries aggregate_series(const MeasurementSeries& series);

// ---- missing values -------------------------------------------------------

struct Neighbor {
  double milepost_km = 0.0;
  const MeasurementSeries* series = nullptr;
};

struct FillResult {
  MeasurementSeries series;
  std::size_t forward_filled = 0;
  std::size_t spatially_filled = 0;
};

/// Natural cubic spline through (x, y) evaluated at `at`; x strictly
/// increasing, at least two points. Outside the knots the end cubic is
/// extended.
double natural_cubic_spline(std::span<const double> x, std::span<const double> y, double at);

/// Forward-fills interior gaps. A missing first sample is filled by a natural
/// cubic spline over (milepost, value) of the neighbors that have data at
/// that instant; neighbors must share this series' grid.
FillResult fill_missing(const MeasurementSeries& series, double milepost_km, std::span<const Neighbor> neighbors);

// ---- smoothing ------------------------------------------------------------

/// Truncated EMA of `recent` (oldest first, newest last): sum of w_j x_{t-j}
/// over sum of w_j with w_j = (1 - alpha)^j.
double ema_point(std::span<const double> recent, double alpha);

std::vector<double> ema_smooth(std::span<const double> values, std::size_t window, double alpha);

/// Applies ema_smooth to speed, volume and occupancy.
MeasurementSeries ema_smooth(const MeasurementSeries& series, std::size_t window = 5, double alpha = 0.33);

// ---- quality filter -------------------------------------------------------

struct QualityStats {
  double mu_d = 0.0;
  double sigma_d = 0.0;
  std::int64_t window_span_s = 3600;
};

enum class QualityVerdict { pass, fail };

/// Mean absolute first difference.
double mean_abs_derivative(std::span<const double> window);

/// Population mean and standard deviation of the per-window
/// mean_abs_derivative.
QualityStats fit_quality_stats(std::span<const std::vector<double>> windows, std::int64_t window_span_s = 3600);

QualityVerdict quality_filter(std::span<const double> window, const QualityStats& stats, double k = 1.0);

/// Contiguous, time-aligned windows of a series: [first, last) index ranges
/// sharing floor(t / span).
struct WindowRange {
  Timestamp window_start = 0;
  std::size_t first = 0;
  std::size_t last = 0;
};
std::vector<WindowRange> split_windows(std::span<const Timestamp> timestamps, std::int64_t span_s);

// ---- upstream offset and normalization -------------------------------------

struct References {
  double ref_speed_up = 0.0;
  double ref_speed_down = 0.0;
};

struct PairSeries {
  std::string pair_id;
  MeasurementSeries upstream;
  MeasurementSeries downstream;
  std::vector<double> offset_applied;  // additive upstream correction per sample
  References refs;                     // zero until normalized
  bool normalized = false;
};

/// Upstream speed += trailing mean over (t - window, t] of
/// (downstream - upstream), skipping masked samples. A window with no
/// usable sample holds the previous offset (initially `initial_offset`).
PairSeries offset_upstream(const PairSeries& pair, std::int64_t window_s, std::span<const std::uint8_t> exclusion_mask,
                           double initial_offset = 0.0);

/// ref = percentile of each detector's speed over [from, to); needs at least
/// 24 h of samples.
References fit_references(const PairSeries& pair, Timestamp from, Timestamp to, double percentile = 95.0,
                          std::int64_t grid_step_s = 30);

/// Speeds divided by their reference and clipped to [0, clip]; occupancy
/// passes through.
PairSeries normalize(const PairSeries& pair, const References& refs, double clip = 1.5);
/// Fits references over the whole series, then normalizes.
PairSeries normalize(const PairSeries& pair, double percentile = 95.0, double clip = 1.5);

// ---- slicing --------------------------------------------------------------

/// Exclusion/label mask: 1 where the timestamp lies in any interval widened
/// by `margin_s` on both sides.
std::vector<std::uint8_t> interval_mask(std::span<const Timestamp> timestamps, std::span<const Interval> intervals,
                                        std::int64_t margin_s = 0);

/// Slice ending at sample `end_index` (needs end_index + 1 >= steps).
TimeSlice slice_at(const PairSeries& pair, std::size_t end_index, std::size_t steps);

/// One slice per sample index from steps - 1 onward at `stride`. Labels
/// come from interval membership of t_end.
std::vector<TimeSlice> make_slices(const PairSeries& pair, std::size_t steps, std::size_t stride,
                                   std::span<const Interval> reported = {},
                                   std::optional<std::span<const Interval>> truth = std::nullopt);

std::size_t slice_count(std::size_t length, std::size_t steps, std::size_t stride);

}  // namespace aidflow::preprocess
