#include "aidflow/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace aidflow::preprocess {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

}  // namespace

void Options::validate() const {
  if (grid_step_s <= 0) throw ConfigError("grid_step_s must be positive");
  if (max_interp_gap_s <= 0) throw ConfigError("max_interp_gap_s must be positive");
  if (ema_window < 1) throw ConfigError("ema_window must be >= 1");
  if (!(ema_alpha > 0.0 && ema_alpha < 1.0)) throw ConfigError("ema_alpha must lie in (0, 1)");
  if (quality_window_s <= 0) throw ConfigError("quality_window_s must be positive");
  if (quality_k < 0.0) throw ConfigError("quality_k must be >= 0");
  if (offset_window_s <= 0) throw ConfigError("offset_window_s must be positive");
  if (offset_mask_margin_s < 0) throw ConfigError("offset_mask_margin_s must be >= 0");
  if (!(ref_percentile > 0.0 && ref_percentile <= 100.0)) throw ConfigError("ref_percentile must lie in (0, 100]");
  if (!(speed_clip > 0.0)) throw ConfigError("speed_clip must be positive");
  if (history_steps < 1) throw ConfigError("history_steps must be >= 1");
  if (stride < 1) throw ConfigError("stride must be >= 1");
}

// ---- alignment and lane aggregation -------------------------------------

MeasurementSeries align_timestamps(const MeasurementSeries& series, std::int64_t grid_step_s, std::optional<Grid> grid,
                                   std::int64_t max_gap_s) {
  const std::size_t n = series.size();
  if (n < 2) throw AlignmentError("series '" + series.detector_id + "' needs at least two samples to align");
  if (grid_step_s <= 0) throw AlignmentError("grid step must be positive");
  for (std::size_t i = 1; i < n; ++i)
    if (series.timestamps[i] <= series.timestamps[i - 1])
      throw AlignmentError("timestamps of '" + series.detector_id + "' are not strictly increasing");

  Grid g = grid.value_or(Grid{series.timestamps.front(), series.timestamps.back() + 1, grid_step_s});
  g.step_s = grid_step_s;

  MeasurementSeries out;
  out.detector_id = series.detector_id;
  const std::size_t m = g.size();
  out.timestamps.resize(m);
  out.speed.assign(m, kNaN);
  out.volume.assign(m, kNaN);
  out.occupancy.assign(m, kNaN);

  const auto& ts = series.timestamps;
  for (std::size_t i = 0; i < m; ++i) {
    const Timestamp at = g.begin + static_cast<Timestamp>(i) * g.step_s;
    out.timestamps[i] = at;
    const auto it = std::lower_bound(ts.begin(), ts.end(), at);
    const auto k = static_cast<std::size_t>(it - ts.begin());
    auto copy_from = [&](std::size_t j) {
      out.speed[i] = series.speed[j];
      out.volume[i] = series.volume[j];
      out.occupancy[i] = series.occupancy[j];
    };
    if (k < n && ts[k] == at) {
      copy_from(k);
    } else if (k == 0) {
      if (ts[0] - at <= max_gap_s) copy_from(0);
    } else if (k == n) {
      if (at - ts[n - 1] <= max_gap_s) copy_from(n - 1);
    } else if (ts[k] - ts[k - 1] <= max_gap_s) {
      const double frac = static_cast<double>(at - ts[k - 1]) / static_cast<double>(ts[k] - ts[k - 1]);
      auto lerp = [frac](double a, double b) { return a + (b - a) * frac; };
      out.speed[i] = lerp(series.speed[k - 1], series.speed[k]);
      out.volume[i] = lerp(series.volume[k - 1], series.volume[k]);
      out.occupancy[i] = lerp(series.occupancy[k - 1], series.occupancy[k]);
    }
  }
  return out;
}

double aggregate_lanes(std::span<const double> speeds, std::span<const double> volumes) {
  if (speeds.empty()) throw Error("lane aggregation needs at least one lane");
  if (speeds.size() != volumes.size()) throw ShapeError("lane speed/volume count mismatch");
  double weighted = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < speeds.size(); ++i) {
    if (volumes[i] < 0.0) throw Error("negative lane volume");
    weighted += speeds[i] * volumes[i];
    total += volumes[i];
  }
  if (total > 0.0) return weighted / total;
  return std::accumulate(speeds.begin(), speeds.end(), 0.0) / static_cast<double>(speeds.size());
}

MeasurementSeries aggregate_series(const MeasurementSeries& series) {
  if (!series.has_lanes()) return series;
  MeasurementSeries out;
  out.detector_id = series.detector_id;
  out.timestamps = series.timestamps;
  const std::size_t lanes = series.lane_speed.size();
  const std::size_t n = series.size();
  out.speed.resize(n);
  out.volume.resize(n);
  out.occupancy.resize(n);
  std::vector<double> s(lanes), v(lanes);
  for (std::size_t i = 0; i < n; ++i) {
    double vol = 0.0, occ = 0.0;
    for (std::size_t l = 0; l < lanes; ++l) {
      s[l] = series.lane_speed[l][i];
      v[l] = series.lane_volume[l][i];
      vol += v[l];
      occ += series.lane_occupancy[l][i];
    }
    out.speed[i] = aggregate_lanes(s, v);
    out.volume[i] = vol;
    out.occupancy[i] = occ / static_cast<double>(lanes);
  }
  return out;
}

// ---- missing values -------------------------------------------------------

double natural_cubic_spline(std::span<const double> x, std::span<const double> y, double at) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw Error("spline needs at least two knots");
  for (std::size_t i = 1; i < n; ++i)
    if (!(x[i] > x[i - 1])) throw Error("spline knots must be strictly increasing");

  // Second derivatives with M_0 = M_{n-1} = 0 (Thomas algorithm).
  std::vector<double> m(n, 0.0);
  if (n > 2) {
    std::vector<double> diag(n - 2), upper(n - 2), rhs(n - 2);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double h0 = x[i] - x[i - 1];
      const double h1 = x[i + 1] - x[i];
      diag[i - 1] = 2.0 * (h0 + h1);
      upper[i - 1] = h1;
      rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
    }
    for (std::size_t i = 1; i < n - 2; ++i) {
      const double lower = x[i + 1] - x[i];
      const double w = lower / diag[i - 1];
      diag[i] -= w * upper[i - 1];
      rhs[i] -= w * rhs[i - 1];
    }
    m[n - 2] = rhs[n - 3] / diag[n - 3];
    for (std::size_t i = n - 3; i-- > 0;) m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
  }

  std::size_t i = 0;
  while (i + 2 < n && at > x[i + 1]) ++i;
  const double h = x[i + 1] - x[i];
  const double a = x[i + 1] - at;
  const double b = at - x[i];
  return m[i] * a * a * a / (6.0 * h) + m[i + 1] * b * b * b / (6.0 * h) + (y[i] / h - m[i] * h / 6.0) * a +
         (y[i + 1] / h - m[i + 1] * h / 6.0) * b;
}

FillResult fill_missing(const MeasurementSeries& series, double milepost_km, std::span<const Neighbor> neighbors) {
  FillResult result{series, 0, 0};
  MeasurementSeries& out = result.series;
  const std::size_t n = out.size();
  if (n == 0) return result;

  std::vector<double>* channels[] = {&out.speed, &out.volume, &out.occupancy};
  const bool first_missing = std::isnan(out.speed[0]) || std::isnan(out.volume[0]) || std::isnan(out.occupancy[0]);
  if (first_missing) {
    for (std::size_t c = 0; c < 3; ++c) {
      auto& values = *channels[c];
      if (!std::isnan(values[0])) continue;
      std::vector<std::pair<double, double>> knots;
      for (const auto& nb : neighbors) {
        if (nb.series == nullptr || nb.series->size() == 0) continue;
        if (nb.series->timestamps.front() != out.timestamps.front())
          throw AlignmentError("neighbor '" + nb.series->detector_id + "' is not on the same grid");
        const std::vector<double>* src[] = {&nb.series->speed, &nb.series->volume, &nb.series->occupancy};
        const double v = (*src[c])[0];
        if (std::isnan(v)) continue;
        knots.emplace_back(nb.milepost_km, v);
      }
      std::sort(knots.begin(), knots.end());
      knots.erase(std::unique(knots.begin(), knots.end(),
                              [](const auto& a, const auto& b) { return a.first == b.first; }),
                  knots.end());
      if (knots.size() < 2)
        throw Error("cannot fill first sample of '" + series.detector_id + "': fewer than two neighbors have data");
      std::vector<double> xs, ys;
      for (const auto& [x, y] : knots) {
        xs.push_back(x);
        ys.push_back(y);
      }
      values[0] = natural_cubic_spline(xs, ys, milepost_km);
    }
    out.speed[0] = std::max(0.0, out.speed[0]);
    out.volume[0] = std::max(0.0, out.volume[0]);
    out.occupancy[0] = std::clamp(out.occupancy[0], 0.0, 1.0);
    ++result.spatially_filled;
  }

  for (std::size_t i = 1; i < n; ++i) {
    bool filled = false;
    for (auto* values : channels) {
      if (std::isnan((*values)[i])) {
        (*values)[i] = (*values)[i - 1];
        filled = true;
      }
    }
    if (filled) ++result.forward_filled;
  }
  return result;
}

// ---- smoothing ------------------------------------------------------------

double ema_point(std::span<const double> recent, double alpha) {
  const double decay = 1.0 - alpha;
  double w = 1.0;
  double num = 0.0;
  double den = 0.0;
  for (std::size_t j = 0; j < recent.size(); ++j) {
    num += w * recent[recent.size() - 1 - j];
    den += w;
    w *= decay;
  }
  return num / den;
}

std::vector<double> ema_smooth(std::span<const double> values, std::size_t window, double alpha) {
  if (window < 1) throw Error("EMA window must be >= 1");
  std::vector<double> out(values.size());
  for (std::size_t t = 0; t < values.size(); ++t) {
    const std::size_t first = t + 1 >= window ? t + 1 - window : 0;
    out[t] = ema_point(values.subspan(first, t + 1 - first), alpha);
  }
  return out;
}

MeasurementSeries ema_smooth(const MeasurementSeries& series, std::size_t window, double alpha) {
  MeasurementSeries out;
  out.detector_id = series.detector_id;
  out.timestamps = series.timestamps;
  out.speed = ema_smooth(series.speed, window, alpha);
  out.volume = ema_smooth(series.volume, window, alpha);
  out.occupancy = ema_smooth(series.occupancy, window, alpha);
  return out;
}

// ---- quality filter -------------------------------------------------------

double mean_abs_derivative(std::span<const double> window) {
  if (window.size() < 2) throw Error("quality window needs at least two samples");
  double sum = 0.0;
  for (std::size_t i = 1; i < window.size(); ++i) sum += std::abs(window[i] - window[i - 1]);
  return sum / static_cast<double>(window.size() - 1);
}

QualityStats fit_quality_stats(std::span<const std::vector<double>> windows, std::int64_t window_span_s) {
  if (windows.size() < 2) throw Error("quality statistics need at least two windows");
  std::vector<double> d;
  d.reserve(windows.size());
  for (const auto& w : windows) d.push_back(mean_abs_derivative(w));
  const double m = static_cast<double>(d.size());
  const double mu = std::accumulate(d.begin(), d.end(), 0.0) / m;
  double var = 0.0;
  for (double x : d) var += (x - mu) * (x - mu);
  return {mu, std::sqrt(var / m), window_span_s};
}

QualityVerdict quality_filter(std::span<const double> window, const QualityStats& stats, double k) {
  const double d = mean_abs_derivative(window);
  if (std::isnan(d)) return QualityVerdict::fail;
  return (d >= stats.mu_d - k * stats.sigma_d && d <= stats.mu_d + k * stats.sigma_d) ? QualityVerdict::pass
                                                                                      : QualityVerdict::fail;
}

std::vector<WindowRange> split_windows(std::span<const Timestamp> timestamps, std::int64_t span_s) {
  std::vector<WindowRange> out;
  for (std::size_t i = 0; i < timestamps.size();) {
    const std::int64_t key = floor_div(timestamps[i], span_s);
    std::size_t j = i + 1;
    while (j < timestamps.size() && floor_div(timestamps[j], span_s) == key) ++j;
    out.push_back({key * span_s, i, j});
    i = j;
  }
  return out;
}

// ---- upstream offset and normalization -------------------------------------

PairSeries offset_upstream(const PairSeries& pair, std::int64_t window_s, std::span<const std::uint8_t> exclusion_mask,
                           double initial_offset) {
  const std::size_t n = pair.upstream.size();
  if (pair.downstream.size() != n || pair.downstream.timestamps != pair.upstream.timestamps)
    throw AlignmentError("pair '" + pair.pair_id + "' is not aligned");
  if (!exclusion_mask.empty() && exclusion_mask.size() != n) throw ShapeError("exclusion mask length mismatch");

  PairSeries out = pair;
  if (out.offset_applied.size() != n) out.offset_applied.assign(n, 0.0);
  const auto& ts = pair.upstream.timestamps;
  const auto& up = pair.upstream.speed;
  const auto& down = pair.downstream.speed;

  double offset = initial_offset;
  std::size_t lo = 0;
  for (std::size_t t = 0; t < n; ++t) {
    while (ts[lo] <= ts[t] - window_s) ++lo;
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t u = lo; u <= t; ++u) {
      if (!exclusion_mask.empty() && exclusion_mask[u]) continue;
      sum += down[u] - up[u];
      ++count;
    }
    if (count > 0) offset = sum / static_cast<double>(count);
    out.upstream.speed[t] = up[t] + offset;
    out.offset_applied[t] += offset;
  }
  return out;
}

References fit_references(const PairSeries& pair, Timestamp from, Timestamp to, double percentile,
                          std::int64_t grid_step_s) {
  auto fit = [&](const MeasurementSeries& s) {
    std::vector<double> values;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s.timestamps[i] >= from && s.timestamps[i] < to && !std::isnan(s.speed[i])) values.push_back(s.speed[i]);
    if (static_cast<std::int64_t>(values.size()) * grid_step_s < 86400)
      throw Error("reference estimation for '" + s.detector_id + "' needs at least 24 h of data");
    const double ref = quantile_inclusive(values, percentile / 100.0);
    if (!(ref > 0.0)) throw Error("non-positive reference speed for '" + s.detector_id + "'");
    return ref;
  };
  return {fit(pair.upstream), fit(pair.downstream)};
}

PairSeries normalize(const PairSeries& pair, const References& refs, double clip) {
  if (!(refs.ref_speed_up > 0.0) || !(refs.ref_speed_down > 0.0)) throw Error("reference speeds must be positive");
  PairSeries out = pair;
  for (auto& v : out.upstream.speed) v = std::clamp(v / refs.ref_speed_up, 0.0, clip);
  for (auto& v : out.downstream.speed) v = std::clamp(v / refs.ref_speed_down, 0.0, clip);
  out.refs = refs;
  out.normalized = true;
  return out;
}

PairSeries normalize(const PairSeries& pair, double percentile, double clip) {
  if (pair.upstream.size() == 0) throw Error("cannot normalize an empty pair");
  const auto& ts = pair.upstream.timestamps;
  const std::int64_t step = ts.size() > 1 ? ts[1] - ts[0] : 30;
  return normalize(pair, fit_references(pair, ts.front(), ts.back() + 1, percentile, step), clip);
}

// ---- slicing --------------------------------------------------------------

std::vector<std::uint8_t> interval_mask(std::span<const Timestamp> timestamps, std::span<const Interval> intervals,
                                        std::int64_t margin_s) {
  std::vector<std::uint8_t> mask(timestamps.size(), 0);
  for (const auto& iv : intervals) {
    const Timestamp lo = iv.begin - margin_s;
    const Timestamp hi = iv.end + margin_s;
    auto first = std::lower_bound(timestamps.begin(), timestamps.end(), lo);
    for (auto it = first; it != timestamps.end() && *it <= hi; ++it) mask[static_cast<std::size_t>(it - timestamps.begin())] = 1;
  }
  return mask;
}

TimeSlice slice_at(const PairSeries& pair, std::size_t end_index, std::size_t steps) {
  if (end_index + 1 < steps || end_index >= pair.upstream.size()) throw ShapeError("slice window out of range");
  TimeSlice s;
  s.pair_id = pair.pair_id;
  s.t_end = pair.upstream.timestamps[end_index];
  s.steps = steps;
  s.channels.resize(steps * kChannels);
  const std::size_t first = end_index + 1 - steps;
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t i = first + k;
    double* row = &s.channels[k * kChannels];
    row[kUpSpeed] = pair.upstream.speed[i];
    row[kDownSpeed] = pair.downstream.speed[i];
    row[kUpOccupancy] = pair.upstream.occupancy[i];
    row[kDownOccupancy] = pair.downstream.occupancy[i];
    row[kRelativeSpeed] = pair.downstream.speed[i] - pair.upstream.speed[i];
  }
  return s;
}

std::size_t slice_count(std::size_t length, std::size_t steps, std::size_t stride) {
  if (steps == 0 || stride == 0 || length < steps) return 0;
  return (length - steps) / stride + 1;
}

std::vector<TimeSlice> make_slices(const PairSeries& pair, std::size_t steps, std::size_t stride,
                                   std::span<const Interval> reported, std::optional<std::span<const Interval>> truth) {
  if (steps == 0 || stride == 0) throw Error("slice steps and stride must be positive");
  std::vector<TimeSlice> out;
  const std::size_t n = pair.upstream.size();
  if (pair.downstream.size() != n) throw AlignmentError("pair '" + pair.pair_id + "' is not aligned");
  out.reserve(slice_count(n, steps, stride));
  auto covered = [](std::span<const Interval> ivs, Timestamp t) {
    return std::any_of(ivs.begin(), ivs.end(), [t](const Interval& iv) { return iv.contains(t); });
  };
  for (std::size_t i = steps - 1; i < n; i += stride) {
    TimeSlice s = slice_at(pair, i, steps);
    if (!std::all_of(s.channels.begin(), s.channels.end(), [](double v) { return std::isfinite(v); })) continue;
    s.reported_label = covered(reported, s.t_end) ? 1 : 0;
    if (truth) s.true_label = covered(*truth, s.t_end) ? 1 : 0;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace aidflow::preprocess
