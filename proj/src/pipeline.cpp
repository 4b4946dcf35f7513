#include "aidflow/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <unordered_map>

#include "aidflow/io.hpp"

namespace aidflow::pipeline {

namespace {

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

std::vector<preprocess::Interval> reported_intervals(std::span<const IncidentRecord> incidents, const std::string& pair) {
  std::vector<preprocess::Interval> out;
  for (const IncidentRecord& r : incidents)
    if (r.pair_id == pair) out.push_back({r.reported_start, r.reported_end()});
  return out;
}

std::vector<preprocess::Interval> true_intervals(std::span<const IncidentRecord> incidents, const std::string& pair) {
  std::vector<preprocess::Interval> out;
  for (const IncidentRecord& r : incidents)
    if (r.pair_id == pair) out.push_back({r.start, r.end()});
  return out;
}

std::size_t grid_index(const preprocess::Grid& grid, Timestamp t) {
  return static_cast<std::size_t>((t - grid.begin) / grid.step_s);
}

}  // namespace

void DatasetConfig::validate() const {
  if (train_days < 1) throw ConfigError("train_days must be >= 1");
  if (val_days < 1) throw ConfigError("val_days must be >= 1");
  if (context_margin_s < 0) throw ConfigError("context_margin_s must be >= 0");
  if (background_stride < 1) throw ConfigError("background_stride must be >= 1");
  if (detection_warmup_s < 0) throw ConfigError("detection_warmup_s must be >= 0");
  if (label_source != "weak" && label_source != "reported")
    throw ConfigError("label_source must be 'weak' or 'reported'");
}

RawCorpus from_synthetic(const synthgen::Corpus& corpus) {
  return RawCorpus{corpus.detectors, corpus.series, corpus.incidents};
}

void write_corpus(const std::filesystem::path& dir, const RawCorpus& corpus) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "detectors.csv", io::detectors_csv(corpus.detectors));
  write_file_atomic(dir / "measurements.csv", io::measurements_csv(corpus.detectors, corpus.series));
  write_file_atomic(dir / "incidents.csv", io::incidents_csv(corpus.incidents));
}

RawCorpus read_corpus(const std::filesystem::path& dir) {
  RawCorpus c;
  c.detectors = io::parse_detectors_csv(read_file(dir / "detectors.csv"));
  c.series = io::parse_measurements_csv(read_file(dir / "measurements.csv"), c.detectors);
  if (std::filesystem::exists(dir / "incidents.csv")) c.incidents = io::parse_incidents_csv(read_file(dir / "incidents.csv"));
  return c;
}

SplitBounds split_bounds(const preprocess::Grid& grid, const DatasetConfig& config) {
  SplitBounds b;
  b.begin = grid.begin;
  b.end = grid.begin + static_cast<Timestamp>(grid.size()) * grid.step_s;
  b.train_end = grid.begin + static_cast<Timestamp>(config.train_days) * 86400;
  b.val_end = b.train_end + static_cast<Timestamp>(config.val_days) * 86400;
  if (b.val_end >= b.end) throw ConfigError("train_days + val_days leave no test period");
  return b;
}

Prepared prepare(const RawCorpus& corpus, const preprocess::Options& options, const DatasetConfig& config) {
  options.validate();
  config.validate();
  const std::size_t nd = corpus.detectors.size();
  if (corpus.series.size() != nd) throw ShapeError("one series per detector expected");
  if (nd < 2) throw Error("need at least two detectors");

  Prepared out;
  const std::int64_t step = options.grid_step_s;
  Timestamp first = std::numeric_limits<Timestamp>::max();
  Timestamp last = std::numeric_limits<Timestamp>::min();
  for (const auto& s : corpus.series) {
    if (s.size() == 0) throw Error("detector '" + s.detector_id + "' has no samples");
    first = std::min(first, s.timestamps.front());
    last = std::max(last, s.timestamps.back());
  }
  out.grid = preprocess::Grid{floor_div(first, step) * step, (floor_div(last, step) + 1) * step, step};
  const SplitBounds bounds = split_bounds(out.grid, config);

  std::vector<MeasurementSeries> aligned(nd);
  const auto ind = static_cast<std::ptrdiff_t>(nd);
  std::vector<std::exception_ptr> errors(nd);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ii = 0; ii < ind; ++ii) {
    const auto d = static_cast<std::size_t>(ii);
    try {
      aligned[d] = preprocess::align_timestamps(preprocess::aggregate_series(corpus.series[d]), step, out.grid,
                                                options.max_interp_gap_s);
    } catch (...) {
      errors[d] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<MeasurementSeries> filled(nd), smoothed(nd);
  for (std::size_t d = 0; d < nd; ++d) {
    std::vector<preprocess::Neighbor> nbs;
    for (std::size_t o = 0; o < nd; ++o) {
      if (o == d || corpus.detectors[o].direction != corpus.detectors[d].direction) continue;
      nbs.push_back({corpus.detectors[o].milepost_km, &aligned[o]});
    }
    preprocess::FillResult fr = preprocess::fill_missing(aligned[d], corpus.detectors[d].milepost_km, nbs);
    out.quality.forward_filled += fr.forward_filled;
    out.quality.spatially_filled += fr.spatially_filled;
    filled[d] = std::move(fr.series);
    smoothed[d] = preprocess::ema_smooth(filled[d], options.ema_window, options.ema_alpha);
  }

  // Quality statistics from the training days of every detector.
  std::vector<std::vector<preprocess::WindowRange>> windows(nd);
  std::vector<std::vector<double>> training_windows;
  for (std::size_t d = 0; d < nd; ++d) {
    windows[d] = preprocess::split_windows(smoothed[d].timestamps, options.quality_window_s);
    for (const auto& w : windows[d]) {
      if (w.last - w.first < 2) continue;
      if (w.window_start + options.quality_window_s > bounds.train_end) continue;
      training_windows.emplace_back(smoothed[d].speed.begin() + static_cast<std::ptrdiff_t>(w.first),
                                    smoothed[d].speed.begin() + static_cast<std::ptrdiff_t>(w.last));
    }
  }
  out.quality.stats = preprocess::fit_quality_stats(training_windows, options.quality_window_s);
  std::vector<std::vector<std::uint8_t>> bad(nd);
  for (std::size_t d = 0; d < nd; ++d) {
    bad[d].assign(smoothed[d].size(), 0);
    for (const auto& w : windows[d]) {
      if (w.last - w.first < 2) continue;
      ++out.quality.windows;
      const std::span<const double> values(smoothed[d].speed.data() + w.first, w.last - w.first);
      if (preprocess::quality_filter(values, out.quality.stats, options.quality_k) == preprocess::QualityVerdict::fail) {
        ++out.quality.failed_windows;
        std::fill(bad[d].begin() + static_cast<std::ptrdiff_t>(w.first), bad[d].begin() + static_cast<std::ptrdiff_t>(w.last), 1);
      }
    }
  }

  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t d = 0; d < nd; ++d) index.emplace(corpus.detectors[d].detector_id, d);
  for (const DetectorPair& p : form_pairs(corpus.detectors)) {
    const std::size_t u = index.at(p.upstream_id);
    const std::size_t w = index.at(p.downstream_id);
    PreparedPair pp;
    pp.ids = p;
    pp.filled.pair_id = p.pair_id;
    pp.filled.upstream = filled[u];
    pp.filled.downstream = filled[w];
    pp.smoothed.pair_id = p.pair_id;
    pp.smoothed.upstream = smoothed[u];
    pp.smoothed.downstream = smoothed[w];
    pp.bad.resize(smoothed[u].size());
    for (std::size_t i = 0; i < pp.bad.size(); ++i) pp.bad[i] = bad[u][i] | bad[w][i];
    out.pairs.push_back(std::move(pp));
  }
  return out;
}

Dataset build_dataset(const Prepared& prepared, std::span<const IncidentRecord> incidents,
                      const preprocess::Options& options, const DatasetConfig& config) {
  options.validate();
  config.validate();
  const SplitBounds bounds = split_bounds(prepared.grid, config);
  const std::size_t np = prepared.pairs.size();
  const std::size_t H = options.history_steps;
  struct PerPair {
    std::vector<TimeSlice> train, val, test;
    preprocess::References refs;
  };
  std::vector<PerPair> parts(np);
  std::vector<std::exception_ptr> errors(np);
  const auto inp = static_cast<std::ptrdiff_t>(np);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ii = 0; ii < inp; ++ii) {
    const auto k = static_cast<std::size_t>(ii);
    try {
      const PreparedPair& pp = prepared.pairs[k];
      const auto& ts = pp.smoothed.upstream.timestamps;
      const std::vector<preprocess::Interval> reported = reported_intervals(incidents, pp.ids.pair_id);
      const std::vector<preprocess::Interval> truth = true_intervals(incidents, pp.ids.pair_id);
      const auto mask = preprocess::interval_mask(ts, reported, options.offset_mask_margin_s);
      const auto corrected = preprocess::offset_upstream(pp.smoothed, options.offset_window_s, mask);
      PerPair& out = parts[k];
      out.refs = preprocess::fit_references(corrected, bounds.begin, bounds.train_end, options.ref_percentile,
                                            options.grid_step_s);
      const auto norm = preprocess::normalize(corrected, out.refs, options.speed_clip);
      const auto context = preprocess::interval_mask(ts, reported, config.context_margin_s);
      std::vector<std::size_t> bad_prefix(pp.bad.size() + 1, 0);
      for (std::size_t i = 0; i < pp.bad.size(); ++i) bad_prefix[i + 1] = bad_prefix[i] + pp.bad[i];

      for (TimeSlice& s : preprocess::make_slices(norm, H, 1, reported, truth)) {
        const std::size_t idx = grid_index(prepared.grid, s.t_end);
        if (bad_prefix[idx + 1] - bad_prefix[idx + 1 - H] > 0) continue;
        const bool keep = context[idx] ? idx % options.stride == 0 : idx % config.background_stride == 0;
        if (!keep) continue;
        if (s.t_end < bounds.train_end) {
          out.train.push_back(std::move(s));
        } else if (s.t_end < bounds.val_end) {
          out.val.push_back(std::move(s));
        } else {
          out.test.push_back(std::move(s));
        }
      }
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  Dataset ds;
  for (std::size_t k = 0; k < np; ++k) {
    auto move_into = [](std::vector<TimeSlice>& dst, std::vector<TimeSlice>& src) {
      dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end()));
    };
    move_into(ds.train, parts[k].train);
    move_into(ds.val, parts[k].val);
    move_into(ds.test, parts[k].test);
    ds.references.emplace_back(prepared.pairs[k].ids.pair_id, parts[k].refs);
  }
  return ds;
}

preprocess::PairSeries subseries(const preprocess::PairSeries& pair, Timestamp from, Timestamp to) {
  const auto& ts = pair.upstream.timestamps;
  const auto lo = static_cast<std::size_t>(std::lower_bound(ts.begin(), ts.end(), from) - ts.begin());
  const auto hi = static_cast<std::size_t>(std::lower_bound(ts.begin(), ts.end(), to) - ts.begin());
  auto cut = [lo, hi](const MeasurementSeries& s) {
    MeasurementSeries o;
    o.detector_id = s.detector_id;
    auto range = [lo, hi](const std::vector<double>& v) {
      return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(lo), v.begin() + static_cast<std::ptrdiff_t>(hi));
    };
    o.timestamps.assign(s.timestamps.begin() + static_cast<std::ptrdiff_t>(lo),
                        s.timestamps.begin() + static_cast<std::ptrdiff_t>(hi));
    o.speed = range(s.speed);
    o.volume = range(s.volume);
    o.occupancy = range(s.occupancy);
    return o;
  };
  preprocess::PairSeries out;
  out.pair_id = pair.pair_id;
  out.upstream = cut(pair.upstream);
  out.downstream = cut(pair.downstream);
  if (!pair.offset_applied.empty()) {
    out.offset_applied.assign(pair.offset_applied.begin() + static_cast<std::ptrdiff_t>(lo),
                              pair.offset_applied.begin() + static_cast<std::ptrdiff_t>(hi));
  }
  out.refs = pair.refs;
  out.normalized = pair.normalized;
  return out;
}

const preprocess::References& find_references(
    std::span<const std::pair<std::string, preprocess::References>> references, const std::string& pair_id) {
  for (const auto& [id, r] : references)
    if (id == pair_id) return r;
  throw Error("no normalization references for pair '" + pair_id + "'");
}

TestDetection detect_period(const Prepared& prepared,
                            std::span<const std::pair<std::string, preprocess::References>> references,
                            std::span<const IncidentRecord> incidents, const detection::Scorer& scorer,
                            const detection::DetectionConfig& detection_config, const preprocess::Options& options,
                            const DatasetConfig& config, Timestamp from) {
  const std::size_t np = prepared.pairs.size();
  TestDetection out;
  out.per_pair.resize(np);
  std::vector<std::exception_ptr> errors(np);
  const Timestamp end = prepared.grid.begin + static_cast<Timestamp>(prepared.grid.size()) * prepared.grid.step_s;
  detection::OfflineOptions oo;
  oo.history_steps = options.history_steps;
  oo.offset_window_s = options.offset_window_s;
  oo.speed_clip = options.speed_clip;
  const auto inp = static_cast<std::ptrdiff_t>(np);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ii = 0; ii < inp; ++ii) {
    const auto k = static_cast<std::size_t>(ii);
    try {
      const PreparedPair& pp = prepared.pairs[k];
      const auto sub = subseries(pp.smoothed, from - config.detection_warmup_s, end);
      out.per_pair[k] =
          detection::detect_offline(sub, find_references(references, pp.ids.pair_id), scorer, detection_config, oo);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (std::size_t k = 0; k < np; ++k) {
    for (const auto& e : out.per_pair[k].events)
      if (e.end >= from) out.events.push_back(e);
    for (const IncidentRecord& r : incidents) {
      if (r.pair_id == prepared.pairs[k].ids.pair_id && r.end() >= from && r.start < end)
        out.truth.push_back({r.pair_id, r.start, r.end()});
    }
  }
  out.report = detection::match_events(out.events, out.truth, detection_config.match_tolerance_s);
  return out;
}

}  // namespace aidflow::pipeline
