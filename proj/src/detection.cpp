#include "aidflow/detection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>

namespace aidflow::detection {

namespace {

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string fixed_or_undefined(const std::optional<double>& v) { return v ? fixed(*v) : "undefined"; }

bool finite_slice(const TimeSlice& s) {
  return std::all_of(s.channels.begin(), s.channels.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace

void DetectionConfig::validate() const {
  if (!(prob_threshold >= 0.0 && prob_threshold < 1.0)) throw ConfigError("prob_threshold must be in [0, 1)");
  if (!(free_flow_cut > 0.0) || !std::isfinite(free_flow_cut)) throw ConfigError("free_flow_cut must be > 0");
  if (consecutive_threshold < 1) throw ConfigError("consecutive_threshold must be >= 1");
  if (!strict && consecutive_threshold < 2)
    throw ConfigError("an inclusive consecutive_threshold must be >= 2 so that no event opens on a single slice");
  if (match_tolerance_s < 0) throw ConfigError("match_tolerance_s must be >= 0");
}

// ---- scorer -------------------------------------------------------------------

Scorer Scorer::from_model(const classifier::TrainedModel& model) {
  return Scorer([&model](const TimeSlice& s) { return Score{classifier::forward(model, s), std::nullopt}; },
                model.config.seq_len);
}

Scorer Scorer::from_ensemble(const ensemble::Ensemble& ens, bool use_quantile) {
  if (ens.members.empty()) throw Error("empty ensemble");
  return Scorer(
      [&ens, use_quantile](const TimeSlice& s) {
        const ensemble::EnsemblePrediction p = ensemble::predict(ens, s);
        return Score{use_quantile ? p.quantile_75 : p.mean, p.variance};
      },
      ens.config().seq_len);
}

Scorer Scorer::from_function(Function fn, std::size_t seq_len) { return Scorer(std::move(fn), seq_len); }

std::vector<Score> Scorer::score_batch(std::span<const TimeSlice> slices) const {
  std::vector<Score> out(slices.size());
  const auto n = static_cast<std::ptrdiff_t>(slices.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = fn_(slices[static_cast<std::size_t>(i)]);
  return out;
}

// ---- classification and filters ---------------------------------------------------

std::vector<std::uint8_t> classify(std::span<const double> scores, double threshold) {
  std::vector<std::uint8_t> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] > threshold ? 1 : 0;
  return out;
}

SeriesScores classify_series(const Scorer& scorer, std::span<const TimeSlice> slices, const DetectionConfig& config) {
  for (std::size_t i = 1; i < slices.size(); ++i) {
    if (slices[i].t_end <= slices[i - 1].t_end)
      throw Error("classify_series: slices out of time order at index " + std::to_string(i));
  }
  const std::vector<Score> raw = scorer.score_batch(slices);
  SeriesScores out;
  out.scores.reserve(raw.size());
  out.uncertainty.reserve(raw.size());
  for (const Score& s : raw) {
    out.scores.push_back(s.value);
    out.uncertainty.push_back(s.uncertainty);
  }
  out.flags = classify(out.scores, config.prob_threshold);
  return out;
}

bool free_flowing(const TimeSlice& slice, double cut) {
  if (slice.steps == 0) return false;
  const std::size_t last = slice.steps - 1;
  return slice.at(last, kUpSpeed) > cut && slice.at(last, kDownSpeed) > cut;
}

std::vector<std::uint8_t> free_flow_filter(std::span<const std::uint8_t> flags, std::span<const TimeSlice> slices,
                                           double cut) {
  if (flags.size() != slices.size()) throw ShapeError("flags and slices differ in length");
  std::vector<std::uint8_t> out(flags.begin(), flags.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] && free_flowing(slices[i], cut)) out[i] = 0;
  }
  return out;
}

std::vector<DetectionEvent> extract_events(std::span<const std::uint8_t> flags, std::span<const TimeSlice> slices,
                                           const DetectionConfig& config, std::span<const double> scores,
                                           std::span<const std::optional<double>> uncertainty) {
  if (flags.size() != slices.size()) throw ShapeError("flags and slices differ in length");
  if (!scores.empty() && scores.size() != flags.size()) throw ShapeError("scores and flags differ in length");
  if (!uncertainty.empty() && uncertainty.size() != flags.size())
    throw ShapeError("uncertainty and flags differ in length");
  std::vector<DetectionEvent> events;
  std::size_t i = 0;
  while (i < flags.size()) {
    if (!flags[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < flags.size() && flags[j]) ++j;
    if (config.run_is_event(j - i)) {
      DetectionEvent e;
      e.pair_id = slices[i].pair_id;
      e.start = slices[i].t_end;
      e.end = slices[j - 1].t_end;
      if (!scores.empty()) e.peak_prob = *std::max_element(scores.begin() + static_cast<std::ptrdiff_t>(i),
                                                           scores.begin() + static_cast<std::ptrdiff_t>(j));
      if (!uncertainty.empty()) {
        double sum = 0.0;
        bool all = true;
        for (std::size_t k = i; k < j; ++k) {
          if (!uncertainty[k]) {
            all = false;
            break;
          }
          sum += *uncertainty[k];
        }
        if (all) e.mean_uncertainty = sum / static_cast<double>(j - i);
      }
      events.push_back(std::move(e));
    }
    i = j;
  }
  return events;
}

std::vector<DetectionEvent> apply_filters(std::span<const std::uint8_t> flags, std::span<const TimeSlice> slices,
                                          const DetectionConfig& config, std::span<const double> scores,
                                          std::span<const std::optional<double>> uncertainty) {
  const std::vector<std::uint8_t> kept = free_flow_filter(flags, slices, config.free_flow_cut);
  return extract_events(kept, slices, config, scores, uncertainty);
}

// ---- matching and metrics ---------------------------------------------------

std::vector<TruthEvent> truth_events(std::span<const IncidentRecord> incidents) {
  std::vector<TruthEvent> out;
  out.reserve(incidents.size());
  for (const IncidentRecord& r : incidents) out.push_back({r.pair_id, r.start, r.end()});
  return out;
}

MatchReport match_events(std::span<const DetectionEvent> detected, std::span<const TruthEvent> truth,
                         std::int64_t tolerance_s) {
  MatchReport r;
  r.total_detected = detected.size();
  r.total_truth = truth.size();

  std::vector<std::size_t> det_order(detected.size());
  std::iota(det_order.begin(), det_order.end(), std::size_t{0});
  std::stable_sort(det_order.begin(), det_order.end(), [&](std::size_t a, std::size_t b) {
    if (detected[a].pair_id != detected[b].pair_id) return detected[a].pair_id < detected[b].pair_id;
    return detected[a].start < detected[b].start;
  });
  std::map<std::string, std::vector<std::size_t>> truth_by_pair;
  for (std::size_t i = 0; i < truth.size(); ++i) truth_by_pair[truth[i].pair_id].push_back(i);
  for (auto& [pair, idx] : truth_by_pair) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return truth[a].start < truth[b].start; });
  }

  std::vector<bool> taken(truth.size(), false);
  for (std::size_t di : det_order) {
    const DetectionEvent& d = detected[di];
    auto it = truth_by_pair.find(d.pair_id);
    if (it == truth_by_pair.end()) continue;
    for (std::size_t ti : it->second) {
      if (taken[ti]) continue;
      const TruthEvent& t = truth[ti];
      const bool overlap = d.start <= t.end && d.end >= t.start;
      const bool soon_after = d.start >= t.start && d.start - t.start <= tolerance_s;
      if (overlap || soon_after) {
        taken[ti] = true;
        r.matches.emplace_back(di, ti);
        break;
      }
    }
  }
  std::sort(r.matches.begin(), r.matches.end());
  r.correctly_detected = r.matches.size();
  r.false_alarms = r.total_detected - r.correctly_detected;
  r.missed = r.total_truth - r.correctly_detected;
  r.dr = detection_rate(r.correctly_detected, r.total_truth);
  r.far = false_alarm_rate(r.false_alarms, r.total_detected);
  return r;
}

std::optional<double> detection_rate(std::size_t correct, std::size_t total_truth) {
  if (total_truth == 0) return std::nullopt;
  if (correct > total_truth) throw Error("more correct detections than incidents");
  return static_cast<double>(correct) / static_cast<double>(total_truth);
}

std::optional<double> false_alarm_rate(std::size_t false_alarms, std::size_t total_detected) {
  if (total_detected == 0) return std::nullopt;
  if (false_alarms > total_detected) throw Error("more false alarms than detections");
  return static_cast<double>(false_alarms) / static_cast<double>(total_detected);
}

namespace {

ClassMetrics class_metrics(std::size_t tp, std::size_t fp, std::size_t fn) {
  ClassMetrics m;
  m.support = tp + fn;
  if (m.support == 0) return m;
  if (tp + fp > 0) m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  m.recall = static_cast<double>(tp) / static_cast<double>(m.support);
  if (m.precision) {
    const double p = *m.precision;
    const double r = *m.recall;
    m.f1 = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  return m;
}

}  // namespace

ClassificationMetrics classification_metrics(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw ShapeError("predictions and labels differ in length");
  if (labels.empty()) throw Error("classification_metrics: empty input");
  ClassificationMetrics m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predictions[i] != 0;
    const bool y = labels[i] != 0;
    if (p && y) ++m.tp;
    else if (p) ++m.fp;
    else if (y) ++m.fn;
    else ++m.tn;
  }
  m.incident = class_metrics(m.tp, m.fp, m.fn);
  m.non_incident = class_metrics(m.tn, m.fn, m.fp);
  m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(labels.size());
  return m;
}

// ---- offline detection ------------------------------------------------------------

OfflineResult detect_offline(const preprocess::PairSeries& smoothed, const preprocess::References& refs,
                             const Scorer& scorer, const DetectionConfig& config, const OfflineOptions& options) {
  config.validate();
  const std::size_t H = options.history_steps;
  if (H < 1) throw ConfigError("history_steps must be >= 1");
  if (scorer.seq_len() != H) throw ShapeError("scorer expects a different history length");
  const std::size_t n = smoothed.upstream.size();
  OfflineResult r;
  r.offset_mask.assign(n, 0);
  if (n < H) return r;
  const std::size_t m = n - H + 1;  // slice k ends at sample k + H - 1
  r.slices.resize(m);
  r.scores.assign(m, 0.0);
  r.uncertainty.assign(m, std::nullopt);
  r.flags.assign(m, 0);

  std::size_t dirty_from = 0;  // first slice whose inputs may have changed
  bool first_pass = true;
  for (;;) {
    ++r.passes;
    const preprocess::PairSeries corrected =
        preprocess::offset_upstream(smoothed, options.offset_window_s, r.offset_mask, options.initial_offset);
    const preprocess::PairSeries norm = preprocess::normalize(corrected, refs, options.speed_clip);
    for (std::size_t k = dirty_from; k < m; ++k) {
      TimeSlice s = preprocess::slice_at(norm, k + H - 1, H);
      if (!first_pass && s.channels == r.slices[k].channels) continue;
      if (finite_slice(s)) {
        const Score sc = scorer.score(s);
        r.scores[k] = sc.value;
        r.uncertainty[k] = sc.uncertainty;
        r.flags[k] = sc.value > config.prob_threshold && !free_flowing(s, config.free_flow_cut) ? 1 : 0;
      } else {
        r.scores[k] = std::numeric_limits<double>::quiet_NaN();
        r.uncertainty[k] = std::nullopt;
        r.flags[k] = 0;
      }
      r.slices[k] = std::move(s);
    }
    first_pass = false;

    // Sample t is excluded when the slice ending at t - 1 is an incident.
    std::size_t changed = n;
    for (std::size_t t = H; t < n; ++t) {
      const std::uint8_t want = r.flags[t - H];
      if (r.offset_mask[t] != want) {
        changed = t;
        break;
      }
    }
    if (changed == n) break;
    for (std::size_t t = changed; t < n; ++t) r.offset_mask[t] = r.flags[t - H];
    dirty_from = changed - (H - 1);
  }
  r.events = extract_events(r.flags, r.slices, config, r.scores, r.uncertainty);
  return r;
}

// ---- text output --------------------------------------------------------------

std::string events_csv(std::span<const DetectionEvent> events) {
  std::string out = "pair_id,start_iso8601,end_iso8601,peak_prob,mean_uncertainty\n";
  for (const DetectionEvent& e : events) {
    out += e.pair_id + "," + format_iso8601(e.start) + "," + format_iso8601(e.end) + "," + format_double(e.peak_prob) +
           "," + (e.mean_uncertainty ? format_double(*e.mean_uncertainty) : std::string{}) + "\n";
  }
  return out;
}

std::string match_report_text(const MatchReport& r) {
  std::string out;
  out += "total_truth: " + std::to_string(r.total_truth) + "\n";
  out += "total_detected: " + std::to_string(r.total_detected) + "\n";
  out += "correctly_detected: " + std::to_string(r.correctly_detected) + "\n";
  out += "false_alarms: " + std::to_string(r.false_alarms) + "\n";
  out += "missed: " + std::to_string(r.missed) + "\n";
  out += "dr: " + fixed_or_undefined(r.dr) + "\n";
  out += "far: " + fixed_or_undefined(r.far) + "\n";
  return out;
}

std::string classification_metrics_text(const ClassificationMetrics& m) {
  std::string out = "class,precision,recall,f1,support\n";
  auto row = [&](const char* name, const ClassMetrics& c) {
    out += std::string(name) + "," + fixed_or_undefined(c.precision) + "," + fixed_or_undefined(c.recall) + "," +
           fixed_or_undefined(c.f1) + "," + std::to_string(c.support) + "\n";
  };
  row("non_incident", m.non_incident);
  row("incident", m.incident);
  out += "accuracy," + fixed(m.accuracy) + "\n";
  return out;
}

std::vector<PlotRow> plot_rows(const OfflineResult& result) {
  std::vector<PlotRow> rows;
  rows.reserve(result.slices.size());
  std::size_t e = 0;
  for (std::size_t k = 0; k < result.slices.size(); ++k) {
    const TimeSlice& s = result.slices[k];
    PlotRow row;
    row.t = s.t_end;
    const std::size_t last = s.steps - 1;
    row.up_speed = s.at(last, kUpSpeed);
    row.down_speed = s.at(last, kDownSpeed);
    row.score = result.scores[k];
    row.uncertainty = result.uncertainty[k];
    while (e < result.events.size() && result.events[e].end < s.t_end) ++e;
    row.in_event = e < result.events.size() && result.events[e].start <= s.t_end && s.t_end <= result.events[e].end;
    rows.push_back(row);
  }
  return rows;
}

std::string plot_csv(std::span<const PlotRow> rows) {
  std::string out = "timestamp_iso8601,up_speed,down_speed,score,uncertainty,event\n";
  for (const PlotRow& r : rows) {
    out += format_iso8601(r.t) + "," + format_double(r.up_speed) + "," + format_double(r.down_speed) + "," +
           format_double(r.score) + "," + (r.uncertainty ? format_double(*r.uncertainty) : std::string{}) + "," +
           (r.in_event ? "1" : "0") + "\n";
  }
  return out;
}

}  // namespace aidflow::detection
