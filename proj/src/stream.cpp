#include "aidflow/stream.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace aidflow::stream {

std::string to_string(Status s) {
  switch (s) {
    case Status::normal:
      return "NORMAL";
    case Status::require_attention:
      return "REQUIRE_ATTENTION";
    case Status::incident_detected:
      return "INCIDENT_DETECTED";
  }
  return "?";
}

void StreamConfig::validate() const {
  detection.validate();
  if (history_steps < 1) throw ConfigError("history_steps must be >= 1");
  if (ema_window < 1) throw ConfigError("ema_window must be >= 1");
  if (!(ema_alpha > 0.0 && ema_alpha <= 1.0)) throw ConfigError("ema_alpha must be in (0, 1]");
  if (offset_window_s < 1) throw ConfigError("offset_window_s must be >= 1");
  if (!(speed_clip > 0.0)) throw ConfigError("speed_clip must be > 0");
}

Stream::Stream(std::string pair_id, detection::Scorer scorer, preprocess::References refs, StreamConfig config,
               double initial_offset)
    : pair_id_(std::move(pair_id)),
      scorer_(std::move(scorer)),
      refs_(refs),
      config_(config),
      offset_(initial_offset) {
  config_.validate();
  if (!(refs_.ref_speed_up > 0.0) || !(refs_.ref_speed_down > 0.0))
    throw Error("stream for '" + pair_id_ + "' needs positive reference speeds");
  if (scorer_.seq_len() != config_.history_steps) throw ShapeError("scorer expects a different history length");
}

void Stream::check_order(Timestamp t) {
  if (last_t_ && t <= *last_t_) {
    throw Error("stream '" + pair_id_ + "': sample at " + format_iso8601(t) + " is not after " +
                format_iso8601(*last_t_));
  }
  last_t_ = t;
}

Stream::Smoothed Stream::smooth(const Sample& s) {
  const std::array<double, 4> v{s.up_speed, s.down_speed, s.up_occupancy, s.down_occupancy};
  std::array<double, 4> out{};
  for (std::size_t c = 0; c < 4; ++c) {
    std::deque<double>& ring = raw_[c];
    ring.push_back(v[c]);
    if (ring.size() > config_.ema_window) ring.pop_front();
    const std::vector<double> recent(ring.begin(), ring.end());
    out[c] = preprocess::ema_point(recent, config_.ema_alpha);
  }
  return {out[0], out[1], out[2], out[3]};
}

void Stream::track_offset(Timestamp t, double diff, bool ingest) {
  if (ingest) {
    window_.emplace_back(t, diff);
    ++ingested_;
  }
  while (!window_.empty() && window_.front().first <= t - config_.offset_window_s) window_.pop_front();
  if (!window_.empty()) {
    double sum = 0.0;
    for (const auto& [ts, d] : window_) sum += d;
    offset_ = sum / static_cast<double>(window_.size());
  }
}

void Stream::warm_up(std::span<const Sample> samples) {
  for (const Sample& s : samples) {
    check_order(s.t);
    if (!std::isfinite(s.up_speed) || !std::isfinite(s.down_speed) || !std::isfinite(s.up_occupancy) ||
        !std::isfinite(s.down_occupancy))
      continue;
    const Smoothed sm = smooth(s);
    track_offset(s.t, sm.down_speed - sm.up_speed, true);
  }
}

StreamUpdate Stream::push(const Sample& sample) {
  check_order(sample.t);
  StreamUpdate u;
  u.t = sample.t;
  if (!std::isfinite(sample.up_speed) || !std::isfinite(sample.down_speed) || !std::isfinite(sample.up_occupancy) ||
      !std::isfinite(sample.down_occupancy)) {
    warn("stream '" + pair_id_ + "': skipping sample with missing values at " + format_iso8601(sample.t));
    u.skipped = true;
    u.status = status_;
    u.run_length = run_length_;
    return u;
  }

  const Smoothed sm = smooth(sample);
  track_offset(sample.t, sm.down_speed - sm.up_speed, status_ == Status::normal);
  const double up = std::clamp((sm.up_speed + offset_) / refs_.ref_speed_up, 0.0, config_.speed_clip);
  const double down = std::clamp(sm.down_speed / refs_.ref_speed_down, 0.0, config_.speed_clip);
  std::array<double, kChannels> row{};
  row[kUpSpeed] = up;
  row[kDownSpeed] = down;
  row[kUpOccupancy] = sm.up_occupancy;
  row[kDownOccupancy] = sm.down_occupancy;
  row[kRelativeSpeed] = down - up;
  rows_.push_back(row);
  if (rows_.size() > config_.history_steps) rows_.pop_front();

  if (rows_.size() < config_.history_steps) {
    u.status = status_;
    u.run_length = run_length_;
    return u;
  }

  TimeSlice slice;
  slice.pair_id = pair_id_;
  slice.t_end = sample.t;
  slice.steps = config_.history_steps;
  slice.channels.reserve(slice.steps * kChannels);
  for (const auto& r : rows_) slice.channels.insert(slice.channels.end(), r.begin(), r.end());

  const detection::Score sc = scorer_.score(slice);
  const detection::DetectionConfig& dc = config_.detection;
  const bool incident = sc.value > dc.prob_threshold && !detection::free_flowing(slice, dc.free_flow_cut);
  u.score = sc.value;
  u.uncertainty = sc.uncertainty;
  u.incident = incident;

  if (incident) {
    ++run_length_;
    if (run_length_ == 1) {
      run_start_ = sample.t;
      run_peak_ = sc.value;
      run_uncertainty_sum_ = 0.0;
      run_has_uncertainty_ = true;
    } else {
      run_peak_ = std::max(run_peak_, sc.value);
    }
    if (sc.uncertainty) {
      run_uncertainty_sum_ += *sc.uncertainty;
    } else {
      run_has_uncertainty_ = false;
    }
    last_incident_t_ = sample.t;
    if (status_ == Status::normal) {
      status_ = Status::require_attention;
    } else if (status_ == Status::require_attention && dc.run_is_event(run_length_)) {
      status_ = Status::incident_detected;
      active_event_ = next_event_id_++;
      u.opened_event = active_event_;
    }
  } else {
    if (status_ == Status::incident_detected) u.closed_event = finish();
    status_ = Status::normal;
    run_length_ = 0;
  }
  u.status = status_;
  u.run_length = run_length_;
  return u;
}

std::optional<ClosedEvent> Stream::finish() {
  if (status_ != Status::incident_detected) return std::nullopt;
  ClosedEvent c;
  c.id = active_event_;
  c.event.pair_id = pair_id_;
  c.event.start = run_start_;
  c.event.end = last_incident_t_;
  c.event.peak_prob = run_peak_;
  if (run_has_uncertainty_) c.event.mean_uncertainty = run_uncertainty_sum_ / static_cast<double>(run_length_);
  status_ = Status::normal;
  run_length_ = 0;
  active_event_ = 0;
  return c;
}

std::string to_json_line(const StreamUpdate& u, const std::string& pair_id) {
  nlohmann::ordered_json j;
  j["t"] = format_iso8601(u.t);
  j["pair"] = pair_id;
  j["score"] = u.score ? nlohmann::ordered_json(*u.score) : nlohmann::ordered_json(nullptr);
  j["uncertainty"] = u.uncertainty ? nlohmann::ordered_json(*u.uncertainty) : nlohmann::ordered_json(nullptr);
  j["status"] = to_string(u.status);
  j["run_length"] = u.run_length;
  if (u.skipped) j["skipped"] = true;
  if (u.opened_event) j["opened"] = *u.opened_event;
  if (u.closed_event) {
    j["closed"] = u.closed_event->id;
    j["event_start"] = format_iso8601(u.closed_event->event.start);
    j["event_end"] = format_iso8601(u.closed_event->event.end);
  }
  return j.dump();
}

std::vector<Sample> samples_from_pair(const preprocess::PairSeries& pair) {
  const std::size_t n = pair.upstream.size();
  if (pair.downstream.size() != n) throw preprocess::AlignmentError("pair '" + pair.pair_id + "' is not aligned");
  std::vector<Sample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = {pair.upstream.timestamps[i], pair.upstream.speed[i], pair.downstream.speed[i], pair.upstream.occupancy[i],
              pair.downstream.occupancy[i]};
  }
  return out;
}

ReplayResult replay(Stream& stream, std::span<const Sample> samples) {
  ReplayResult r;
  r.updates.reserve(samples.size());
  for (const Sample& s : samples) {
    r.updates.push_back(stream.push(s));
    if (r.updates.back().closed_event) r.events.push_back(r.updates.back().closed_event->event);
  }
  if (auto last = stream.finish()) r.events.push_back(last->event);
  return r;
}

}  // namespace aidflow::stream
