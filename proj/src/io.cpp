#include "aidflow/io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <unordered_map>

namespace aidflow::io {

namespace {

constexpr char kSliceMagic[8] = {'A', 'I', 'D', 'S', 'L', 'C', '0', '1'};

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    if (line.empty()) continue;
    fn(line, line_no);
  }
}

void expect_header(std::string_view text, std::string_view header, const char* what) {
  const std::size_t nl = text.find('\n');
  std::string_view first = text.substr(0, nl);
  if (!first.empty() && first.back() == '\r') first.remove_suffix(1);
  if (first != header) throw Error(std::string(what) + ": expected header '" + std::string(header) + "'");
}

std::string value_or_empty(double v) { return std::isnan(v) ? std::string{} : format_double(v); }

double parse_optional_double(std::string_view f) {
  return f.empty() ? std::numeric_limits<double>::quiet_NaN() : parse_double(f);
}

[[noreturn]] void row_error(const char* what, std::size_t line_no, const std::string& detail) {
  throw Error(std::string(what) + " line " + std::to_string(line_no) + ": " + detail);
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw Error("binary slices: truncated file");
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw Error("binary slices: truncated file");
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

// ---- detectors ----------------------------------------------------------------

std::string detectors_csv(std::span<const DetectorMeta> detectors) {
  std::string out = "detector_id,milepost_km,lane_count,direction\n";
  for (const DetectorMeta& d : detectors) {
    out += d.detector_id + "," + format_double(d.milepost_km) + "," + std::to_string(d.lane_count) + "," +
           to_string(d.direction) + "\n";
  }
  return out;
}

std::vector<DetectorMeta> parse_detectors_csv(std::string_view text) {
  expect_header(text, "detector_id,milepost_km,lane_count,direction", "detectors.csv");
  std::vector<DetectorMeta> out;
  for_each_line(text, [&](std::string_view line, std::size_t no) {
    if (no == 1) return;
    const auto f = split_csv_line(line);
    if (f.size() != 4) row_error("detectors.csv", no, "expected 4 fields");
    try {
      DetectorMeta d;
      d.detector_id = std::string(f[0]);
      d.milepost_km = parse_double(f[1]);
      d.lane_count = static_cast<int>(parse_int(f[2]));
      d.direction = direction_from_string(f[3]);
      if (d.detector_id.empty() || d.lane_count < 1) throw Error("bad detector row");
      out.push_back(std::move(d));
    } catch (const Error& e) {
      row_error("detectors.csv", no, e.what());
    }
  });
  return out;
}

// ---- measurements ---------------------------------------------------------------

std::string measurements_csv(std::span<const DetectorMeta> detectors, std::span<const MeasurementSeries> series) {
  if (detectors.size() != series.size()) throw ShapeError("one series per detector expected");
  struct Row {
    Timestamp t;
    std::size_t det;
    std::size_t i;
  };
  std::vector<Row> rows;
  std::size_t total = 0;
  for (const auto& s : series) total += s.size();
  rows.reserve(total);
  for (std::size_t d = 0; d < series.size(); ++d) {
    for (std::size_t i = 0; i < series[d].size(); ++i) rows.push_back({series[d].timestamps[i], d, i});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.t < b.t; });

  std::string out = "timestamp_iso8601,detector_id,lane,speed_mph,volume_count,occupancy_frac\n";
  out.reserve(total * 64);
  Timestamp cached_t = std::numeric_limits<Timestamp>::min();
  std::string cached_iso;
  for (const Row& r : rows) {
    if (r.t != cached_t) {
      cached_t = r.t;
      cached_iso = format_iso8601(r.t);
    }
    const MeasurementSeries& s = series[r.det];
    const std::string& id = detectors[r.det].detector_id;
    if (s.has_lanes()) {
      for (std::size_t l = 0; l < s.lane_speed.size(); ++l) {
        out += cached_iso;
        out += ',';
        out += id;
        out += ',';
        out += std::to_string(l + 1);
        out += ',';
        out += value_or_empty(s.lane_speed[l][r.i]);
        out += ',';
        out += value_or_empty(s.lane_volume[l][r.i]);
        out += ',';
        out += value_or_empty(s.lane_occupancy[l][r.i]);
        out += '\n';
      }
    } else {
      out += cached_iso + "," + id + ",0," + value_or_empty(s.speed[r.i]) + "," + value_or_empty(s.volume[r.i]) + "," +
             value_or_empty(s.occupancy[r.i]) + "\n";
    }
  }
  return out;
}

std::vector<MeasurementSeries> parse_measurements_csv(std::string_view text, std::span<const DetectorMeta> detectors) {
  expect_header(text, "timestamp_iso8601,detector_id,lane,speed_mph,volume_count,occupancy_frac", "measurements.csv");
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t d = 0; d < detectors.size(); ++d) index.emplace(detectors[d].detector_id, d);

  struct Acc {
    bool lanes = false;
    bool aggregated = false;
    std::vector<Timestamp> ts;
    std::vector<std::array<double, 3>> agg;
    std::vector<std::vector<std::array<double, 3>>> lane;  // [sample][lane]
  };
  std::vector<Acc> acc(detectors.size());
  std::string_view last_ts_text;
  Timestamp last_ts = 0;

  for_each_line(text, [&](std::string_view line, std::size_t no) {
    if (no == 1) return;
    const auto f = split_csv_line(line);
    if (f.size() != 6) row_error("measurements.csv", no, "expected 6 fields");
    try {
      if (f[0] != last_ts_text) {
        last_ts = parse_iso8601(f[0]);
        last_ts_text = f[0];
      }
      auto it = index.find(std::string(f[1]));
      if (it == index.end()) throw Error("unknown detector '" + std::string(f[1]) + "'");
      Acc& a = acc[it->second];
      const std::int64_t lane = parse_int(f[2]);
      const std::array<double, 3> v{parse_optional_double(f[3]), parse_optional_double(f[4]),
                                    parse_optional_double(f[5])};
      const bool new_sample = a.ts.empty() || a.ts.back() != last_ts;
      if (!a.ts.empty() && last_ts < a.ts.back()) throw Error("rows out of time order");
      if (lane == 0) {
        if (a.lanes) throw Error("detector mixes lane and aggregated rows");
        a.aggregated = true;
        if (!new_sample) throw Error("duplicate aggregated row");
        a.ts.push_back(last_ts);
        a.agg.push_back(v);
      } else {
        if (a.aggregated) throw Error("detector mixes lane and aggregated rows");
        const int lanes = detectors[it->second].lane_count;
        if (lane < 1 || lane > lanes) throw Error("lane " + std::to_string(lane) + " out of range");
        a.lanes = true;
        if (new_sample) {
          a.ts.push_back(last_ts);
          const double nan = std::numeric_limits<double>::quiet_NaN();
          a.lane.emplace_back(static_cast<std::size_t>(lanes), std::array<double, 3>{nan, nan, nan});
        }
        a.lane.back()[static_cast<std::size_t>(lane - 1)] = v;
      }
    } catch (const Error& e) {
      row_error("measurements.csv", no, e.what());
    }
  });

  std::vector<MeasurementSeries> out(detectors.size());
  for (std::size_t d = 0; d < detectors.size(); ++d) {
    Acc& a = acc[d];
    MeasurementSeries s;
    s.detector_id = detectors[d].detector_id;
    s.timestamps = std::move(a.ts);
    if (a.lanes) {
      const auto lanes = static_cast<std::size_t>(detectors[d].lane_count);
      s.lane_speed.assign(lanes, std::vector<double>(s.size()));
      s.lane_volume.assign(lanes, std::vector<double>(s.size()));
      s.lane_occupancy.assign(lanes, std::vector<double>(s.size()));
      for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t l = 0; l < lanes; ++l) {
          s.lane_speed[l][i] = a.lane[i][l][0];
          s.lane_volume[l][i] = a.lane[i][l][1];
          s.lane_occupancy[l][i] = a.lane[i][l][2];
        }
      }
      MeasurementSeries agg = preprocess::aggregate_series(s);
      s.speed = std::move(agg.speed);
      s.volume = std::move(agg.volume);
      s.occupancy = std::move(agg.occupancy);
    } else {
      for (const auto& v : a.agg) {
        s.speed.push_back(v[0]);
        s.volume.push_back(v[1]);
        s.occupancy.push_back(v[2]);
      }
    }
    out[d] = std::move(s);
  }
  return out;
}

// ---- incidents ----------------------------------------------------------------

std::string incidents_csv(std::span<const IncidentRecord> incidents) {
  std::string out = "incident_id,pair_id,start_iso8601,duration_s,template,reported_start_iso8601,reported_duration_s\n";
  for (const IncidentRecord& r : incidents) {
    out += std::to_string(r.id) + "," + r.pair_id + "," + format_iso8601(r.start) + "," + std::to_string(r.duration_s) +
           "," + to_string(r.kind) + "," + format_iso8601(r.reported_start) + "," +
           std::to_string(r.reported_duration_s) + "\n";
  }
  return out;
}

std::vector<IncidentRecord> parse_incidents_csv(std::string_view text) {
  expect_header(text,
                "incident_id,pair_id,start_iso8601,duration_s,template,reported_start_iso8601,reported_duration_s",
                "incidents.csv");
  std::vector<IncidentRecord> out;
  for_each_line(text, [&](std::string_view line, std::size_t no) {
    if (no == 1) return;
    const auto f = split_csv_line(line);
    if (f.size() != 7) row_error("incidents.csv", no, "expected 7 fields");
    try {
      IncidentRecord r;
      r.id = static_cast<int>(parse_int(f[0]));
      r.pair_id = std::string(f[1]);
      r.start = parse_iso8601(f[2]);
      r.duration_s = parse_int(f[3]);
      r.kind = incident_template_from_string(f[4]);
      r.reported_start = parse_iso8601(f[5]);
      r.reported_duration_s = parse_int(f[6]);
      if (r.duration_s <= 0 || r.reported_duration_s <= 0) throw Error("durations must be positive");
      out.push_back(std::move(r));
    } catch (const Error& e) {
      row_error("incidents.csv", no, e.what());
    }
  });
  return out;
}

// ---- slices ---------------------------------------------------------------------

std::string slices_csv(std::span<const TimeSlice> slices) {
  std::size_t steps = slices.empty() ? 0 : slices.front().steps;
  std::string out = "slice_id,pair_id,t_end_iso8601,steps,reported_label,prob_label,true_label";
  for (std::size_t k = 0; k < steps * kChannels; ++k) out += ",v" + std::to_string(k);
  out += '\n';
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const TimeSlice& s = slices[i];
    if (s.steps != steps || s.channels.size() != steps * kChannels) throw ShapeError("slices differ in shape");
    out += std::to_string(i) + "," + s.pair_id + "," + format_iso8601(s.t_end) + "," + std::to_string(s.steps) + "," +
           (s.reported_label < 0 ? std::string{} : std::to_string(s.reported_label)) + "," +
           (s.prob_label ? format_double(*s.prob_label) : std::string{}) + "," +
           (s.true_label ? std::to_string(*s.true_label) : std::string{});
    for (double v : s.channels) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

std::vector<TimeSlice> parse_slices_csv(std::string_view text) {
  if (text.rfind("slice_id,pair_id,t_end_iso8601,steps,reported_label,prob_label,true_label", 0) != 0)
    throw Error("slices csv: unexpected header");
  std::vector<TimeSlice> out;
  for_each_line(text, [&](std::string_view line, std::size_t no) {
    if (no == 1) return;
    const auto f = split_csv_line(line);
    try {
      if (f.size() < 7) throw Error("too few fields");
      TimeSlice s;
      s.pair_id = std::string(f[1]);
      s.t_end = parse_iso8601(f[2]);
      s.steps = static_cast<std::size_t>(parse_int(f[3]));
      if (f.size() != 7 + s.steps * kChannels) throw Error("field count does not match steps");
      s.reported_label = f[4].empty() ? -1 : static_cast<int>(parse_int(f[4]));
      if (!f[5].empty()) s.prob_label = parse_double(f[5]);
      if (!f[6].empty()) s.true_label = static_cast<int>(parse_int(f[6]));
      s.channels.reserve(s.steps * kChannels);
      for (std::size_t k = 7; k < f.size(); ++k) s.channels.push_back(parse_double(f[k]));
      out.push_back(std::move(s));
    } catch (const Error& e) {
      row_error("slices csv", no, e.what());
    }
  });
  return out;
}

std::string slices_binary(std::span<const TimeSlice> slices) {
  std::string out(kSliceMagic, sizeof kSliceMagic);
  put<std::uint64_t>(out, slices.size());
  for (const TimeSlice& s : slices) {
    if (s.channels.size() != s.steps * kChannels) throw ShapeError("slice channel count does not match steps");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.pair_id.size()));
    out += s.pair_id;
    put<std::int64_t>(out, s.t_end);
    put<std::uint64_t>(out, s.steps);
    put<std::int32_t>(out, s.reported_label);
    put<std::uint8_t>(out, s.prob_label ? 1 : 0);
    put<double>(out, s.prob_label.value_or(0.0));
    put<std::uint8_t>(out, s.true_label ? 1 : 0);
    put<std::int32_t>(out, s.true_label.value_or(0));
    for (double v : s.channels) put<double>(out, v);
  }
  return out;
}

std::vector<TimeSlice> parse_slices_binary(std::string_view bytes) {
  if (bytes.size() < sizeof kSliceMagic || std::memcmp(bytes.data(), kSliceMagic, sizeof kSliceMagic) != 0)
    throw Error("binary slices: bad magic");
  Reader r(bytes.substr(sizeof kSliceMagic));
  const auto n = r.get<std::uint64_t>();
  std::vector<TimeSlice> out;
  out.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n, 1u << 24)));
  for (std::uint64_t i = 0; i < n; ++i) {
    TimeSlice s;
    const auto len = r.get<std::uint32_t>();
    s.pair_id = std::string(r.take(len));
    s.t_end = r.get<std::int64_t>();
    s.steps = static_cast<std::size_t>(r.get<std::uint64_t>());
    s.reported_label = r.get<std::int32_t>();
    const bool has_prob = r.get<std::uint8_t>() != 0;
    const double prob = r.get<double>();
    if (has_prob) s.prob_label = prob;
    const bool has_true = r.get<std::uint8_t>() != 0;
    const int truth = r.get<std::int32_t>();
    if (has_true) s.true_label = truth;
    if (s.steps > (1u << 20)) throw Error("binary slices: implausible step count");
    s.channels.resize(s.steps * kChannels);
    for (double& v : s.channels) v = r.get<double>();
    out.push_back(std::move(s));
  }
  if (!r.done()) throw Error("binary slices: trailing bytes");
  return out;
}

SliceFormat slice_format_from_string(std::string_view s) {
  if (s == "csv") return SliceFormat::csv;
  if (s == "binary") return SliceFormat::binary;
  throw ConfigError("unknown slice format '" + std::string(s) + "' (csv or binary)");
}

void write_slices(const std::filesystem::path& path, std::span<const TimeSlice> slices, SliceFormat format) {
  write_file_atomic(path, format == SliceFormat::csv ? slices_csv(slices) : slices_binary(slices));
}

std::vector<TimeSlice> read_slices(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() >= sizeof kSliceMagic && std::memcmp(bytes.data(), kSliceMagic, sizeof kSliceMagic) == 0)
    return parse_slices_binary(bytes);
  return parse_slices_csv(bytes);
}

// ---- labels and references ----------------------------------------------------------

std::string label_matrix_csv(const weaklabel::LabelMatrix& matrix, std::span<const TimeSlice> slices) {
  if (matrix.rows() != slices.size()) throw ShapeError("label matrix rows do not match slices");
  std::string out = "slice_id";
  for (std::size_t c = 0; c < matrix.cols; ++c) out += ",lf_" + std::to_string(c + 1);
  out += ",prob_label\n";
  for (std::size_t r = 0; r < matrix.rows(); ++r) {
    out += std::to_string(r);
    for (std::size_t c = 0; c < matrix.cols; ++c) out += "," + std::to_string(static_cast<int>(matrix.at(r, c)));
    out += "," + (slices[r].prob_label ? format_double(*slices[r].prob_label) : std::string{}) + "\n";
  }
  return out;
}

std::string references_csv(std::span<const std::pair<std::string, preprocess::References>> refs) {
  std::string out = "pair_id,ref_speed_up,ref_speed_down\n";
  for (const auto& [id, r] : refs) {
    out += id + "," + format_double(r.ref_speed_up) + "," + format_double(r.ref_speed_down) + "\n";
  }
  return out;
}

std::vector<std::pair<std::string, preprocess::References>> parse_references_csv(std::string_view text) {
  expect_header(text, "pair_id,ref_speed_up,ref_speed_down", "references.csv");
  std::vector<std::pair<std::string, preprocess::References>> out;
  for_each_line(text, [&](std::string_view line, std::size_t no) {
    if (no == 1) return;
    const auto f = split_csv_line(line);
    if (f.size() != 3) row_error("references.csv", no, "expected 3 fields");
    try {
      out.emplace_back(std::string(f[0]), preprocess::References{parse_double(f[1]), parse_double(f[2])});
    } catch (const Error& e) {
      row_error("references.csv", no, e.what());
    }
  });
  return out;
}

}  // namespace aidflow::io
