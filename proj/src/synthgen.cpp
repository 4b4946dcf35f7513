#include "aidflow/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "aidflow/preprocess.hpp"

namespace aidflow::synthgen {

namespace {

constexpr std::int64_t kDay = 86400;
constexpr double kFreeFlowMph = 65.0;
constexpr double kBaseOccupancy = 0.055;
constexpr double kCongestionOccupancy = 0.32;
constexpr std::int64_t kOnsetRamp = 120;     // incident reaches full effect after 2 min
constexpr std::int64_t kRecoveryRamp = 300;  // and fades out over the last 5 min
constexpr double kDownRecoveryTau = 240.0;    // double_sided_drop: downstream dip decay (s)

enum Stream : std::uint64_t { kPairParams = 1, kNoise = 2, kIncidents = 3, kDropouts = 4, kVolume = 5 };

/// 0 outside [a - ramp, b + ramp], 1 inside [a, b], raised-cosine shoulders.
double plateau(double t, double a, double b, double ramp) {
  if (t < a - ramp || t > b + ramp) return 0.0;
  if (t >= a && t <= b) return 1.0;
  const double x = t < a ? (a - t) / ramp : (t - b) / ramp;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * x));
}

struct IncidentEffect {
  double up_drop = 0.0;      // multiplicative upstream speed loss
  double down_change = 0.0;  // multiplicative downstream speed change (signed)
  double up_occ = 0.0;       // additive occupancy
  double down_occ = 0.0;
  double down_residual = 1.0;  // fraction of the downstream change that persists after the dip
};

IncidentEffect draw_effect(IncidentTemplate kind, Rng& rng) {
  IncidentEffect e;
  switch (kind) {
    case IncidentTemplate::separation:
      e.up_drop = rng.uniform(0.30, 0.40);
      e.down_change = rng.uniform(0.0, 0.04);
      e.up_occ = rng.uniform(0.16, 0.22);
      e.down_occ = rng.uniform(-0.01, 0.0);
      break;
    case IncidentTemplate::strong_separation:
      e.up_drop = rng.uniform(0.50, 0.65);
      e.down_change = rng.uniform(0.02, 0.06);
      e.up_occ = rng.uniform(0.30, 0.38);
      e.down_occ = rng.uniform(-0.015, 0.0);
      break;
    case IncidentTemplate::one_sided_drop:
      e.up_drop = rng.uniform(0.38, 0.50);
      e.down_change = 0.0;
      e.up_occ = rng.uniform(0.20, 0.26);
      e.down_occ = 0.0;
      break;
    case IncidentTemplate::double_sided_drop:
      e.up_drop = rng.uniform(0.45, 0.58);
      e.down_change = -rng.uniform(0.36, 0.45);
      e.up_occ = rng.uniform(0.22, 0.28);
      e.down_occ = rng.uniform(0.17, 0.22);
      e.down_residual = rng.uniform(0.15, 0.30);
      break;
  }
  return e;
}

double incident_envelope(Timestamp t, Timestamp start, Timestamp end) {
  if (t < start) return 0.0;
  if (t < start + kOnsetRamp) return static_cast<double>(t - start) / kOnsetRamp;
  if (t >= end) return 0.0;
  if (t > end - kRecoveryRamp) return static_cast<double>(end - t) / kRecoveryRamp;
  return 1.0;
}

struct PairOutput {
  DetectorMeta meta[2];
  MeasurementSeries series[2];
  std::vector<IncidentRecord> incidents;
};

IncidentTemplate pick_template(const std::array<double, 4>& mix, double u) {
  double acc = 0.0;
  for (std::size_t i = 0; i < mix.size(); ++i) {
    acc += mix[i];
    if (u < acc) return static_cast<IncidentTemplate>(i);
  }
  for (std::size_t i = mix.size(); i-- > 0;)
    if (mix[i] > 0.0) return static_cast<IncidentTemplate>(i);
  return IncidentTemplate::separation;
}

std::string detector_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "D%03d", index);
  return buf;
}

PairOutput generate_pair(const SynthConfig& cfg, int p) {
  PairOutput out;
  const std::uint64_t pair_key = static_cast<std::uint64_t>(p);
  Rng params(derive_seed(cfg.seed, pair_key, kPairParams));
  Rng noise(derive_seed(cfg.seed, pair_key, kNoise));
  Rng incident_rng(derive_seed(cfg.seed, pair_key, kIncidents));
  Rng dropout(derive_seed(cfg.seed, pair_key, kDropouts));
  Rng volume_rng(derive_seed(cfg.seed, pair_key, kVolume));

  const Timestamp begin = cfg.start;
  const Timestamp end = cfg.start + static_cast<Timestamp>(cfg.days) * kDay;
  const std::size_t n = static_cast<std::size_t>((end - begin) / kSampleSeconds);

  // Detector geometry and per-detector constants.
  double free_flow[2];
  double base_occ[2];
  int lanes[2];
  free_flow[1] = kFreeFlowMph + params.uniform(-3.0, 3.0);
  free_flow[0] = free_flow[1] + params.uniform(-6.0, 6.0);  // constant up/down separation
  for (int d = 0; d < 2; ++d) {
    lanes[d] = 2 + static_cast<int>(params.below(3));
    base_occ[d] = kBaseOccupancy + params.uniform(-0.005, 0.005);
    out.meta[d] = {detector_name(2 * p + d), 5.0 * p + 1.0 + 0.8 * d, lanes[d], Direction::east};
  }
  const std::string pair_id = out.meta[0].detector_id + "-" + out.meta[1].detector_id;

  // Rush-hour congestion depth per day, shared by both detectors.
  std::vector<double> am_depth(cfg.days), pm_depth(cfg.days), wave_phase(cfg.days);
  std::vector<double> down_tweak(cfg.days);
  for (int d = 0; d < cfg.days; ++d) {
    am_depth[d] = params.uniform(0.20, 0.50);
    pm_depth[d] = params.uniform(0.20, 0.50);
    wave_phase[d] = params.uniform(0.0, 2.0 * std::numbers::pi);
    down_tweak[d] = params.uniform(-0.08, 0.08);
  }

  // Incidents.
  struct Placed {
    IncidentRecord rec;
    IncidentEffect effect;
  };
  std::vector<Placed> placed;
  const int count = incident_rng.poisson(cfg.incident_rate * cfg.days);
  for (int k = 0; k < count; ++k) {
    const double log_lo = std::log(600.0), log_hi = std::log(5400.0);
    const auto duration = static_cast<std::int64_t>(std::lround(std::exp(incident_rng.uniform(log_lo, log_hi)) / 30.0)) * 30;
    const IncidentTemplate kind = pick_template(cfg.template_mix, incident_rng.uniform());
    const IncidentEffect effect = draw_effect(kind, incident_rng);
    const double jitter_s = cfg.report_time_jitter_min * 60.0;
    const auto start_jitter = static_cast<std::int64_t>(std::lround(incident_rng.uniform(-jitter_s, jitter_s)));
    const auto duration_jitter = static_cast<std::int64_t>(std::lround(incident_rng.uniform(-jitter_s, jitter_s)));
    const Timestamp earliest = begin + 3600;
    const Timestamp latest = end - duration - 900;
    if (latest <= earliest) continue;
    bool ok = false;
    Timestamp start = 0;
    for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
      const auto slots = static_cast<std::uint64_t>((latest - earliest) / kSampleSeconds);
      start = earliest + static_cast<Timestamp>(incident_rng.below(slots)) * kSampleSeconds;
      ok = std::none_of(placed.begin(), placed.end(), [&](const Placed& o) {
        return start < o.rec.end() + 3600 && start + duration + 3600 > o.rec.start;
      });
    }
    if (!ok) continue;
    IncidentRecord rec;
    rec.pair_id = pair_id;
    rec.start = start;
    rec.duration_s = duration;
    rec.kind = kind;
    rec.reported_start = start + start_jitter;
    rec.reported_duration_s = std::max<std::int64_t>(60, duration + duration_jitter);
    placed.push_back({rec, effect});
  }
  std::sort(placed.begin(), placed.end(), [](const Placed& a, const Placed& b) { return a.rec.start < b.rec.start; });

  for (int d = 0; d < 2; ++d) {
    auto& s = out.series[d];
    s.detector_id = out.meta[d].detector_id;
    s.timestamps.reserve(n);
    s.lane_speed.assign(lanes[d], {});
    s.lane_volume.assign(lanes[d], {});
    s.lane_occupancy.assign(lanes[d], {});
  }

  std::vector<double> lane_factor[2], lane_occ_factor[2];
  for (int d = 0; d < 2; ++d) {
    for (int l = 0; l < lanes[d]; ++l) {
      const double pos = lanes[d] > 1 ? static_cast<double>(l) / (lanes[d] - 1) - 0.5 : 0.0;
      lane_factor[d].push_back(1.0 + 0.06 * pos);        // left lane faster
      lane_occ_factor[d].push_back(1.0 - 0.2 * pos);    // right lane busier
    }
  }

  std::size_t next_incident = 0;
  std::vector<double> sp, vol, occ;
  for (std::size_t i = 0; i < n; ++i) {
    const Timestamp t = begin + static_cast<Timestamp>(i) * kSampleSeconds;
    const auto day = static_cast<std::size_t>((t - begin) / kDay);
    const double hour = static_cast<double>((t - begin) % kDay) / 3600.0;
    const double congestion =
        am_depth[day] * plateau(hour, 7.0, 9.0, 0.5) + pm_depth[day] * plateau(hour, 16.0, 19.0, 0.5);
    const double wave = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 360.0 + wave_phase[day]);

    // Incident envelope on this sample.
    while (next_incident < placed.size() && placed[next_incident].rec.end() < t) ++next_incident;
    double env = 0.0;
    double down_env = 0.0;
    IncidentEffect eff;
    if (next_incident < placed.size()) {
      const IncidentRecord& rec = placed[next_incident].rec;
      env = incident_envelope(t, rec.start, rec.end());
      eff = placed[next_incident].effect;
      const double since = static_cast<double>(std::max<Timestamp>(0, t - rec.start - kOnsetRamp));
      down_env = env * (eff.down_residual + (1.0 - eff.down_residual) * std::exp(-since / kDownRecoveryTau));
    }

    // Volume demand (no incident signature).
    const double demand = 1.5 + 5.0 * plateau(hour, 6.5, 20.0, 1.5) + 2.0 * congestion;

    const bool dropped = dropout.uniform() < cfg.missing_rate;
    for (int d = 0; d < 2; ++d) {
      const double c = std::clamp(congestion * (d == 1 ? 1.0 + down_tweak[day] : 1.0), 0.0, 0.9);
      double factor = 1.0 - c * (1.0 + 0.08 * wave);
      double occupancy = base_occ[d] + kCongestionOccupancy * (1.0 - factor);
      if (env > 0.0) {
        if (d == 0) {
          factor *= 1.0 - eff.up_drop * env;
          occupancy += eff.up_occ * env;
        } else {
          factor *= 1.0 + eff.down_change * down_env;
          occupancy += eff.down_occ * down_env;
        }
      }
      const double speed = std::max(1.0, free_flow[d] * factor + noise.normal(0.0, cfg.noise_std * free_flow[d]));
      occupancy = std::clamp(occupancy + noise.normal(0.0, cfg.noise_std * 0.1), 0.0, 1.0);

      // Lane split that aggregates back to (speed, occupancy).
      const int L = lanes[d];
      vol.assign(L, 0.0);
      sp.assign(L, 0.0);
      occ.assign(L, 0.0);
      for (int l = 0; l < L; ++l) {
        const double mean = demand / L;
        vol[l] = std::max(0.0, std::round(volume_rng.normal(mean, std::sqrt(mean))));
      }
      double wsum = 0.0, vsum = 0.0, fsum = 0.0, osum = 0.0;
      for (int l = 0; l < L; ++l) {
        wsum += lane_factor[d][l] * vol[l];
        vsum += vol[l];
        fsum += lane_factor[d][l];
        osum += lane_occ_factor[d][l];
      }
      const double mean_factor = vsum > 0.0 ? wsum / vsum : fsum / L;
      for (int l = 0; l < L; ++l) {
        sp[l] = speed * lane_factor[d][l] / mean_factor;
        occ[l] = std::clamp(occupancy * lane_occ_factor[d][l] * L / osum, 0.0, 1.0);
      }
      if (dropped) continue;

      auto& s = out.series[d];
      s.timestamps.push_back(t);
      double occ_mean = 0.0;
      for (int l = 0; l < L; ++l) {
        s.lane_speed[l].push_back(sp[l]);
        s.lane_volume[l].push_back(vol[l]);
        s.lane_occupancy[l].push_back(occ[l]);
        occ_mean += occ[l];
      }
      s.speed.push_back(preprocess::aggregate_lanes(sp, vol));
      s.volume.push_back(vsum);
      s.occupancy.push_back(occ_mean / L);
    }
  }

  for (auto& pl : placed) out.incidents.push_back(pl.rec);
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (days < 1) throw ConfigError("days must be >= 1");
  if (detector_pairs < 1) throw ConfigError("detector_pairs must be >= 1");
  if (incident_rate < 0.0) throw ConfigError("incident_rate must be >= 0");
  if (report_time_jitter_min < 0.0) throw ConfigError("report_time_jitter must be >= 0");
  if (noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
  if (missing_rate < 0.0 || missing_rate >= 1.0) throw ConfigError("missing_rate must lie in [0, 1)");
  double sum = 0.0;
  for (double w : template_mix) {
    if (w < 0.0) throw ConfigError("template_mix weights must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("template_mix weights must sum to 1");
  const double samples = static_cast<double>(days) * detector_pairs * 2.0 * (kDay / kSampleSeconds);
  if (samples > 1e8) throw ConfigError("corpus would exceed 1e8 samples");
}

Corpus generate_corpus(const SynthConfig& config) {
  config.validate();
  std::vector<PairOutput> pairs(static_cast<std::size_t>(config.detector_pairs));
#pragma omp parallel for schedule(dynamic)
  for (int p = 0; p < config.detector_pairs; ++p) pairs[static_cast<std::size_t>(p)] = generate_pair(config, p);

  Corpus corpus;
  corpus.begin = config.start;
  corpus.end = config.start + static_cast<Timestamp>(config.days) * kDay;
  int next_id = 1;
  for (auto& po : pairs) {
    for (int d = 0; d < 2; ++d) {
      corpus.detectors.push_back(po.meta[d]);
      corpus.series.push_back(std::move(po.series[d]));
    }
    for (auto& rec : po.incidents) {
      rec.id = next_id++;
      corpus.incidents.push_back(rec);
    }
  }
  return corpus;
}

std::vector<MeasurementSeries> corrupt_quality(std::vector<MeasurementSeries> series, double fraction,
                                               std::uint64_t seed, std::int64_t window_s) {
  if (fraction < 0.0 || fraction > 1.0) throw Error("corruption fraction must lie in [0, 1]");
  struct Target {
    std::size_t series;
    preprocess::WindowRange range;
  };
  std::vector<Target> windows;
  for (std::size_t s = 0; s < series.size(); ++s)
    for (const auto& w : preprocess::split_windows(series[s].timestamps, window_s)) windows.push_back({s, w});

  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(windows.size())));
  Rng rng(derive_seed(seed, 0xC0FFEE));
  rng.shuffle(windows);
  auto flatten = [](std::vector<double>& v, const preprocess::WindowRange& r) {
    if (v.empty()) return;
    std::fill(v.begin() + static_cast<std::ptrdiff_t>(r.first), v.begin() + static_cast<std::ptrdiff_t>(r.last),
              v[r.first]);
  };
  for (std::size_t k = 0; k < count; ++k) {
    auto& s = series[windows[k].series];
    const auto& r = windows[k].range;
    flatten(s.speed, r);
    flatten(s.volume, r);
    flatten(s.occupancy, r);
    for (auto& lane : s.lane_speed) flatten(lane, r);
    for (auto& lane : s.lane_volume) flatten(lane, r);
    for (auto& lane : s.lane_occupancy) flatten(lane, r);
  }
  return series;
}

}  // namespace aidflow::synthgen
