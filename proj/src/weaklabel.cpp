#include "aidflow/weaklabel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace aidflow::weaklabel {

namespace {

struct SliceView {
  const TimeSlice& s;
  double at(std::size_t step, std::size_t ch) const { return s.at(step, ch); }
  std::size_t steps() const { return s.steps; }

  double mean_last(std::size_t ch, std::size_t k) const {
    const std::size_t first = steps() > k ? steps() - k : 0;
    double sum = 0.0;
    for (std::size_t t = first; t < steps(); ++t) sum += at(t, ch);
    return sum / static_cast<double>(steps() - first);
  }

  double mean_last_diff(std::size_t a, std::size_t b, std::size_t k) const {
    const std::size_t first = steps() > k ? steps() - k : 0;
    double sum = 0.0;
    for (std::size_t t = first; t < steps(); ++t) sum += at(t, a) - at(t, b);
    return sum / static_cast<double>(steps() - first);
  }

  /// Largest decrease x_i - x_j with i < j, over steps [from, steps).
  double max_fall(std::size_t ch, std::size_t from) const {
    double best = 0.0;
    double peak = at(from, ch);
    for (std::size_t t = from + 1; t < steps(); ++t) {
      best = std::max(best, peak - at(t, ch));
      peak = std::max(peak, at(t, ch));
    }
    return best;
  }

  /// Largest increase x_j - x_i with i < j, over steps [from, steps).
  double max_rise(std::size_t ch, std::size_t from) const {
    double best = 0.0;
    double trough = at(from, ch);
    for (std::size_t t = from + 1; t < steps(); ++t) {
      best = std::max(best, at(t, ch) - trough);
      trough = std::min(trough, at(t, ch));
    }
    return best;
  }

  double range(std::size_t ch) const {
    double lo = at(0, ch), hi = lo;
    for (std::size_t t = 1; t < steps(); ++t) {
      lo = std::min(lo, at(t, ch));
      hi = std::max(hi, at(t, ch));
    }
    return hi - lo;
  }
};

void write_row(const TimeSlice& slice, const LfThresholds& th, Vote* out) {
  const auto votes = apply_lfs(slice, th);
  std::copy(votes.begin(), votes.end(), out);
}

}  // namespace

const std::array<std::string, kCatalogSize>& lf_names() {
  static const std::array<std::string, kCatalogSize> names{
      "speed_separation",          "strong_speed_separation",  "one_sided_speed_drop",
      "double_sided_speed_drop",   "occupancy_separation",     "strong_occupancy_separation",
      "single_sided_occ_increase", "double_sided_occ_increase", "free_flow_both",
      "parallel_tracking"};
  return names;
}

std::array<Vote, kCatalogSize> apply_lfs(const TimeSlice& slice, const LfThresholds& th) {
  if (slice.steps < 2 || slice.channels.size() != slice.steps * kChannels)
    throw ShapeError("labeling functions need a slice with " + std::to_string(kChannels) + " channels and >= 2 steps");
  const SliceView v{slice};
  std::array<Vote, kCatalogSize> out{};
  out.fill(kAbstain);

  const double separation = v.mean_last(kRelativeSpeed, th.recent_steps);
  if (separation > th.separation) out[0] = kIncident;
  if (separation > th.strong_separation) out[1] = kIncident;

  if (v.max_fall(kUpSpeed, 0) > th.one_sided_drop && v.range(kDownSpeed) < th.one_sided_drop_steady)
    out[2] = kIncident;

  const std::size_t recent = v.steps() > th.double_drop_steps ? v.steps() - th.double_drop_steps : 0;
  if (v.max_fall(kUpSpeed, recent) > th.double_sided_drop && v.max_fall(kDownSpeed, recent) > th.double_sided_drop)
    out[3] = kIncident;

  const double occ_sep = v.mean_last_diff(kUpOccupancy, kDownOccupancy, th.recent_steps);
  if (occ_sep > th.occupancy_separation) out[4] = kIncident;
  if (occ_sep > th.strong_occupancy_separation) out[5] = kIncident;

  const double up_rise = v.max_rise(kUpOccupancy, 0);
  if (up_rise > th.occupancy_rise && v.range(kDownOccupancy) < th.occupancy_steady) out[6] = kIncident;
  if (up_rise > th.occupancy_rise && v.max_rise(kDownOccupancy, 0) > th.occupancy_rise) out[7] = kIncident;

  bool free_flow = true;
  bool parallel = true;
  for (std::size_t t = 0; t < v.steps(); ++t) {
    free_flow = free_flow && v.at(t, kUpSpeed) > th.free_flow_speed && v.at(t, kDownSpeed) > th.free_flow_speed &&
                v.at(t, kUpOccupancy) < th.free_flow_occupancy && v.at(t, kDownOccupancy) < th.free_flow_occupancy;
    parallel = parallel && std::abs(v.at(t, kRelativeSpeed)) < th.parallel_tolerance;
  }
  if (free_flow) out[8] = kNormal;
  if (parallel) out[9] = kNormal;
  return out;
}

LabelMatrix apply_lfs(std::span<const TimeSlice> slices, const LfThresholds& th) {
  LabelMatrix m(slices.size(), kCatalogSize);
  const auto n = static_cast<std::ptrdiff_t>(slices.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    write_row(slices[static_cast<std::size_t>(i)], th, &m.votes[static_cast<std::size_t>(i) * kCatalogSize]);
  return m;
}

LabelMatrix reference::apply_lfs(std::span<const TimeSlice> slices, const LfThresholds& th) {
  LabelMatrix m(slices.size(), kCatalogSize);
  for (std::size_t i = 0; i < slices.size(); ++i) write_row(slices[i], th, &m.votes[i * kCatalogSize]);
  return m;
}

LfStats lf_stats(const LabelMatrix& matrix) {
  const std::size_t rows = matrix.rows();
  const std::size_t cols = matrix.cols;
  if (rows == 0) throw Error("lf_stats needs a nonempty label matrix");
  std::vector<std::size_t> cov(cols, 0), ovl(cols, 0), con(cols, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = matrix.row(r);
    for (std::size_t i = 0; i < cols; ++i) {
      if (row[i] == kAbstain) continue;
      ++cov[i];
      bool overlaps = false, conflicts = false;
      for (std::size_t j = 0; j < cols; ++j) {
        if (j == i || row[j] == kAbstain) continue;
        overlaps = true;
        if (row[j] != row[i]) conflicts = true;
      }
      ovl[i] += overlaps;
      con[i] += conflicts;
    }
  }
  LfStats s;
  const double n = static_cast<double>(rows);
  for (std::size_t i = 0; i < cols; ++i) {
    s.coverage.push_back(static_cast<double>(cov[i]) / n);
    s.overlap.push_back(static_cast<double>(ovl[i]) / n);
    s.conflict.push_back(static_cast<double>(con[i]) / n);
  }
  return s;
}

LabelModel fit_label_model(const LabelMatrix& matrix, const LabelModelConfig& config) {
  const std::size_t m = matrix.cols;
  const std::size_t rows = matrix.rows();
  if (m < 3) throw Error("label model needs at least three labeling functions");
  if (config.prior && !(*config.prior > 0.0 && *config.prior < 1.0)) throw ConfigError("prior must lie in (0, 1)");

  // Pairwise agreement moments over rows where both LFs vote.
  std::vector<double> sum(m * m, 0.0);
  std::vector<std::size_t> count(m * m, 0);
  std::vector<std::size_t> covered(m, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = matrix.row(r);
    for (std::size_t i = 0; i < m; ++i) {
      if (row[i] == kAbstain) continue;
      ++covered[i];
      for (std::size_t j = i + 1; j < m; ++j) {
        if (row[j] == kAbstain) continue;
        sum[i * m + j] += static_cast<double>(row[i] * row[j]);
        ++count[i * m + j];
      }
    }
  }
  auto idx = [m](std::size_t a, std::size_t b) { return a < b ? a * m + b : b * m + a; };
  auto moment = [&](std::size_t a, std::size_t b) { return sum[idx(a, b)] / static_cast<double>(count[idx(a, b)]); };
  auto enough = [&](std::size_t a, std::size_t b) { return count[idx(a, b)] >= config.min_pairs && count[idx(a, b)] > 0; };

  LabelModel model;
  model.accuracies.assign(m, config.fallback_accuracy);
  for (std::size_t i = 0; i < m; ++i) {
    model.coverages.push_back(rows ? static_cast<double>(covered[i]) / static_cast<double>(rows) : 0.0);
    std::vector<double> estimates;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i || !enough(i, j)) continue;
      for (std::size_t k = j + 1; k < m; ++k) {
        if (k == i || !enough(i, k) || !enough(j, k)) continue;
        const double denom = moment(j, k);
        if (std::abs(denom) < config.min_moment) continue;
        estimates.push_back(std::sqrt(std::abs(moment(i, j) * moment(i, k) / denom)));
      }
    }
    if (estimates.empty()) {
      model.fallback_lfs.push_back(i);
      warn("label model: no valid triplet for LF " + std::to_string(i + 1) + ", using fallback accuracy");
      continue;
    }
    std::sort(estimates.begin(), estimates.end());
    const std::size_t h = estimates.size() / 2;
    const double a = estimates.size() % 2 ? estimates[h] : 0.5 * (estimates[h - 1] + estimates[h]);
    model.accuracies[i] = std::clamp((1.0 + a) / 2.0, config.accuracy_floor, config.accuracy_ceiling);
  }

  if (config.prior) {
    model.prior = *config.prior;
  } else {
    std::size_t pos = 0, neg = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      int total = 0;
      for (Vote v : matrix.row(r)) total += v;
      pos += total > 0;
      neg += total < 0;
    }
    model.prior = pos + neg == 0 ? 0.5 : std::clamp(static_cast<double>(pos) / static_cast<double>(pos + neg), 0.01, 0.99);
  }
  return model;
}

double predict_proba(const LabelModel& model, std::span<const Vote> votes) {
  if (votes.size() != model.accuracies.size()) throw ShapeError("vote vector length does not match the label model");
  double log_odds = std::log(model.prior / (1.0 - model.prior));
  for (std::size_t i = 0; i < votes.size(); ++i) {
    if (votes[i] == kAbstain) continue;
    const double a = model.accuracies[i];
    log_odds += static_cast<double>(votes[i]) * std::log(a / (1.0 - a));
  }
  return 1.0 / (1.0 + std::exp(-log_odds));
}

LabelSummary label_training_set(std::span<TimeSlice> slices, const LabelMatrix& matrix, const LabelModel& model) {
  if (matrix.rows() != slices.size()) throw ShapeError("label matrix rows do not match slice count");
  LabelSummary summary;
  for (std::size_t r = 0; r < slices.size(); ++r) {
    const auto row = matrix.row(r);
    const bool abstained = std::all_of(row.begin(), row.end(), [](Vote v) { return v == kAbstain; });
    const double p = abstained ? model.prior : predict_proba(model, row);
    summary.all_abstain += abstained;
    slices[r].prob_label = p;
    if (p > 0.5)
      ++summary.incident;
    else
      ++summary.non_incident;
  }
  return summary;
}

std::string format_lf_stats(const LfStats& stats, const LabelModel* model) {
  std::ostringstream out;
  out << "lf,name,coverage,overlap,conflict";
  if (model) out << ",accuracy";
  out << '\n';
  for (std::size_t i = 0; i < stats.coverage.size(); ++i) {
    char buf[160];
    const char* name = i < kCatalogSize ? lf_names()[i].c_str() : "lf";
    std::snprintf(buf, sizeof buf, "%zu,%s,%.6f,%.6f,%.6f", i + 1, name, stats.coverage[i], stats.overlap[i],
                  stats.conflict[i]);
    out << buf;
    if (model) {
      std::snprintf(buf, sizeof buf, ",%.6f", model->accuracies[i]);
      out << buf;
    }
    out << '\n';
  }
  if (model) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "prior,%.6f\n", model->prior);
    out << buf;
  }
  return out.str();
}

}  // namespace aidflow::weaklabel
