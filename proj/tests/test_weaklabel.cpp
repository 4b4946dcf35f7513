#include <algorithm>
#include <cmath>

#include "aidflow/weaklabel.hpp"
#include "doctest.h"

using namespace aidflow;
using namespace aidflow::weaklabel;

namespace {

TimeSlice make_slice(std::size_t steps, double up, double down, double up_occ, double down_occ) {
  TimeSlice s;
  s.pair_id = "A-B";
  s.steps = steps;
  s.channels.resize(steps * kChannels);
  for (std::size_t t = 0; t < steps; ++t) {
    s.channels[t * kChannels + kUpSpeed] = up;
    s.channels[t * kChannels + kDownSpeed] = down;
    s.channels[t * kChannels + kUpOccupancy] = up_occ;
    s.channels[t * kChannels + kDownOccupancy] = down_occ;
    s.channels[t * kChannels + kRelativeSpeed] = down - up;
  }
  return s;
}

void set(TimeSlice& s, std::size_t t, std::size_t ch, double v) { s.channels[t * kChannels + ch] = v; }

// Brute-force catalog used as the oracle.
std::array<Vote, kCatalogSize> oracle(const TimeSlice& s, const LfThresholds& th) {
  const std::size_t n = s.steps;
  auto tail_mean = [&](auto f) {
    const std::size_t k = std::min(th.recent_steps, n);
    double sum = 0.0;
    for (std::size_t t = n - k; t < n; ++t) sum += f(t);
    return sum / static_cast<double>(k);
  };
  auto fall = [&](std::size_t ch, std::size_t from) {
    double best = 0.0;
    for (std::size_t i = from; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) best = std::max(best, s.at(i, ch) - s.at(j, ch));
    return best;
  };
  auto rise = [&](std::size_t ch) {
    double best = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) best = std::max(best, s.at(j, ch) - s.at(i, ch));
    return best;
  };
  auto spread = [&](std::size_t ch) {
    double lo = 1e300, hi = -1e300;
    for (std::size_t t = 0; t < n; ++t) {
      lo = std::min(lo, s.at(t, ch));
      hi = std::max(hi, s.at(t, ch));
    }
    return hi - lo;
  };
  std::array<Vote, kCatalogSize> v{};
  const double sep = tail_mean([&](std::size_t t) { return s.at(t, kRelativeSpeed); });
  v[0] = sep > th.separation ? kIncident : kAbstain;
  v[1] = sep > th.strong_separation ? kIncident : kAbstain;
  v[2] = fall(kUpSpeed, 0) > th.one_sided_drop && spread(kDownSpeed) < th.one_sided_drop_steady ? kIncident : kAbstain;
  const std::size_t from = n > th.double_drop_steps ? n - th.double_drop_steps : 0;
  v[3] = fall(kUpSpeed, from) > th.double_sided_drop && fall(kDownSpeed, from) > th.double_sided_drop ? kIncident
                                                                                                      : kAbstain;
  const double occ = tail_mean([&](std::size_t t) { return s.at(t, kUpOccupancy) - s.at(t, kDownOccupancy); });
  v[4] = occ > th.occupancy_separation ? kIncident : kAbstain;
  v[5] = occ > th.strong_occupancy_separation ? kIncident : kAbstain;
  v[6] = rise(kUpOccupancy) > th.occupancy_rise && spread(kDownOccupancy) < th.occupancy_steady ? kIncident : kAbstain;
  v[7] = rise(kUpOccupancy) > th.occupancy_rise && rise(kDownOccupancy) > th.occupancy_rise ? kIncident : kAbstain;
  bool ff = true, par = true;
  for (std::size_t t = 0; t < n; ++t) {
    ff = ff && std::min(s.at(t, kUpSpeed), s.at(t, kDownSpeed)) > th.free_flow_speed &&
         std::max(s.at(t, kUpOccupancy), s.at(t, kDownOccupancy)) < th.free_flow_occupancy;
    par = par && std::abs(s.at(t, kRelativeSpeed)) < th.parallel_tolerance;
  }
  v[8] = ff ? kNormal : kAbstain;
  v[9] = par ? kNormal : kAbstain;
  return v;
}

TimeSlice random_slice(Rng& rng, std::size_t steps) {
  TimeSlice s = make_slice(steps, 0, 0, 0, 0);
  double up = 0.6 + 0.5 * rng.uniform(), down = 0.6 + 0.5 * rng.uniform();
  double uo = 0.2 * rng.uniform(), dov = 0.2 * rng.uniform();
  const double scale = 0.02 + 0.2 * rng.uniform();
  for (std::size_t t = 0; t < steps; ++t) {
    up += rng.normal(0.0, scale);
    down += rng.normal(0.0, scale * (rng.uniform() < 0.5 ? 0.1 : 1.0));
    uo = std::clamp(uo + rng.normal(0.0, scale * 0.5), 0.0, 1.0);
    dov = std::clamp(dov + rng.normal(0.0, scale * 0.3), 0.0, 1.0);
    set(s, t, kUpSpeed, up);
    set(s, t, kDownSpeed, down);
    set(s, t, kUpOccupancy, uo);
    set(s, t, kDownOccupancy, dov);
    set(s, t, kRelativeSpeed, down - up + rng.normal(0.0, 0.02));
  }
  return s;
}

/// Conditionally independent LFs with the given accuracies and coverage.
LabelMatrix simulate(const std::vector<double>& acc, double coverage, std::size_t rows, std::uint64_t seed,
                     std::vector<int>* truth = nullptr) {
  Rng rng(seed);
  LabelMatrix m(rows, acc.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = rng.uniform() < 0.5 ? 1 : -1;
    if (truth) truth->push_back(y);
    for (std::size_t i = 0; i < acc.size(); ++i) {
      if (rng.uniform() >= coverage) continue;
      m.at(r, i) = static_cast<Vote>(rng.uniform() < acc[i] ? y : -y);
    }
  }
  return m;
}

}  // namespace

TEST_CASE("one-sided drop template fires the expected functions") {
  // upstream falls from 1.0 to 0.55 halfway, downstream flat, upstream occupancy climbs
  TimeSlice s = make_slice(20, 1.0, 1.0, 0.05, 0.05);
  for (std::size_t t = 10; t < 20; ++t) {
    set(s, t, kUpSpeed, 0.55);
    set(s, t, kRelativeSpeed, 0.45);
    set(s, t, kUpOccupancy, 0.30);
  }
  const auto v = apply_lfs(s);
  CHECK(v[0] == kIncident);
  CHECK(v[1] == kIncident);
  CHECK(v[2] == kIncident);
  CHECK(v[3] == kAbstain);
  CHECK(v[4] == kIncident);
  CHECK(v[5] == kAbstain);
  CHECK(v[6] == kIncident);
  CHECK(v[7] == kAbstain);
  CHECK(v[8] == kAbstain);
  CHECK(v[9] == kAbstain);
}

TEST_CASE("double-sided drop needs a recent fall on both sides") {
  TimeSlice s = make_slice(20, 1.0, 1.0, 0.05, 0.05);
  for (std::size_t t = 15; t < 20; ++t) {
    set(s, t, kUpSpeed, 0.5);
    set(s, t, kDownSpeed, 0.6);
    set(s, t, kRelativeSpeed, 0.1);
  }
  CHECK(apply_lfs(s)[3] == kIncident);
  // same fall but outside the look-back
  TimeSlice old = make_slice(20, 1.0, 1.0, 0.05, 0.05);
  for (std::size_t t = 5; t < 20; ++t) {
    set(old, t, kUpSpeed, 0.5);
    set(old, t, kDownSpeed, 0.6);
  }
  CHECK(apply_lfs(old)[3] == kAbstain);
}

TEST_CASE("free flow votes non-incident") {
  const auto v = apply_lfs(make_slice(20, 1.0, 1.02, 0.04, 0.04));
  for (std::size_t i = 0; i < 8; ++i) CHECK(v[i] == kAbstain);
  CHECK(v[8] == kNormal);
  CHECK(v[9] == kNormal);

  // congested but parallel: only LF10
  const auto c = apply_lfs(make_slice(20, 0.5, 0.5, 0.3, 0.3));
  for (std::size_t i = 0; i < 9; ++i) CHECK(c[i] == kAbstain);
  CHECK(c[9] == kNormal);
}

TEST_CASE("catalog matches the brute-force oracle") {
  Rng rng(21);
  LfThresholds th;
  for (int i = 0; i < 3000; ++i) {
    const std::size_t steps = 2 + rng.below(30);
    const auto s = random_slice(rng, steps);
    CHECK(apply_lfs(s, th) == oracle(s, th));
  }
  // tighter thresholds make every function fire on some slices
  th.parallel_tolerance = 0.5;
  th.free_flow_speed = 0.3;
  th.free_flow_occupancy = 0.5;
  th.double_drop_steps = 3;
  std::array<int, kCatalogSize> fired{};
  for (int i = 0; i < 3000; ++i) {
    const auto s = random_slice(rng, 2 + rng.below(30));
    const auto v = apply_lfs(s, th);
    CHECK(v == oracle(s, th));
    for (std::size_t k = 0; k < kCatalogSize; ++k) fired[k] += v[k] != kAbstain;
  }
  for (int f : fired) CHECK(f > 0);
}

TEST_CASE("raising a threshold never adds votes") {
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    const auto s = random_slice(rng, 20);
    LfThresholds lo, hi;
    hi.separation = lo.separation + 0.1;
    hi.one_sided_drop = lo.one_sided_drop + 0.1;
    hi.occupancy_separation = lo.occupancy_separation + 0.05;
    hi.occupancy_rise = lo.occupancy_rise + 0.05;
    const auto a = apply_lfs(s, lo), b = apply_lfs(s, hi);
    for (std::size_t k : {0u, 2u, 4u, 6u, 7u})
      if (b[k] != kAbstain) CHECK(a[k] == b[k]);
  }
}

TEST_CASE("slice shape is checked") {
  TimeSlice s = make_slice(1, 1, 1, 0, 0);
  CHECK_THROWS_AS(apply_lfs(s), ShapeError);
  s = make_slice(5, 1, 1, 0, 0);
  s.channels.pop_back();
  CHECK_THROWS_AS(apply_lfs(s), ShapeError);
}

TEST_CASE("lf_stats example") {
  LabelMatrix m(4, 3);
  // rows: (+1, +1, 0), (+1, -1, 0), (0, 0, -1), (0, 0, 0)
  m.at(0, 0) = 1;
  m.at(0, 1) = 1;
  m.at(1, 0) = 1;
  m.at(1, 1) = -1;
  m.at(2, 2) = -1;
  const auto s = lf_stats(m);
  CHECK(s.coverage == std::vector<double>{0.5, 0.5, 0.25});
  CHECK(s.overlap == std::vector<double>{0.5, 0.5, 0.0});
  CHECK(s.conflict == std::vector<double>{0.25, 0.25, 0.0});
  CHECK_THROWS_AS(lf_stats(LabelMatrix(0, 3)), Error);
}

TEST_CASE("lf_stats invariants") {
  Rng rng(9);
  LabelMatrix m(300, 10);
  for (auto& v : m.votes) v = static_cast<Vote>(static_cast<int>(rng.below(3)) - 1);
  const auto s = lf_stats(m);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(s.conflict[i] <= s.overlap[i]);
    CHECK(s.overlap[i] <= s.coverage[i]);
    CHECK(s.coverage[i] <= 1.0);
  }
}

TEST_CASE("triplet method recovers simulated accuracies") {
  const std::vector<double> acc{0.9, 0.8, 0.7};
  const auto model = fit_label_model(simulate(acc, 1.0, 10000, 1));
  REQUIRE(model.accuracies.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(model.accuracies[i] - acc[i]) <= 0.05);
  CHECK(model.fallback_lfs.empty());
  CHECK(std::abs(model.prior - 0.5) < 0.03);

  // partial coverage
  const auto partial = fit_label_model(simulate({0.9, 0.8, 0.7, 0.85}, 0.6, 20000, 2));
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(std::abs(partial.accuracies[i] - std::vector<double>{0.9, 0.8, 0.7, 0.85}[i]) <= 0.05);
}

TEST_CASE("estimation error shrinks with more samples") {
  const std::vector<double> acc{0.9, 0.8, 0.7, 0.75};
  auto mae = [&](std::size_t n) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto m = fit_label_model(simulate(acc, 1.0, n, 100 + seed));
      for (std::size_t i = 0; i < acc.size(); ++i) total += std::abs(m.accuracies[i] - acc[i]);
    }
    return total / 40.0;
  };
  CHECK(mae(100000) < mae(1000));
}

TEST_CASE("perfect functions saturate at the ceiling") {
  const auto m = fit_label_model(simulate({1.0, 1.0, 1.0}, 1.0, 2000, 3));
  for (double a : m.accuracies) CHECK(a == 0.99);
}

TEST_CASE("an anti-correlated pair leaves the other estimates unchanged") {
  const std::vector<double> good{0.9, 0.8, 0.7};
  const std::size_t n = 20000;
  const auto base = fit_label_model(simulate(good, 1.0, n, 5));
  auto m = simulate({0.9, 0.8, 0.7, 0.75, 0.5}, 1.0, n, 5);
  for (std::size_t r = 0; r < n; ++r) m.at(r, 4) = static_cast<Vote>(-m.at(r, 3));
  const auto with_pair = fit_label_model(m);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(with_pair.accuracies[i] - base.accuracies[i]) <= 0.05);
}

TEST_CASE("silent functions fall back") {
  auto m = simulate({0.9, 0.8, 0.7}, 1.0, 1000, 6);
  LabelMatrix wide(1000, 4);
  for (std::size_t r = 0; r < 1000; ++r)
    for (std::size_t c = 0; c < 3; ++c) wide.at(r, c) = m.at(r, c);
  const auto model = fit_label_model(wide);
  CHECK(model.fallback_lfs == std::vector<std::size_t>{3});
  CHECK(model.accuracies[3] == 0.7);
  CHECK(model.coverages[3] == 0.0);
  CHECK_THROWS_AS(fit_label_model(LabelMatrix(10, 2)), Error);
  LabelModelConfig bad;
  bad.prior = 1.0;
  CHECK_THROWS_AS(fit_label_model(wide, bad), ConfigError);
}

TEST_CASE("posterior examples") {
  LabelModel m;
  m.accuracies = {0.9, 0.8, 0.7};
  m.prior = 0.5;
  const std::vector<Vote> none{0, 0, 0};
  CHECK(predict_proba(m, none) == doctest::Approx(0.5));
  const std::vector<Vote> one{1, 0, 0};
  CHECK(predict_proba(m, one) == doctest::Approx(0.9));
  // odds 9 * 4 / (7/3) = 108/7
  const std::vector<Vote> mixed{1, 1, -1};
  CHECK(predict_proba(m, mixed) == doctest::Approx(108.0 / 115.0));
  m.prior = 0.25;
  CHECK(predict_proba(m, none) == doctest::Approx(0.25));
  const std::vector<Vote> wrong{1, 1};
  CHECK_THROWS_AS(predict_proba(m, wrong), ShapeError);
}

TEST_CASE("posterior symmetry and monotonicity") {
  Rng rng(12);
  for (int i = 0; i < 300; ++i) {
    LabelModel m;
    for (int k = 0; k < 5; ++k) m.accuracies.push_back(0.5 + 0.49 * rng.uniform());
    m.prior = 0.5;
    std::vector<Vote> v(5), neg(5);
    for (int k = 0; k < 5; ++k) {
      v[k] = static_cast<Vote>(static_cast<int>(rng.below(3)) - 1);
      neg[k] = static_cast<Vote>(-v[k]);
    }
    CHECK(predict_proba(m, v) + predict_proba(m, neg) == doctest::Approx(1.0));
    const std::size_t k = rng.below(5);
    if (v[k] == kIncident) continue;
    auto up = v;
    up[k] = static_cast<Vote>(v[k] + 1);
    CHECK(predict_proba(m, up) >= predict_proba(m, v));
  }
}

TEST_CASE("label_training_set partitions the slices") {
  std::vector<TimeSlice> slices(50, make_slice(4, 1, 1, 0, 0));
  auto m = simulate({0.9, 0.8, 0.7}, 0.5, 50, 7);
  for (std::size_t c = 0; c < 3; ++c) m.at(0, c) = kAbstain;
  LabelModel model;
  model.accuracies = {0.9, 0.8, 0.7};
  model.prior = 0.3;
  const auto summary = label_training_set(slices, m, model);
  CHECK(summary.incident + summary.non_incident == 50);
  CHECK(summary.all_abstain >= 1);
  CHECK(*slices[0].prob_label == 0.3);
  std::size_t above = 0;
  for (const auto& s : slices) {
    REQUIRE(s.prob_label);
    above += *s.prob_label > 0.5;
  }
  CHECK(above == summary.incident);
  std::vector<TimeSlice> fewer(49, slices[0]);
  CHECK_THROWS_AS(label_training_set(fewer, m, model), ShapeError);
}

TEST_CASE("weak labels beat any single function") {
  std::vector<int> truth;
  const std::vector<double> acc{0.85, 0.8, 0.75, 0.7, 0.8};
  const auto m = simulate(acc, 1.0, 5000, 8, &truth);
  const auto model = fit_label_model(m);
  std::size_t right = 0;
  for (std::size_t r = 0; r < m.rows(); ++r) right += (predict_proba(model, m.row(r)) > 0.5 ? 1 : -1) == truth[r];
  CHECK(static_cast<double>(right) / 5000.0 > 0.9);
}

TEST_CASE("parallel and serial label matrices agree") {
  Rng rng(30);
  std::vector<TimeSlice> slices;
  for (int i = 0; i < 400; ++i) slices.push_back(random_slice(rng, 20));
  CHECK(apply_lfs(slices).votes == reference::apply_lfs(slices).votes);
}
