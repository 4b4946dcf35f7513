#include <algorithm>
#include <cmath>

#include "aidflow/preprocess.hpp"
#include "aidflow/synthgen.hpp"
#include "doctest.h"

using namespace aidflow;
using namespace aidflow::preprocess;

namespace {

constexpr Timestamp T0 = 1546300800;

MeasurementSeries series(std::string id, std::vector<Timestamp> ts, std::vector<double> speed) {
  MeasurementSeries s;
  s.detector_id = std::move(id);
  s.timestamps = std::move(ts);
  s.speed = std::move(speed);
  s.volume.assign(s.speed.size(), 1.0);
  s.occupancy.assign(s.speed.size(), 0.05);
  return s;
}

MeasurementSeries regular(std::string id, std::size_t n, double speed, Timestamp t0 = T0) {
  std::vector<Timestamp> ts(n);
  for (std::size_t i = 0; i < n; ++i) ts[i] = t0 + 30 * static_cast<Timestamp>(i);
  return series(std::move(id), ts, std::vector<double>(n, speed));
}

PairSeries pair_of(MeasurementSeries up, MeasurementSeries down) {
  PairSeries p;
  p.pair_id = up.detector_id + "-" + down.detector_id;
  p.upstream = std::move(up);
  p.downstream = std::move(down);
  return p;
}

/// Independent linear interpolation at t over raw samples, clamped at the ends.
double interp_oracle(const std::vector<Timestamp>& ts, const std::vector<double>& v, Timestamp t) {
  if (t <= ts.front()) return v.front();
  if (t >= ts.back()) return v.back();
  for (std::size_t i = 1; i < ts.size(); ++i)
    if (ts[i] >= t) {
      const double w = static_cast<double>(t - ts[i - 1]) / static_cast<double>(ts[i] - ts[i - 1]);
      return v[i - 1] + w * (v[i] - v[i - 1]);
    }
  return v.back();
}

/// Direct truncated EMA from the definition.
double ema_oracle(const std::vector<double>& x, std::size_t t, std::size_t window, double alpha) {
  double num = 0.0, den = 0.0;
  for (std::size_t j = 0; j < window && j <= t; ++j) {
    const double w = std::pow(1.0 - alpha, static_cast<double>(j));
    num += w * x[t - j];
    den += w;
  }
  return num / den;
}

}  // namespace

TEST_CASE("align: midpoint interpolation") {
  const auto s = series("A", {0, 60}, {10.0, 20.0});
  const auto a = align_timestamps(s, 30);
  REQUIRE(a.size() == 3);
  CHECK(a.timestamps[1] == 30);
  CHECK(a.speed[1] == doctest::Approx(15.0));
}

TEST_CASE("align: on-grid series unchanged") {
  const auto s = series("A", {0, 30, 60, 90}, {1.0, 4.0, 2.0, 8.0});
  const auto a = align_timestamps(s, 30);
  CHECK(a.timestamps == s.timestamps);
  CHECK(a.speed == s.speed);
}

TEST_CASE("align: clamped ends and oracle agreement") {
  Rng rng(4);
  std::vector<Timestamp> ts;
  std::vector<double> v;
  Timestamp t = 95;
  for (int i = 0; i < 200; ++i) {
    ts.push_back(t);
    v.push_back(rng.uniform(0.0, 70.0));
    t += 10 + static_cast<Timestamp>(rng.below(40));
  }
  const auto s = series("A", ts, v);
  const Grid grid{0, t + 300, 30};
  const auto a = align_timestamps(s, 30, grid);
  REQUIRE(a.size() == grid.size());
  CHECK(a.speed.front() == v.front());
  CHECK(a.speed.back() == v.back());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.speed[i] == doctest::Approx(interp_oracle(ts, v, a.timestamps[i])));
}

TEST_CASE("align: wide gaps become missing") {
  const auto s = series("A", {0, 30, 300, 330}, {1.0, 1.0, 2.0, 2.0});
  const auto a = align_timestamps(s, 30, std::nullopt, 60);
  CHECK(!std::isnan(a.speed[1]));
  CHECK(std::isnan(a.speed[5]));
  CHECK(a.speed[10] == 2.0);
}

TEST_CASE("align: errors") {
  CHECK_THROWS_AS(align_timestamps(series("A", {0}, {1.0}), 30), AlignmentError);
  CHECK_THROWS_AS(align_timestamps(series("A", {}, {}), 30), AlignmentError);
  CHECK_THROWS_AS(align_timestamps(series("A", {0, 0}, {1.0, 2.0}), 30), AlignmentError);
}

TEST_CASE("lane aggregation") {
  CHECK(aggregate_lanes(std::vector<double>{60, 70}, std::vector<double>{10, 10}) == 65.0);
  CHECK(aggregate_lanes(std::vector<double>{60, 80}, std::vector<double>{30, 10}) == 65.0);
  CHECK(aggregate_lanes(std::vector<double>{55}, std::vector<double>{0}) == 55.0);
  CHECK(aggregate_lanes(std::vector<double>{50, 70}, std::vector<double>{0, 0}) == 60.0);
  CHECK_THROWS_AS(aggregate_lanes(std::vector<double>{}, std::vector<double>{}), Error);
  CHECK_THROWS_AS(aggregate_lanes(std::vector<double>{50}, std::vector<double>{-1}), Error);
}

TEST_CASE("aggregate_series collapses lanes") {
  MeasurementSeries s = series("A", {0, 30}, {0.0, 0.0});
  s.lane_speed = {{60, 50}, {80, 70}};
  s.lane_volume = {{30, 0}, {10, 0}};
  s.lane_occupancy = {{0.1, 0.2}, {0.3, 0.4}};
  const auto a = aggregate_series(s);
  CHECK(a.speed[0] == 65.0);
  CHECK(a.speed[1] == 60.0);
  CHECK(a.volume[0] == 40.0);
  CHECK(a.occupancy[1] == doctest::Approx(0.3));
}

TEST_CASE("fill: forward fill of interior gaps") {
  const double nan = std::nan("");
  const auto s = series("A", {0, 30, 60, 90}, {10.0, nan, nan, 16.0});
  const auto r = fill_missing(s, 1.0, {});
  CHECK(r.series.speed == std::vector<double>{10, 10, 10, 16});
  CHECK(r.forward_filled == 2);
  const auto clean = series("A", {0, 30}, {1.0, 2.0});
  CHECK(fill_missing(clean, 1.0, {}).series.speed == clean.speed);
}

TEST_CASE("fill: first sample from the spatial spline") {
  const double nan = std::nan("");
  const auto target = series("T", {0, 30}, {nan, 61.0});
  const auto a = series("A", {0, 30}, {50.0, 50.0});
  const auto c = series("C", {0, 30}, {70.0, 70.0});
  const std::vector<Neighbor> line{{1.0, &a}, {3.0, &c}};
  const auto r = fill_missing(target, 2.0, line);
  CHECK(r.series.speed[0] == doctest::Approx(60.0));
  CHECK(r.spatially_filled == 1);
  CHECK_THROWS_AS(fill_missing(target, 2.0, std::vector<Neighbor>{{1.0, &a}}), Error);
}

TEST_CASE("natural cubic spline") {
  const std::vector<double> x{1, 2, 3}, y{50, 60, 70};
  CHECK(natural_cubic_spline(x, y, 2.0) == doctest::Approx(60.0));
  CHECK(natural_cubic_spline(x, y, 1.5) == doctest::Approx(55.0));
  // Natural spline through 4 knots of x^3 reproduces the knots.
  const std::vector<double> xs{0, 1, 2, 3}, ys{0, 1, 8, 27};
  for (std::size_t i = 0; i < xs.size(); ++i) CHECK(natural_cubic_spline(xs, ys, xs[i]) == doctest::Approx(ys[i]));
  CHECK_THROWS_AS(natural_cubic_spline(std::vector<double>{1}, std::vector<double>{1}, 1.0), Error);
}

TEST_CASE("ema examples") {
  const std::vector<double> flat(12, 55.0);
  for (double v : ema_smooth(flat, 5, 0.33)) CHECK(v == doctest::Approx(55.0).epsilon(1e-14));
  const std::vector<double> step{0, 0, 0, 0, 100};
  const double expected = 100.0 / (1 + 0.67 + 0.4489 + 0.300763 + 0.20151121);
  CHECK(ema_smooth(step, 5, 0.33).back() == doctest::Approx(expected).epsilon(1e-12));
  CHECK(ema_smooth(step, 5, 0.33).back() == doctest::Approx(38.15).epsilon(1e-3));
  const std::vector<double> x{3, 1, 4, 1, 5, 9, 2, 6};
  CHECK(ema_smooth(x, 1, 0.33) == x);
  CHECK_THROWS_AS(ema_smooth(x, 0, 0.33), Error);
}

TEST_CASE("ema matches the definition and is convex (fuzz)") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(80);
    const std::size_t window = 1 + rng.below(8);
    const double alpha = rng.uniform(0.01, 0.99);
    std::vector<double> x(n);
    for (auto& v : x) v = rng.uniform(-50.0, 120.0);
    const auto y = ema_smooth(x, window, alpha);
    for (std::size_t t = 0; t < n; ++t) {
      CHECK(y[t] == doctest::Approx(ema_oracle(x, t, window, alpha)).epsilon(1e-12));
      const std::size_t lo = t + 1 >= window ? t + 1 - window : 0;
      const auto [mn, mx] = std::minmax_element(x.begin() + static_cast<std::ptrdiff_t>(lo), x.begin() + static_cast<std::ptrdiff_t>(t) + 1);
      CHECK(y[t] >= *mn - 1e-9);
      CHECK(y[t] <= *mx + 1e-9);
    }
  }
}

TEST_CASE("quality statistics") {
  auto windows_with = [](std::vector<double> derivs) {
    std::vector<std::vector<double>> out;
    for (double d : derivs) out.push_back({0.0, d, 0.0});
    return out;
  };
  auto s = fit_quality_stats(windows_with({1, 1, 1}));
  CHECK(s.mu_d == 1.0);
  CHECK(s.sigma_d == 0.0);
  s = fit_quality_stats(windows_with({1, 3}));
  CHECK(s.mu_d == 2.0);
  CHECK(s.sigma_d == 1.0);
  CHECK_THROWS_AS(fit_quality_stats(windows_with({1})), Error);
  CHECK_THROWS_AS(fit_quality_stats(std::vector<std::vector<double>>{{1.0}, {1.0, 2.0}}), Error);

  const QualityStats st{0.5, 0.2, 3600};
  const std::vector<double> flat(10, 3.0);
  CHECK(quality_filter(flat, st) == QualityVerdict::fail);
  const std::vector<double> exact{0.0, 0.5, 1.0, 1.5};
  CHECK(mean_abs_derivative(exact) == 0.5);
  CHECK(quality_filter(exact, st) == QualityVerdict::pass);
}

TEST_CASE("quality filter: widening k never turns a pass into a fail") {
  Rng rng(8);
  for (int i = 0; i < 500; ++i) {
    const QualityStats st{rng.uniform(0.1, 2.0), rng.uniform(0.0, 1.0), 3600};
    std::vector<double> w(2 + rng.below(30));
    for (auto& v : w) v = rng.uniform(0.0, 4.0);
    const double k1 = rng.uniform(0.0, 5.0), k2 = k1 + rng.uniform(0.0, 5.0);
    if (quality_filter(w, st, k1) == QualityVerdict::pass) CHECK(quality_filter(w, st, k2) == QualityVerdict::pass);
  }
}

TEST_CASE("split_windows aligns to the span") {
  std::vector<Timestamp> ts;
  for (Timestamp t = 3000; t < 3000 + 3 * 3600; t += 30) ts.push_back(t);
  const auto w = split_windows(ts, 3600);
  REQUIRE(w.size() == 4);
  CHECK(w[0].window_start == 0);
  CHECK(w[0].last - w[0].first == 20);
  CHECK(w[1].last - w[1].first == 120);
  std::size_t total = 0;
  for (const auto& r : w) total += r.last - r.first;
  CHECK(total == ts.size());
}

TEST_CASE("offset: constant gap is neutralized") {
  const auto p = pair_of(regular("U", 400, 60.0), regular("D", 400, 65.0));
  const auto o = offset_upstream(p, 3600, {});
  for (std::size_t i = 0; i < 400; ++i) {
    CHECK(std::abs(o.downstream.speed[i] - o.upstream.speed[i]) < 1e-9);
    CHECK(o.offset_applied[i] == doctest::Approx(5.0));
  }
  // Second pass on corrected data changes nothing.
  const auto twice = offset_upstream(o, 3600, {});
  for (std::size_t i = 0; i < 400; ++i) CHECK(std::abs(twice.upstream.speed[i] - o.upstream.speed[i]) < 1e-9);

  const auto z = offset_upstream(pair_of(regular("U", 50, 60.0), regular("D", 50, 60.0)), 3600, {});
  for (std::size_t i = 0; i < 50; ++i) CHECK(z.upstream.speed[i] == 60.0);
}

TEST_CASE("offset: masked incident keeps the pre-incident offset") {
  auto up = regular("U", 480, 60.0);
  auto down = regular("D", 480, 65.0);
  std::vector<std::uint8_t> mask(480, 0);
  for (std::size_t i = 120; i < 240; ++i) {
    up.speed[i] = 40.0;  // gap widens to 25
    mask[i] = 1;
  }
  const auto o = offset_upstream(pair_of(up, down), 3600, mask);
  for (std::size_t i = 120; i < 240; ++i) CHECK(o.offset_applied[i] == doctest::Approx(5.0));
  const auto unmasked = offset_upstream(pair_of(up, down), 3600, {});
  CHECK(unmasked.offset_applied[239] > 20.0);
}

TEST_CASE("offset: fully masked start holds the initial offset") {
  const auto p = pair_of(regular("U", 10, 60.0), regular("D", 10, 64.0));
  const std::vector<std::uint8_t> mask(10, 1);
  const auto o = offset_upstream(p, 3600, mask, 2.5);
  for (double v : o.offset_applied) CHECK(v == 2.5);
  CHECK_THROWS_AS(offset_upstream(p, 3600, std::vector<std::uint8_t>(3, 0)), ShapeError);
}

TEST_CASE("references and normalization") {
  synthgen::SynthConfig cfg;
  cfg.days = 2;
  cfg.detector_pairs = 2;
  cfg.incident_rate = 0.0;
  const auto c = synthgen::generate_corpus(cfg);
  for (const auto& s : c.series) {
    const auto a = ema_smooth(align_timestamps(s, 30, Grid{c.begin, c.end, 30}), 5, 0.33);
    const auto r = fit_references(pair_of(a, a), c.begin, c.end);
    std::vector<double> v;
    for (double x : a.speed)
      if (!std::isnan(x)) v.push_back(x);
    std::sort(v.begin(), v.end());
    const double pos = 0.95 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const double want = v[lo] + (pos - static_cast<double>(lo)) * (v[std::min(lo + 1, v.size() - 1)] - v[lo]);
    CHECK(r.ref_speed_up == doctest::Approx(want).epsilon(1e-12));
    CHECK(r.ref_speed_down == r.ref_speed_up);
    // free-flow speeds of the generator
    CHECK(r.ref_speed_up > 55.0);
    CHECK(r.ref_speed_up < 80.0);
  }

  auto p = pair_of(regular("U", 4, 50.0), regular("D", 4, 100.0));
  p.upstream.speed = {50.0, 0.0, 200.0, 25.0};
  const auto n = normalize(p, References{50.0, 100.0});
  CHECK(n.upstream.speed[0] == 1.0);
  CHECK(n.upstream.speed[1] == 0.0);
  CHECK(n.upstream.speed[2] == 1.5);
  CHECK(n.upstream.speed[3] == 0.5);
  CHECK(n.downstream.speed[0] == 1.0);
  CHECK(n.upstream.occupancy == p.upstream.occupancy);
  CHECK(n.normalized);
  CHECK_THROWS_AS(normalize(p, References{0.0, 1.0}), Error);
  CHECK_THROWS_AS(fit_references(p, T0, T0 + 3600), Error);
}

TEST_CASE("slicing") {
  const auto p = pair_of(regular("U", 120, 0.9), regular("D", 120, 1.0));
  CHECK(make_slices(p, 20, 1).size() == 101);
  CHECK(make_slices(pair_of(regular("U", 20, 1.0), regular("D", 20, 1.0)), 20, 1).size() == 1);
  CHECK(make_slices(pair_of(regular("U", 19, 1.0), regular("D", 19, 1.0)), 20, 1).empty());

  const auto s = make_slices(p, 20, 1).front();
  CHECK(s.steps == 20);
  CHECK(s.channels.size() == 100);
  CHECK(s.at(0, kRelativeSpeed) == doctest::Approx(0.1));
  CHECK(s.t_end == T0 + 19 * 30);

  const Interval inc{T0 + 40 * 30, T0 + 60 * 30};
  const std::vector<Interval> reported{inc};
  for (const auto& sl : make_slices(p, 20, 1, reported, std::span<const Interval>(reported))) {
    const bool inside = sl.t_end >= inc.begin && sl.t_end <= inc.end;
    CHECK(sl.reported_label == (inside ? 1 : 0));
    CHECK(sl.true_label == (inside ? 1 : 0));
  }
  CHECK(!make_slices(p, 20, 1, reported).front().true_label.has_value());
}

TEST_CASE("slice count formula (fuzz)") {
  Rng rng(2);
  for (int i = 0; i < 300; ++i) {
    const std::size_t steps = 1 + rng.below(25), stride = 1 + rng.below(7);
    const std::size_t length = steps + rng.below(80);
    const auto p = pair_of(regular("U", length, 1.0), regular("D", length, 1.0));
    const auto slices = make_slices(p, steps, stride);
    CHECK(slices.size() == slice_count(length, steps, stride));
    CHECK(slices.size() == (length - steps) / stride + 1);
  }
}

TEST_CASE("interval mask") {
  std::vector<Timestamp> ts;
  for (int i = 0; i < 10; ++i) ts.push_back(i * 30);
  const std::vector<Interval> ivs{{90, 120}};
  const auto m = interval_mask(ts, ivs);
  CHECK(m == std::vector<std::uint8_t>{0, 0, 0, 1, 1, 0, 0, 0, 0, 0});
  const auto wide = interval_mask(ts, ivs, 30);
  CHECK(wide == std::vector<std::uint8_t>{0, 0, 1, 1, 1, 1, 0, 0, 0, 0});
}

TEST_CASE("options validation") {
  Options o;
  o.validate();
  o.ema_alpha = 1.0;
  CHECK_THROWS_AS(o.validate(), ConfigError);
  o = {};
  o.history_steps = 0;
  CHECK_THROWS_AS(o.validate(), ConfigError);
}
