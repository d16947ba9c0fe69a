#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "fd_check.hpp"
#include "tdcnet/common.hpp"
#include "tdcnet/metrics.hpp"

using namespace tdc;
using tdc::testing::rand_tensor;

namespace {

Tensor row(std::vector<double> v) {
  Shape s = {1, 1, 1, static_cast<int>(v.size())};
  return Tensor::from_data(s, std::move(v));
}

MetricsReport loop_oracle(const Tensor& pred, const Tensor& gt,
                          const Tensor& region) {
  double sq = 0, rel = 0, ab = 0;
  int64_t n = 0, h105 = 0, h110 = 0, h125 = 0;
  for (size_t i = 0; i < pred.values().size(); ++i) {
    if (region.values()[i] == 0.0) continue;
    double d = pred.values()[i], ds = gt.values()[i];
    sq += (d - ds) * (d - ds);
    ab += std::abs(d - ds);
    rel += std::abs(d - ds) / ds;
    double ratio = std::max(d / ds, ds / d);
    if (ratio < 1.05) ++h105;
    if (ratio < 1.10) ++h110;
    if (ratio < 1.25) ++h125;
    ++n;
  }
  MetricsReport r;
  r.rmse = std::sqrt(sq / n);
  r.rel = rel / n;
  r.mae = ab / n;
  r.delta_105 = 100.0 * h105 / n;
  r.delta_110 = 100.0 * h110 / n;
  r.delta_125 = 100.0 * h125 / n;
  r.n_pixels = n;
  return r;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("three-pixel hand case") {
  MetricsReport r = compute_metrics(row({1, 2, 3}), row({1, 2, 4}),
                                    row({1, 1, 1}));
  CHECK(r.rmse == doctest::Approx(0.5773502691896258).epsilon(1e-9));
  CHECK(r.rel == doctest::Approx(1.0 / 12).epsilon(1e-9));
  CHECK(r.mae == doctest::Approx(1.0 / 3).epsilon(1e-9));
  CHECK(r.delta_105 == doctest::Approx(200.0 / 3).epsilon(1e-9));
  CHECK(r.delta_110 == doctest::Approx(200.0 / 3).epsilon(1e-9));
  CHECK(r.delta_125 == doctest::Approx(200.0 / 3).epsilon(1e-9));
  CHECK(r.n_pixels == 3);
  CHECK(r.n_samples == 1);
}

TEST_CASE("two-pixel delta thresholds") {
  MetricsReport r = compute_metrics(row({1.0, 1.2}), row({1.0, 1.0}),
                                    row({1, 1}));
  CHECK(r.delta_105 == doctest::Approx(50.0).epsilon(1e-9));
  CHECK(r.delta_110 == doctest::Approx(50.0).epsilon(1e-9));
  CHECK(r.delta_125 == doctest::Approx(100.0).epsilon(1e-9));
}

TEST_CASE("perfect prediction") {
  Rng rng(3);
  Tensor gt = rand_tensor({1, 1, 6, 6}, rng, 0.5, 3.0);
  MetricsReport r = compute_metrics(gt, gt, Tensor::full({1, 1, 6, 6}, 1.0));
  CHECK(r.rmse == doctest::Approx(0.0));
  CHECK(r.rel == doctest::Approx(0.0));
  CHECK(r.mae == doctest::Approx(0.0));
  CHECK(r.delta_105 == doctest::Approx(100.0));
  CHECK(r.delta_110 == doctest::Approx(100.0));
  CHECK(r.delta_125 == doctest::Approx(100.0));
}

TEST_CASE("vectorized metrics equal the scalar loop oracle") {
  Rng rng(5);
  Tensor pred = rand_tensor({2, 1, 8, 8}, rng, 0.2, 4.0);
  Tensor gt = rand_tensor({2, 1, 8, 8}, rng, 0.2, 4.0);
  Tensor region = Tensor::zeros({2, 1, 8, 8});
  Rng rr(6);
  for (auto& v : region.values()) v = rr.bernoulli(0.7) ? 1.0 : 0.0;

  MetricsReport got = compute_metrics(pred, gt, region);
  MetricsReport want = loop_oracle(pred, gt, region);
  CHECK(got.rmse == doctest::Approx(want.rmse).epsilon(1e-9));
  CHECK(got.rel == doctest::Approx(want.rel).epsilon(1e-9));
  CHECK(got.mae == doctest::Approx(want.mae).epsilon(1e-9));
  CHECK(got.delta_105 == doctest::Approx(want.delta_105).epsilon(1e-9));
  CHECK(got.delta_110 == doctest::Approx(want.delta_110).epsilon(1e-9));
  CHECK(got.delta_125 == doctest::Approx(want.delta_125).epsilon(1e-9));
  CHECK(got.n_pixels == want.n_pixels);
}

TEST_CASE("delta thresholds are nested and metrics permutation-invariant") {
  Rng rng(7);
  Tensor pred = rand_tensor({1, 1, 1, 32}, rng, 0.2, 4.0);
  Tensor gt = rand_tensor({1, 1, 1, 32}, rng, 0.2, 4.0);
  Tensor region = Tensor::full({1, 1, 1, 32}, 1.0);
  MetricsReport r = compute_metrics(pred, gt, region);
  CHECK(r.delta_105 <= r.delta_110);
  CHECK(r.delta_110 <= r.delta_125);
  CHECK(r.delta_125 <= 100.0);

  // Shuffle pixels in lockstep; pooled metrics cannot move.
  std::vector<int> idx(32);
  for (int i = 0; i < 32; ++i) idx[i] = i;
  Rng perm(8);
  perm.shuffle(idx);
  Tensor pp = Tensor::zeros({1, 1, 1, 32});
  Tensor gp = Tensor::zeros({1, 1, 1, 32});
  for (int i = 0; i < 32; ++i) {
    pp.values()[i] = pred.values()[idx[i]];
    gp.values()[i] = gt.values()[idx[i]];
  }
  MetricsReport rp = compute_metrics(pp, gp, region);
  CHECK(rp.rmse == doctest::Approx(r.rmse).epsilon(1e-12));
  CHECK(rp.rel == doctest::Approx(r.rel).epsilon(1e-12));
  CHECK(rp.delta_105 == doctest::Approx(r.delta_105));
}

TEST_CASE("joint scaling moves absolute metrics only") {
  Rng rng(9);
  Tensor pred = rand_tensor({1, 1, 4, 4}, rng, 0.2, 4.0);
  Tensor gt = rand_tensor({1, 1, 4, 4}, rng, 0.2, 4.0);
  Tensor region = Tensor::full({1, 1, 4, 4}, 1.0);
  MetricsReport a = compute_metrics(pred, gt, region);

  double s = 3.7;
  MetricsReport b = compute_metrics(mul_scalar(pred, s), mul_scalar(gt, s),
                                    region);
  CHECK(b.rmse == doctest::Approx(s * a.rmse).epsilon(1e-9));
  CHECK(b.mae == doctest::Approx(s * a.mae).epsilon(1e-9));
  CHECK(b.rel == doctest::Approx(a.rel).epsilon(1e-9));
  CHECK(b.delta_105 == doctest::Approx(a.delta_105));
  CHECK(b.delta_110 == doctest::Approx(a.delta_110));
  CHECK(b.delta_125 == doctest::Approx(a.delta_125));
}

TEST_CASE("pooled accumulation merges samples by pixel count") {
  MetricsAccumulator acc;
  acc.add(row({1, 2}), row({1, 2}), row({1, 1}), "a");
  acc.add(row({2, 2, 2, 2}), row({1, 1, 1, 1}), row({1, 1, 1, 1}), "b");
  MetricsReport r = acc.report();
  CHECK(r.n_samples == 2);
  CHECK(r.n_pixels == 6);
  // 4 of 6 pooled pixels carry |d-d*| = 1.
  CHECK(r.mae == doctest::Approx(4.0 / 6).epsilon(1e-12));
  CHECK(r.rmse == doctest::Approx(std::sqrt(4.0 / 6)).epsilon(1e-12));
  CHECK(r.delta_105 == doctest::Approx(200.0 / 6).epsilon(1e-12));

  // Per-image averaging weights both samples equally instead.
  MetricsReport ra = compute_metrics(row({1, 2}), row({1, 2}), row({1, 1}));
  MetricsReport rb = compute_metrics(row({2, 2, 2, 2}), row({1, 1, 1, 1}),
                                     row({1, 1, 1, 1}));
  MetricsReport avg = average_reports({ra, rb});
  CHECK(avg.mae == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(avg.delta_105 == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(avg.n_pixels == 6);
  CHECK(avg.n_samples == 2);
}

TEST_CASE("errors: empty region and bad ground truth") {
  CHECK_THROWS_AS(compute_metrics(row({1}), row({1}), row({0})),
                  EmptyRegionError);
  CHECK_THROWS_AS(compute_metrics(row({1}), row({0.0}), row({1}), "s42"),
                  DataError);
  try {
    compute_metrics(row({1}), row({-1.0}), row({1}), "s42");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("s42") != std::string::npos);
  }
  CHECK_THROWS_AS(compute_metrics(row({1}), row({1, 2}), row({1})),
                  ShapeError);
}

TEST_CASE("zero prediction misses every delta threshold") {
  MetricsReport r = compute_metrics(row({0.0, 1.0}), row({1.0, 1.0}),
                                    row({1, 1}));
  CHECK(r.delta_105 == doctest::Approx(50.0));
  CHECK(r.delta_125 == doctest::Approx(50.0));
}

TEST_CASE("error map renders fixed-scale relative error with gray outside") {
  Tensor pred = row({1.0, 1.1, 1.2, 9.0});
  Tensor gt = row({1.0, 1.0, 1.0, 1.0});
  Tensor region = row({1, 1, 1, 0});
  Tensor img = error_map(pred, gt, region);
  REQUIRE(img.shape() == Shape({3, 1, 4}));
  for (int c = 0; c < 3; ++c)
    CHECK(img.values()[c * 4 + 3] == doctest::Approx(128.0 / 255.0));
  // zero error vs full-scale error use different colors
  bool differs = false;
  for (int c = 0; c < 3; ++c)
    if (std::abs(img.values()[c * 4 + 0] - img.values()[c * 4 + 2]) > 0.2)
      differs = true;
  CHECK(differs);

  // uniform 10% error: identical color inside the region
  Tensor mid = error_map(row({1.1, 1.1}), row({1.0, 1.0}), row({1, 1}));
  for (int c = 0; c < 3; ++c)
    CHECK(mid.values()[c * 2 + 0] == doctest::Approx(mid.values()[c * 2 + 1]));
}

TEST_CASE("report json carries all fields") {
  MetricsReport r = compute_metrics(row({1, 2}), row({1, 2}), row({1, 1}));
  std::string j = metrics_report_json(r, "pooled", "abc123");
  for (const char* key : {"rmse", "rel", "mae", "delta_105", "delta_110",
                          "delta_125", "n_pixels", "n_samples", "aggregation",
                          "config_hash", "pooled", "abc123"})
    CHECK(j.find(key) != std::string::npos);
}

}  // TEST_SUITE
