#include "tdcnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"
#include "tdcnet/common.hpp"
#include "tdcnet/image.hpp"

namespace tdc {

namespace {

void check_metric_inputs(const Tensor& pred, const Tensor& gt,
                         const Tensor& region) {
  if (pred.shape() != gt.shape() || pred.shape() != region.shape())
    throw ShapeError("metrics inputs must share one shape");
}

}  // namespace

void MetricsAccumulator::add(const Tensor& pred, const Tensor& gt,
                             const Tensor& region,
                             const std::string& sample_id) {
  check_metric_inputs(pred, gt, region);
  const auto& d = pred.values();
  const auto& ds = gt.values();
  const auto& r = region.values();

  int64_t n = 0;
  for (size_t i = 0; i < r.size(); ++i) {
    if (r[i] == 0.0) continue;
    if (ds[i] <= 0.0)
      throw DataError("metrics: non-positive ground truth inside region" +
                      (sample_id.empty() ? std::string()
                                         : " of sample '" + sample_id + "'"));
    double diff = d[i] - ds[i];
    sq_sum_ += diff * diff;
    abs_sum_ += std::abs(diff);
    rel_sum_ += std::abs(diff) / ds[i];
    double ratio = d[i] > 0.0 ? std::max(d[i] / ds[i], ds[i] / d[i])
                              : std::numeric_limits<double>::infinity();
    if (ratio < 1.05) ++hit_105_;
    if (ratio < 1.10) ++hit_110_;
    if (ratio < 1.25) ++hit_125_;
    ++n;
  }
  if (n == 0)
    throw EmptyRegionError("metrics: empty region" +
                           (sample_id.empty()
                                ? std::string()
                                : " in sample '" + sample_id + "'"));
  n_pixels_ += n;
  ++n_samples_;
}

MetricsReport MetricsAccumulator::report() const {
  if (n_pixels_ == 0) throw EmptyRegionError("metrics: nothing accumulated");
  MetricsReport r;
  double n = static_cast<double>(n_pixels_);
  r.rmse = std::sqrt(sq_sum_ / n);
  r.rel = rel_sum_ / n;
  r.mae = abs_sum_ / n;
  r.delta_105 = 100.0 * static_cast<double>(hit_105_) / n;
  r.delta_110 = 100.0 * static_cast<double>(hit_110_) / n;
  r.delta_125 = 100.0 * static_cast<double>(hit_125_) / n;
  r.n_pixels = n_pixels_;
  r.n_samples = n_samples_;
  return r;
}

MetricsReport compute_metrics(const Tensor& pred, const Tensor& gt,
                              const Tensor& region,
                              const std::string& sample_id) {
  MetricsAccumulator acc;
  acc.add(pred, gt, region, sample_id);
  return acc.report();
}

MetricsReport average_reports(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw EmptyRegionError("metrics: no reports to average");
  MetricsReport out;
  for (const MetricsReport& r : reports) {
    out.rmse += r.rmse;
    out.rel += r.rel;
    out.mae += r.mae;
    out.delta_105 += r.delta_105;
    out.delta_110 += r.delta_110;
    out.delta_125 += r.delta_125;
    out.n_pixels += r.n_pixels;
    out.n_samples += r.n_samples;
  }
  double k = static_cast<double>(reports.size());
  out.rmse /= k;
  out.rel /= k;
  out.mae /= k;
  out.delta_105 /= k;
  out.delta_110 /= k;
  out.delta_125 /= k;
  return out;
}

Tensor error_map(const Tensor& pred, const Tensor& gt, const Tensor& region,
                 const std::string& sample_id) {
  check_metric_inputs(pred, gt, region);
  const Shape& s = pred.shape();
  int h = s[s.size() - 2], w = s.back();
  if (pred.numel() != int64_t(h) * w)
    throw ShapeError("error_map expects a single-channel map");

  Tensor err = Tensor::zeros({1, h, w});
  Tensor reg = Tensor::zeros({1, h, w});
  const auto& d = pred.values();
  const auto& ds = gt.values();
  const auto& r = region.values();
  for (int64_t i = 0; i < int64_t(h) * w; ++i) {
    if (r[i] == 0.0) continue;
    if (ds[i] <= 0.0)
      throw DataError("metrics: non-positive ground truth inside region" +
                      (sample_id.empty() ? std::string()
                                         : " of sample '" + sample_id + "'"));
    err.values()[i] = std::abs(d[i] - ds[i]) / ds[i];
    reg.values()[i] = 1.0;
  }
  return colorize_error_map(err, reg, 0.2);
}

std::string metrics_report_json(const MetricsReport& r,
                                const std::string& aggregation,
                                const std::string& config_hash) {
  nlohmann::json j;
  j["rmse"] = r.rmse;
  j["rel"] = r.rel;
  j["mae"] = r.mae;
  j["delta_105"] = r.delta_105;
  j["delta_110"] = r.delta_110;
  j["delta_125"] = r.delta_125;
  j["n_pixels"] = r.n_pixels;
  j["n_samples"] = r.n_samples;
  j["aggregation"] = aggregation;
  j["config_hash"] = config_hash;
  return j.dump(2);
}

}  // namespace tdc
