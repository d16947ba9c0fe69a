#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdcnet/tensor.hpp"

namespace tdc {

struct MetricsReport {
  double rmse = 0.0;  // meters
  double rel = 0.0;
  double mae = 0.0;  // meters
  double delta_105 = 0.0;  // percent
  double delta_110 = 0.0;
  double delta_125 = 0.0;
  int64_t n_pixels = 0;
  int64_t n_samples = 0;
};

// Pools (sum, count) pairs over samples so aggregation order never matters.
class MetricsAccumulator {
 public:
  // region is binary; throws DataError naming sample_id when gt <= 0 inside
  // the region, EmptyRegionError when the region is empty.
  void add(const Tensor& pred, const Tensor& gt, const Tensor& region,
           const std::string& sample_id = "");
  MetricsReport report() const;
  int64_t samples() const { return n_samples_; }

 private:
  double sq_sum_ = 0.0, rel_sum_ = 0.0, abs_sum_ = 0.0;
  int64_t hit_105_ = 0, hit_110_ = 0, hit_125_ = 0;
  int64_t n_pixels_ = 0, n_samples_ = 0;
};

// Single-shot pooled metrics over one pred/gt pair.
MetricsReport compute_metrics(const Tensor& pred, const Tensor& gt,
                              const Tensor& region,
                              const std::string& sample_id = "");

// Mean of per-sample reports (the per-image aggregation mode).
MetricsReport average_reports(const std::vector<MetricsReport>& reports);

// Relative error |d-d*|/d* rendered to RGB in [0,1]: fixed scale [0, 0.2],
// gray outside the region.
Tensor error_map(const Tensor& pred, const Tensor& gt, const Tensor& region,
                 const std::string& sample_id = "");

// JSON text with every report field plus aggregation mode and config hash.
std::string metrics_report_json(const MetricsReport& r,
                                const std::string& aggregation,
                                const std::string& config_hash);

}  // namespace tdc
