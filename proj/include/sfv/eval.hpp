#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sfv/nets.hpp"
#include "sfv/tensor.hpp"

namespace sfv {

// Handcrafted per-frame and frame-difference statistics plus the pooled
// responses of a fixed random spatio-temporal convolution probe.
Eigen::MatrixXd video_features(const Tensor& clips);
std::int64_t video_feature_dim(std::int64_t frames);

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::int64_t n = 0;
};

FeatureStats feature_stats(const Eigen::MatrixXd& features);
// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}), clamped at 0. Covariances
// of fewer samples than dimensions get a 1e-6 trace-scaled ridge.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);
double toy_fvd(const Tensor& generated, const Tensor& real);

struct CollapseMetrics {
  double temporal_variance_ratio = 0.0;
  double cond_similarity = 0.0;
};
CollapseMetrics collapse_metrics(const Tensor& generated, const Tensor& cond_image, const Tensor& reference);

struct MetricsReport {
  double toy_fvd = 0.0;
  double temporal_variance_ratio = 0.0;
  double cond_similarity = 0.0;
  double forwards_per_clip = 0.0;
  double wall_ms_median = 0.0;
  double wall_ms_iqr = 0.0;

  std::string to_json() const;
};

struct BenchConfig {
  std::string name;
  int steps = 1;  // 1 = one-step student
  double cfg_scale = 1.0;
};

struct BenchRow {
  BenchConfig config;
  std::int64_t forwards_per_clip = 0;
  double wall_ms_median = 0.0;  // per clip
  double wall_ms_iqr = 0.0;
  std::vector<double> samples_ms;
};

// 25/16/8/4-step teacher with CFG 1.5 and the one-step student.
std::vector<BenchConfig> default_bench_configs();

// Times each configuration `repetitions` times after `warmup` discarded runs.
std::vector<BenchRow> latency_bench(const GeneratorNet& teacher, const GeneratorNet& student,
                                    const std::vector<BenchConfig>& configs, const Tensor& cond_image,
                                    int repetitions, int warmup, std::uint64_t seed);
std::string bench_to_json(const std::vector<BenchRow>& rows);

double median_of(std::vector<double> v);
// Linear-interpolated quantile, q in [0, 1].
double quantile_of(std::vector<double> v, double q);

}  // namespace sfv
