#include "sfv/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include <json.hpp>

#include "sfv/autograd.hpp"
#include "sfv/diffusion_math.hpp"
#include "sfv/sampler.hpp"

namespace sfv {

namespace {

constexpr int kProbeFilters = 8;
constexpr int kProbeT = 3;
constexpr int kProbeS = 5;
constexpr std::uint64_t kProbeSeed = 0x5eed'f00d;

struct Probe {
  std::vector<double> w;  // [filters][t][y][x]
  std::vector<double> b;
};

const Probe& probe() {
  static const Probe p = [] {
    Probe q;
    std::mt19937_64 rng(kProbeSeed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(kProbeT * kProbeS * kProbeS));
    q.w.resize(kProbeFilters * kProbeT * kProbeS * kProbeS);
    for (auto& v : q.w) v = normal(rng) * scale;
    q.b.resize(kProbeFilters);
    for (auto& v : q.b) v = 0.1 * normal(rng);
    return q;
  }();
  return p;
}

}  // namespace

std::int64_t video_feature_dim(std::int64_t frames) { return 3 * frames + 3 * (frames - 1) + 2 * kProbeFilters; }

Eigen::MatrixXd video_features(const Tensor& clips) {
  require(clips.rank() == 5, "clips must be [B, N, C, H, W]");
  const std::int64_t b = clips.size(0), n = clips.size(1), c = clips.size(2), h = clips.size(3), w = clips.size(4);
  require(n >= 2, "clips need at least 2 frames");
  const std::vector<double> v = clips.to_vector();
  const std::int64_t hw = h * w;
  Eigen::MatrixXd out(b, video_feature_dim(n));
  const Probe& pr = probe();
  std::vector<double> gray(static_cast<std::size_t>(n * hw));
  for (std::int64_t i = 0; i < b; ++i) {
    // Channel mean, [N, H, W].
    for (std::int64_t f = 0; f < n; ++f) {
      for (std::int64_t p = 0; p < hw; ++p) {
        double s = 0.0;
        for (std::int64_t ch = 0; ch < c; ++ch) s += v[static_cast<std::size_t>(((i * n + f) * c + ch) * hw + p)];
        gray[f * hw + p] = s / static_cast<double>(c);
      }
    }
    std::int64_t col = 0;
    for (std::int64_t f = 0; f < n; ++f) {
      const double* g = &gray[f * hw];
      double s = 0.0, sq = 0.0, grad = 0.0;
      for (std::int64_t p = 0; p < hw; ++p) {
        s += g[p];
        sq += g[p] * g[p];
      }
      for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
          if (x + 1 < w) grad += std::pow(g[y * w + x + 1] - g[y * w + x], 2);
          if (y + 1 < h) grad += std::pow(g[(y + 1) * w + x] - g[y * w + x], 2);
        }
      }
      const double mean = s / static_cast<double>(hw);
      out(i, col + f) = mean;
      out(i, col + n + f) = std::sqrt(std::max(0.0, sq / static_cast<double>(hw) - mean * mean));
      out(i, col + 2 * n + f) = grad / static_cast<double>(hw);
    }
    col += 3 * n;
    for (std::int64_t f = 0; f + 1 < n; ++f) {
      const double* a = &gray[f * hw];
      const double* z = &gray[(f + 1) * hw];
      double abs_sum = 0.0, s = 0.0, sq = 0.0;
      for (std::int64_t p = 0; p < hw; ++p) {
        const double d = z[p] - a[p];
        abs_sum += std::abs(d);
        s += d;
        sq += d * d;
      }
      const double mean = s / static_cast<double>(hw);
      out(i, col + f) = abs_sum / static_cast<double>(hw);
      out(i, col + (n - 1) + f) = std::sqrt(std::max(0.0, sq / static_cast<double>(hw) - mean * mean));
      out(i, col + 2 * (n - 1) + f) = sq / static_cast<double>(hw);
    }
    col += 3 * (n - 1);
    // Probe: valid 3-D correlation with spatial stride 2, tanh, then mean/std.
    const std::int64_t to = n - kProbeT + 1;
    const std::int64_t yo = (h - kProbeS) / 2 + 1, xo = (w - kProbeS) / 2 + 1;
    for (int k = 0; k < kProbeFilters; ++k) {
      double s = 0.0, sq = 0.0;
      std::int64_t cnt = 0;
      const double* wk = &pr.w[static_cast<std::size_t>(k * kProbeT * kProbeS * kProbeS)];
      for (std::int64_t t = 0; t < std::max<std::int64_t>(to, 0); ++t) {
        for (std::int64_t y = 0; y < yo; ++y) {
          for (std::int64_t x = 0; x < xo; ++x) {
            double acc = pr.b[k];
            for (int dt = 0; dt < kProbeT; ++dt) {
              for (int dy = 0; dy < kProbeS; ++dy) {
                const double* row = &gray[(t + dt) * hw + (2 * y + dy) * w + 2 * x];
                const double* wr = &wk[(dt * kProbeS + dy) * kProbeS];
                for (int dx = 0; dx < kProbeS; ++dx) acc += wr[dx] * row[dx];
              }
            }
            const double r = std::tanh(acc);
            s += r;
            sq += r * r;
            ++cnt;
          }
        }
      }
      const double mean = cnt ? s / static_cast<double>(cnt) : 0.0;
      out(i, col + k) = mean;
      out(i, col + kProbeFilters + k) = cnt ? std::sqrt(std::max(0.0, sq / static_cast<double>(cnt) - mean * mean)) : 0.0;
    }
  }
  return out;
}

FeatureStats feature_stats(const Eigen::MatrixXd& features) {
  require(features.rows() >= 2, "feature statistics need at least 2 samples");
  FeatureStats s;
  s.n = features.rows();
  s.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
  s.cov = (centered.transpose() * centered) / static_cast<double>(s.n - 1);
  s.cov = 0.5 * (s.cov + s.cov.transpose());
  return s;
}

namespace {

Eigen::MatrixXd regularized(const FeatureStats& s) {
  Eigen::MatrixXd c = s.cov;
  const auto d = c.rows();
  if (s.n < d) c.diagonal().array() += 1e-6 * c.trace() / static_cast<double>(d);
  return c;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  require(es.info() == Eigen::Success, "eigendecomposition failed");
  const Eigen::VectorXd r = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * r.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  require(a.mean.size() == b.mean.size() && a.cov.rows() == b.cov.rows() && a.cov.rows() == a.mean.size(),
          "feature dimension mismatch");
  const Eigen::MatrixXd sa = regularized(a), sb = regularized(b);
  const Eigen::MatrixXd ra = psd_sqrt(sa);
  Eigen::MatrixXd inner = ra * sb * ra;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner, Eigen::EigenvaluesOnly);
  require(es.info() == Eigen::Success, "eigendecomposition failed");
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (a.mean - b.mean).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, d);
}

double toy_fvd(const Tensor& generated, const Tensor& real) {
  require(generated.rank() == 5 && real.rank() == 5, "clips must be [B, N, C, H, W]");
  for (int k = 1; k < 5; ++k) require(generated.size(k) == real.size(k), "generated and real clips differ in shape");
  return frechet_distance(feature_stats(video_features(generated)), feature_stats(video_features(real)));
}

namespace {

double mean_temporal_variance(const Tensor& clips) {
  const std::int64_t b = clips.size(0), n = clips.size(1);
  const std::int64_t fs = clips.numel() / (b * n);
  const std::vector<double> v = clips.to_vector();
  double total = 0.0;
  for (std::int64_t i = 0; i < b; ++i) {
    for (std::int64_t p = 0; p < fs; ++p) {
      double s = 0.0, sq = 0.0;
      for (std::int64_t f = 0; f < n; ++f) {
        const double x = v[static_cast<std::size_t>((i * n + f) * fs + p)];
        s += x;
        sq += x * x;
      }
      const double m = s / static_cast<double>(n);
      total += sq / static_cast<double>(n) - m * m;
    }
  }
  return total / static_cast<double>(b * fs);
}

}  // namespace

CollapseMetrics collapse_metrics(const Tensor& generated, const Tensor& cond_image, const Tensor& reference) {
  require(generated.rank() == 5 && reference.rank() == 5, "clips must be [B, N, C, H, W]");
  for (int k = 1; k < 5; ++k) require(generated.size(k) == reference.size(k), "generated and reference differ in shape");
  const std::int64_t b = generated.size(0), n = generated.size(1);
  const std::int64_t fs = generated.numel() / (b * n);
  require(cond_image.numel() == b * fs, "conditioning image does not match generated clips");
  const double ref = mean_temporal_variance(reference);
  if (!(ref > 0.0)) fail(ErrorCode::invalid_argument, "reference clips have zero temporal variance");
  CollapseMetrics m;
  m.temporal_variance_ratio = mean_temporal_variance(generated) / ref;
  const std::vector<double> g = generated.to_vector(), c = cond_image.to_vector();
  double mae = 0.0;
  for (std::int64_t i = 0; i < b; ++i) {
    for (std::int64_t f = 0; f < n; ++f) {
      for (std::int64_t p = 0; p < fs; ++p) {
        mae += std::abs(g[static_cast<std::size_t>((i * n + f) * fs + p)] - c[static_cast<std::size_t>(i * fs + p)]);
      }
    }
  }
  m.cond_similarity = -mae / static_cast<double>(b * n * fs);
  return m;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["toy_fvd"] = toy_fvd;
  j["temporal_variance_ratio"] = temporal_variance_ratio;
  j["cond_similarity"] = cond_similarity;
  j["forwards_per_clip"] = forwards_per_clip;
  j["wall_ms_median"] = wall_ms_median;
  j["wall_ms_iqr"] = wall_ms_iqr;
  return j.dump(2);
}

double quantile_of(std::vector<double> v, double q) {
  require(!v.empty(), "quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double median_of(std::vector<double> v) { return quantile_of(std::move(v), 0.5); }

std::vector<BenchConfig> default_bench_configs() {
  return {{"teacher-25-cfg", 25, 1.5},
          {"teacher-16-cfg", 16, 1.5},
          {"teacher-8-cfg", 8, 1.5},
          {"teacher-4-cfg", 4, 1.5},
          {"student-1", 1, 1.0}};
}

std::vector<BenchRow> latency_bench(const GeneratorNet& teacher, const GeneratorNet& student,
                                    const std::vector<BenchConfig>& configs, const Tensor& cond_image,
                                    int repetitions, int warmup, std::uint64_t seed) {
  require(repetitions >= 3, "latency bench needs at least 3 repetitions");
  require(warmup >= 1, "latency bench needs at least 1 warm-up run");
  require(cond_image.rank() == 4, "conditioning image must be [B, C, H, W]");
  const NetConfig& nc = teacher.config();
  Conditioning cond;
  cond.image = cond_image.to(nc.dtype);
  cond.frames = nc.frames;
  const std::int64_t b = cond_image.size(0);
  const Shape shape = nc.video_shape(b);
  const ScheduleParams sp;
  std::vector<BenchRow> rows;
  for (const auto& c : configs) {
    require(c.steps >= 1, "bench steps must be >= 1");
    const GeneratorNet& net = c.steps == 1 ? student : teacher;
    const DenoiseFn den = make_denoiser(net);
    BenchRow row;
    row.config = c;
    for (int r = 0; r < warmup + repetitions; ++r) {
      Rng rng = make_rng(seed, {static_cast<std::uint64_t>(r)});
      const std::uint64_t before = net.forward_count();
      const auto t0 = std::chrono::steady_clock::now();
      if (c.steps == 1) {
        (void)one_step_sample(den, cond, shape, sp.sigma_max, rng, nc.dtype);
      } else {
        Tensor x = randn(shape, rng, nc.dtype) * sp.sigma_max;
        (void)euler_sample(den, karras_sigmas(c.steps, sp), x, cond, c.cfg_scale);
      }
      const auto t1 = std::chrono::steady_clock::now();
      // One network call processes the whole batch, so calls equal forwards per clip.
      row.forwards_per_clip = static_cast<std::int64_t>(net.forward_count() - before);
      if (r >= warmup) {
        row.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count() / static_cast<double>(b));
      }
    }
    row.wall_ms_median = median_of(row.samples_ms);
    row.wall_ms_iqr = quantile_of(row.samples_ms, 0.75) - quantile_of(row.samples_ms, 0.25);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string bench_to_json(const std::vector<BenchRow>& rows) {
  nlohmann::ordered_json j;
  j["rows"] = nlohmann::ordered_json::array();
  double ref_forwards = 0.0, ref_ms = 0.0;
  for (const auto& r : rows) {
    if (r.config.steps == 25) {
      ref_forwards = static_cast<double>(r.forwards_per_clip);
      ref_ms = r.wall_ms_median;
    }
  }
  for (const auto& r : rows) {
    nlohmann::ordered_json e;
    e["name"] = r.config.name;
    e["steps"] = r.config.steps;
    e["cfg"] = r.config.cfg_scale;
    e["forwards_per_clip"] = r.forwards_per_clip;
    e["wall_ms_median"] = r.wall_ms_median;
    e["wall_ms_iqr"] = r.wall_ms_iqr;
    if (ref_forwards > 0.0) {
      e["speedup_upper_bound"] = ref_forwards / static_cast<double>(r.forwards_per_clip);
      e["measured_speedup"] = ref_ms / r.wall_ms_median;
    }
    j["rows"].push_back(e);
  }
  return j.dump(2);
}

}  // namespace sfv
