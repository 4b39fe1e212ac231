#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sfv/rng.hpp"
#include "sfv/tensor.hpp"

namespace sfv {

// Noise-level ladder sigma_0 = sigma_min < ... < sigma_{T-1} = sigma_max.
struct SigmaSchedule {
  std::vector<double> sigmas;
  double sigma_min = 0.0;
  double sigma_max = 0.0;
  double rho = 0.0;

  std::size_t size() const { return sigmas.size(); }
  double operator[](std::size_t t) const { return sigmas[t]; }
};

struct ScheduleParams {
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double rho = 7.0;
};

// EDM preconditioning with unit data standard deviation.
struct Precondition {
  double c_skip;
  double c_out;
  double c_in;
  double c_noise;
};

// Discretized lognormal over the interior levels t = 1..T_d-1 of a schedule.
struct NoiseLevelDistribution {
  std::vector<int> index;
  std::vector<double> sigma;
  std::vector<double> pmf;
  std::vector<double> cdf;  // running sum of pmf, last entry 1
  double p_mean = 0.0;
  double p_std = 0.0;
};

struct SigmaDraw {
  int t;
  double sigma;
};

SigmaSchedule karras_sigmas(int steps, double sigma_min, double sigma_max, double rho);
inline SigmaSchedule karras_sigmas(int steps, const ScheduleParams& p) {
  return karras_sigmas(steps, p.sigma_min, p.sigma_max, p.rho);
}

Precondition precondition(double sigma);

// x0 + sigma * eps. `sigma` holds one value or one per batch element.
Tensor forward_diffuse(const Tensor& x0, std::span<const double> sigma, const Tensor& eps);
inline Tensor forward_diffuse(const Tensor& x0, double sigma, const Tensor& eps) {
  return forward_diffuse(x0, std::span<const double>(&sigma, 1), eps);
}

// pmf(t) proportional to F(sigma_t) - F(sigma_{t-1}), F(s) = erf((ln s - p_mean) / (sqrt2 |p_std|)).
NoiseLevelDistribution lognormal_pmf(const SigmaSchedule& schedule, double p_mean, double p_std);

// t uniform on {1, ..., steps-1} of a `steps`-level schedule.
SigmaDraw sample_generator_sigma(Rng& rng, int steps, const ScheduleParams& params);
SigmaDraw sample_discriminator_sigma(Rng& rng, const NoiseLevelDistribution& dist);

// [B, 1, ..., 1] tensor of per-sample scalars broadcastable against rank-`rank`
// batches. A single value gives shape [1, 1, ..., 1].
Tensor per_sample(std::span<const double> values, int rank, DType dtype);

}  // namespace sfv
