#include "sfv/diffusion_math.hpp"

#include <algorithm>
#include <cmath>

#include "sfv/ops.hpp"

namespace sfv {

SigmaSchedule karras_sigmas(int steps, double sigma_min, double sigma_max, double rho) {
  SFV_REQUIRE(steps >= 2, "sigma schedule needs at least 2 levels");
  SFV_REQUIRE(sigma_min > 0.0 && sigma_max > 0.0, "sigma bounds must be positive");
  SFV_REQUIRE(sigma_min < sigma_max, "sigma_min must be below sigma_max");
  SFV_REQUIRE(rho > 0.0, "rho must be positive");
  SigmaSchedule s;
  s.sigma_min = sigma_min;
  s.sigma_max = sigma_max;
  s.rho = rho;
  s.sigmas.resize(steps);
  const double lo = std::pow(sigma_min, 1.0 / rho);
  const double hi = std::pow(sigma_max, 1.0 / rho);
  for (int t = 0; t < steps; ++t) {
    const double frac = static_cast<double>(t) / static_cast<double>(steps - 1);
    s.sigmas[t] = std::pow(lo + frac * (hi - lo), rho);
  }
  // Pin the ends exactly; pow(pow(x, 1/rho), rho) can be off by an ulp.
  s.sigmas.front() = sigma_min;
  s.sigmas.back() = sigma_max;
  return s;
}

Precondition precondition(double sigma) {
  SFV_REQUIRE(sigma > 0.0 && std::isfinite(sigma), "preconditioning needs a positive finite sigma");
  const double s2 = sigma * sigma + 1.0;
  const double root = std::sqrt(s2);
  return {1.0 / s2, -sigma / root, 1.0 / root, 0.25 * std::log(sigma)};
}

Tensor per_sample(std::span<const double> values, int rank, DType dtype) {
  SFV_REQUIRE(!values.empty(), "per-sample values are empty");
  Shape s(std::max(rank, 1), 1);
  s[0] = static_cast<std::int64_t>(values.size());
  return Tensor::from_values(s, values, dtype);
}

Tensor forward_diffuse(const Tensor& x0, std::span<const double> sigma, const Tensor& eps) {
  SFV_REQUIRE(x0.shape() == eps.shape(), "forward_diffuse: signal " + shape_str(x0.shape()) +
                                         " and noise " + shape_str(eps.shape()) + " differ");
  SFV_REQUIRE(sigma.size() == 1 || static_cast<std::int64_t>(sigma.size()) == x0.size(0),
          "forward_diffuse: need one sigma or one per batch element");
  return x0 + per_sample(sigma, x0.rank(), x0.dtype()) * eps;
}

NoiseLevelDistribution lognormal_pmf(const SigmaSchedule& schedule, double p_mean, double p_std) {
  SFV_REQUIRE(schedule.size() >= 3, "discriminator schedule needs at least 3 levels");
  SFV_REQUIRE(p_std != 0.0, "p_std must be nonzero");
  const double scale = std::sqrt(2.0) * std::abs(p_std);
  auto cdf = [&](double s) { return std::erf((std::log(s) - p_mean) / scale); };
  NoiseLevelDistribution d;
  d.p_mean = p_mean;
  d.p_std = p_std;
  double total = 0.0;
  double prev = cdf(schedule[0]);
  for (std::size_t t = 1; t < schedule.size(); ++t) {
    const double cur = cdf(schedule[t]);
    const double w = std::max(0.0, cur - prev);
    prev = cur;
    d.index.push_back(static_cast<int>(t));
    d.sigma.push_back(schedule[t]);
    d.pmf.push_back(w);
    total += w;
  }
  SFV_REQUIRE(total > 0.0, "lognormal pmf has no mass on the schedule");
  double run = 0.0;
  for (auto& p : d.pmf) {
    p /= total;
    run += p;
    d.cdf.push_back(run);
  }
  d.cdf.back() = 1.0;
  return d;
}

SigmaDraw sample_generator_sigma(Rng& rng, int steps, const ScheduleParams& params) {
  SFV_REQUIRE(steps >= 2, "generator schedule needs at least 2 levels");
  std::uniform_int_distribution<int> pick(1, steps - 1);
  const int t = pick(rng);
  return {t, karras_sigmas(steps, params)[t]};
}

SigmaDraw sample_discriminator_sigma(Rng& rng, const NoiseLevelDistribution& dist) {
  SFV_REQUIRE(!dist.cdf.empty() && dist.cdf.size() == dist.pmf.size(), "invalid noise-level distribution");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(rng);
  auto it = std::upper_bound(dist.cdf.begin(), dist.cdf.end(), r);
  std::size_t i = std::min<std::size_t>(it - dist.cdf.begin(), dist.cdf.size() - 1);
  // Only the last bin can be hit with zero mass (its cdf is pinned to 1).
  while (dist.pmf[i] == 0.0 && i > 0) --i;
  return {dist.index[i], dist.sigma[i]};
}

}  // namespace sfv
