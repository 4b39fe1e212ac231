#include "sfv/sampler.hpp"

#include "sfv/autograd.hpp"

namespace sfv {

DenoiseFn make_denoiser(const GeneratorNet& net) {
  return [&net](const Tensor& x, std::span<const double> sigma, const Conditioning& cond) {
    return denoise(net, x, sigma, cond);
  };
}

namespace {

Tensor guided(const DenoiseFn& denoiser, const Tensor& x, double sigma, const Conditioning& cond,
              const Conditioning& uncond, double cfg_scale) {
  std::span<const double> s(&sigma, 1);
  if (cfg_scale == 1.0) return denoiser(x, s, cond);
  Tensor du = denoiser(x, s, uncond);
  Tensor dc = denoiser(x, s, cond);
  return du + (dc - du) * cfg_scale;
}

}  // namespace

Tensor euler_sample(const DenoiseFn& denoiser, const SigmaSchedule& schedule, const Tensor& x_init,
                    const Conditioning& cond, double cfg_scale) {
  require(schedule.size() >= 2, "sampling schedule needs at least 2 levels");
  require(cfg_scale >= 0.0, "cfg scale must be non-negative");
  autograd::NoGrad no_grad;
  Conditioning uncond = cond;
  if (cfg_scale != 1.0 && cond.image.defined()) uncond.image = Tensor::zeros(cond.image.shape(), cond.image.dtype());
  Tensor x = x_init.detach();
  for (std::size_t t = schedule.size() - 1; t >= 1; --t) {
    const double s = schedule[t];
    Tensor d = (x - guided(denoiser, x, s, cond, uncond, cfg_scale)) * (1.0 / s);
    x = x + d * (schedule[t - 1] - s);
  }
  return guided(denoiser, x, schedule[0], cond, uncond, cfg_scale);
}

int euler_forward_count(int steps, double cfg_scale) { return steps * (cfg_scale != 1.0 ? 2 : 1); }

Tensor one_step_sample(const DenoiseFn& student, const Conditioning& cond, const Shape& shape, double sigma_max,
                       Rng& rng, DType dtype) {
  require(sigma_max > 0.0, "sigma_max must be positive");
  autograd::NoGrad no_grad;
  Tensor x = randn(shape, rng, dtype) * sigma_max;
  return student(x, std::span<const double>(&sigma_max, 1), cond);
}

}  // namespace sfv
