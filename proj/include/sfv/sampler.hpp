#pragma once

#include "sfv/diffusion_math.hpp"
#include "sfv/losses.hpp"
#include "sfv/nets.hpp"

namespace sfv {

DenoiseFn make_denoiser(const GeneratorNet& net);

// Euler steps t = T-1 .. 1 followed by a step to sigma = 0, which returns
// D(x; sigma_min). cfg_scale != 1 mixes in a zeroed-condition branch.
Tensor euler_sample(const DenoiseFn& denoiser, const SigmaSchedule& schedule, const Tensor& x_init,
                    const Conditioning& cond, double cfg_scale = 1.0);

// Denoiser evaluations per clip made by euler_sample.
int euler_forward_count(int steps, double cfg_scale);

// x ~ N(0, sigma_max^2), one evaluation of D(x; sigma_max).
Tensor one_step_sample(const DenoiseFn& student, const Conditioning& cond, const Shape& shape, double sigma_max,
                       Rng& rng, DType dtype = DType::f32);

}  // namespace sfv
