#pragma once

#include <cstdint>

#include "sfv/data.hpp"
#include "sfv/eval.hpp"
#include "sfv/training.hpp"

namespace sfv {

struct SampleResult {
  Tensor clips;  // f32 [B, N, C, H, W]
  std::int64_t forwards_per_clip = 0;
};

// Samples one clip per source clip, conditioned on its first frame, using the
// EMA network. steps == 1 is the one-step sampler, steps >= 2 Euler with CFG.
SampleResult sample_clips(const ModelState& model, const Tensor& cond_source, int steps, double cfg_scale,
                          std::uint64_t seed, std::int64_t batch = 16, const ScheduleParams& schedule = {});

// Toy-FVD against `real` plus collapse metrics against the source clips.
MetricsReport evaluate_clips(const Tensor& generated, const Tensor& real, const Tensor& cond_source);

SceneSpec scene_spec_from(const KeyValues& kv);
void store_scene_spec(const SceneSpec& spec, KeyValues& kv);

}  // namespace sfv
