#include "sfv/pipeline.hpp"

#include "sfv/autograd.hpp"
#include "sfv/sampler.hpp"

namespace sfv {

SampleResult sample_clips(const ModelState& model, const Tensor& cond_source, int steps, double cfg_scale,
                          std::uint64_t seed, std::int64_t batch, const ScheduleParams& schedule) {
  require(steps >= 1, "steps must be >= 1");
  require(batch >= 1, "batch must be >= 1");
  require(cond_source.rank() == 5, "conditioning clips must be [B, N, C, H, W]");
  const NetConfig& nc = model.net;
  const std::int64_t total = cond_source.size(0);
  require(cond_source.shape() == nc.video_shape(total), "conditioning clips do not match the model shape");
  const GeneratorNet& net = model.sampler_net();
  const DenoiseFn den = make_denoiser(net);
  const SigmaSchedule ladder = steps >= 2 ? karras_sigmas(steps, schedule) : SigmaSchedule{};
  autograd::NoGrad no_grad;

  SampleResult out;
  std::vector<Tensor> parts;
  std::uint64_t calls = 0;
  std::int64_t chunks = 0;
  for (std::int64_t o = 0, k = 0; o < total; o += batch, ++k) {
    const std::int64_t m = std::min(batch, total - o);
    Tensor src = slice(cond_source, 0, o, m).to(nc.dtype);
    const Conditioning cond = Conditioning::first_frame(src);
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(k)});
    const std::uint64_t before = net.forward_count();
    Tensor x;
    if (steps == 1) {
      x = one_step_sample(den, cond, src.shape(), schedule.sigma_max, rng, nc.dtype);
    } else {
      x = euler_sample(den, ladder, randn(src.shape(), rng, nc.dtype) * schedule.sigma_max, cond, cfg_scale);
    }
    calls += net.forward_count() - before;
    ++chunks;
    parts.push_back(x.to(DType::f32));
  }
  out.clips = parts.size() == 1 ? parts[0] : concat(parts, 0);
  out.forwards_per_clip = static_cast<std::int64_t>(calls / static_cast<std::uint64_t>(chunks));
  return out;
}

MetricsReport evaluate_clips(const Tensor& generated, const Tensor& real, const Tensor& cond_source) {
  require(generated.rank() == 5 && cond_source.rank() == 5, "clips must be [B, N, C, H, W]");
  require(generated.size(0) == cond_source.size(0), "generated and conditioning clip counts differ");
  MetricsReport r;
  r.toy_fvd = toy_fvd(generated, real);
  const Conditioning cond = Conditioning::first_frame(cond_source);
  const CollapseMetrics c = collapse_metrics(generated, cond.image, cond_source);
  r.temporal_variance_ratio = c.temporal_variance_ratio;
  r.cond_similarity = c.cond_similarity;
  return r;
}

SceneSpec scene_spec_from(const KeyValues& kv) {
  SceneSpec s;
  s.frames = kv.get_int("data.frames", s.frames);
  s.height = kv.get_int("data.size", s.height);
  s.width = kv.get_int("data.size", s.width);
  s.channels = kv.get_int("data.channels", s.channels);
  s.min_shapes = kv.get_int("data.min_shapes", s.min_shapes);
  s.max_shapes = kv.get_int("data.max_shapes", s.max_shapes);
  s.min_radius = kv.get_double("data.min_radius", s.min_radius);
  s.max_radius = kv.get_double("data.max_radius", s.max_radius);
  s.min_speed = kv.get_double("data.min_speed", s.min_speed);
  s.max_speed = kv.get_double("data.max_speed", s.max_speed);
  s.min_intensity = kv.get_double("data.min_intensity", s.min_intensity);
  s.max_intensity = kv.get_double("data.max_intensity", s.max_intensity);
  s.allow_squares = kv.get_int("data.squares", 1) != 0;
  s.validate();
  return s;
}

void store_scene_spec(const SceneSpec& s, KeyValues& kv) {
  require(s.height == s.width, "scene frames must be square");
  kv.set("data.frames", s.frames);
  kv.set("data.size", s.height);
  kv.set("data.channels", s.channels);
  kv.set("data.min_shapes", s.min_shapes);
  kv.set("data.max_shapes", s.max_shapes);
  kv.set("data.min_radius", s.min_radius);
  kv.set("data.max_radius", s.max_radius);
  kv.set("data.min_speed", s.min_speed);
  kv.set("data.max_speed", s.max_speed);
  kv.set("data.min_intensity", s.min_intensity);
  kv.set("data.max_intensity", s.max_intensity);
  kv.set("data.squares", std::int64_t{s.allow_squares ? 1 : 0});
}

}  // namespace sfv
