#include "sfv/training.hpp"

#include <cmath>
#include <sstream>

#include "sfv/autograd.hpp"
#include "sfv/data.hpp"
#include "sfv/sampler.hpp"

namespace sfv {

void TeacherConfig::validate() const {
  require(steps >= 0, "teacher steps must be >= 0");
  require(batch >= 1, "teacher batch must be >= 1");
  require(lr > 0.0, "teacher learning rate must be positive");
  require(ema_rate >= 0.0 && ema_rate < 1.0, "teacher EMA rate must lie in [0, 1)");
  require(p_std > 0.0, "teacher p_std must be positive");
  require(cond_dropout >= 0.0 && cond_dropout < 1.0, "cond_dropout must lie in [0, 1)");
}

void TeacherConfig::store(KeyValues& kv) const {
  kv.set("teacher.steps", steps);
  kv.set("teacher.batch", batch);
  kv.set("teacher.lr", lr);
  kv.set("teacher.ema_rate", ema_rate);
  kv.set("teacher.p_mean", p_mean);
  kv.set("teacher.p_std", p_std);
  kv.set("teacher.cond_dropout", cond_dropout);
  kv.set("teacher.seed", static_cast<std::int64_t>(seed));
}

TeacherConfig TeacherConfig::from(const KeyValues& kv) {
  TeacherConfig c;
  c.steps = kv.get_int("teacher.steps", c.steps);
  c.batch = kv.get_int("teacher.batch", c.batch);
  c.lr = kv.get_double("teacher.lr", c.lr);
  c.ema_rate = kv.get_double("teacher.ema_rate", c.ema_rate);
  c.p_mean = kv.get_double("teacher.p_mean", c.p_mean);
  c.p_std = kv.get_double("teacher.p_std", c.p_std);
  c.cond_dropout = kv.get_double("teacher.cond_dropout", c.cond_dropout);
  c.seed = static_cast<std::uint64_t>(kv.get_int("teacher.seed", 0));
  return c;
}

void DistillConfig::validate() const {
  require(t_g >= 2, "T_g must be >= 2");
  require(t_d >= 3, "T_d must be >= 3");
  require(p_std != 0.0, "p_std must be nonzero");
  require(lambda >= 0.0, "lambda must be non-negative");
  require(gamma >= 0.0, "gamma must be non-negative");
  require(lr_g > 0.0 && lr_d > 0.0, "learning rates must be positive");
  require(ema_rate >= 0.0 && ema_rate < 1.0, "EMA rate must lie in [0, 1)");
  require(batch >= 1 && grad_accum >= 1, "batch and grad_accum must be >= 1");
  require(steps >= 0, "steps must be >= 0");
}

void DistillConfig::store(KeyValues& kv) const {
  kv.set("distill.t_g", static_cast<std::int64_t>(t_g));
  kv.set("distill.t_d", static_cast<std::int64_t>(t_d));
  kv.set("distill.p_mean", p_mean);
  kv.set("distill.p_std", p_std);
  kv.set("distill.lambda", lambda);
  kv.set("distill.gamma", gamma);
  kv.set("distill.lr_g", lr_g);
  kv.set("distill.lr_d", lr_d);
  kv.set("distill.ema_rate", ema_rate);
  kv.set("distill.batch", batch);
  kv.set("distill.grad_accum", grad_accum);
  kv.set("distill.steps", steps);
  kv.set("distill.seed", static_cast<std::int64_t>(seed));
  kv.set("distill.heads", std::string(head_mode_name(heads)));
  kv.set("distill.adversarial", std::int64_t{adversarial ? 1 : 0});
  kv.set("schedule.sigma_min", schedule.sigma_min);
  kv.set("schedule.sigma_max", schedule.sigma_max);
  kv.set("schedule.rho", schedule.rho);
}

DistillConfig DistillConfig::from(const KeyValues& kv) {
  DistillConfig c;
  c.t_g = static_cast<int>(kv.get_int("distill.t_g", c.t_g));
  c.t_d = static_cast<int>(kv.get_int("distill.t_d", c.t_d));
  c.p_mean = kv.get_double("distill.p_mean", c.p_mean);
  c.p_std = kv.get_double("distill.p_std", c.p_std);
  c.lambda = kv.get_double("distill.lambda", c.lambda);
  c.gamma = kv.get_double("distill.gamma", c.gamma);
  c.lr_g = kv.get_double("distill.lr_g", c.lr_g);
  c.lr_d = kv.get_double("distill.lr_d", c.lr_d);
  c.ema_rate = kv.get_double("distill.ema_rate", c.ema_rate);
  c.batch = kv.get_int("distill.batch", c.batch);
  c.grad_accum = kv.get_int("distill.grad_accum", c.grad_accum);
  c.steps = kv.get_int("distill.steps", c.steps);
  c.seed = static_cast<std::uint64_t>(kv.get_int("distill.seed", 0));
  c.heads = parse_head_mode(kv.get("distill.heads", "both"));
  c.adversarial = kv.get_int("distill.adversarial", 1) != 0;
  c.schedule.sigma_min = kv.get_double("schedule.sigma_min", c.schedule.sigma_min);
  c.schedule.sigma_max = kv.get_double("schedule.sigma_max", c.schedule.sigma_max);
  c.schedule.rho = kv.get_double("schedule.rho", c.schedule.rho);
  return c;
}

void store_net_config(const NetConfig& cfg, KeyValues& kv) {
  kv.set("net.channels", cfg.channels);
  kv.set("net.frames", cfg.frames);
  kv.set("net.height", cfg.height);
  kv.set("net.width", cfg.width);
  std::ostringstream w;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) w << (i ? "," : "") << cfg.widths[i];
  kv.set("net.widths", w.str());
  kv.set("net.groups", cfg.groups);
  kv.set("net.emb_dim", cfg.emb_dim);
  kv.set("net.head_width", cfg.head_width);
  kv.set("net.dtype", std::string(dtype_name(cfg.dtype)));
}

NetConfig net_config_from(const KeyValues& kv) {
  NetConfig c;
  c.channels = kv.get_int("net.channels", c.channels);
  c.frames = kv.get_int("net.frames", c.frames);
  c.height = kv.get_int("net.height", c.height);
  c.width = kv.get_int("net.width", c.width);
  if (kv.has("net.widths")) {
    std::istringstream in(kv.get("net.widths", ""));
    std::string item;
    std::size_t i = 0;
    while (std::getline(in, item, ',')) {
      require(i < 4, "net.widths needs exactly 4 entries");
      KeyValues one;
      one.set("w", item);
      c.widths[i++] = one.get_int("w", 0);
    }
    require(i == 4, "net.widths needs exactly 4 entries");
  }
  c.groups = kv.get_int("net.groups", c.groups);
  c.emb_dim = kv.get_int("net.emb_dim", c.emb_dim);
  c.head_width = kv.get_int("net.head_width", c.head_width);
  const std::string dt = kv.get("net.dtype", "f32");
  require(dt == "f32" || dt == "f64", "net.dtype must be f32 or f64");
  c.dtype = dt == "f32" ? DType::f32 : DType::f64;
  c.validate();
  return c;
}

Rng step_rng(std::uint64_t seed, std::int64_t step, std::uint64_t stream) {
  return make_rng(seed, {static_cast<std::uint64_t>(step), stream});
}

void copy_parameters(const NamedTensors& dst, const NamedTensors& src) {
  require(dst.size() == src.size(), "parameter table size mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    require(dst[i].first == src[i].first, "parameter name mismatch: " + dst[i].first + " vs " + src[i].first);
    Tensor t = dst[i].second;
    t.assign(src[i].second);
  }
}

ModelState init_teacher(const NetConfig& net, const TeacherConfig& cfg) {
  cfg.validate();
  ModelState s;
  s.kind = ModelKind::teacher;
  s.net = net;
  s.generator = std::make_unique<GeneratorNet>(net, cfg.seed);
  s.ema = std::make_unique<GeneratorNet>(net, cfg.seed);
  s.opt_g = std::make_unique<Adam>(s.generator->parameters(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  s.meta.set("kind", std::string("teacher"));
  store_net_config(net, s.meta);
  cfg.store(s.meta);
  return s;
}

ModelState init_student(const ModelState& teacher, const DistillConfig& cfg) {
  cfg.validate();
  require(teacher.kind == ModelKind::teacher, "distillation must start from a teacher checkpoint");
  ModelState s;
  s.kind = ModelKind::student;
  s.net = teacher.net;
  s.generator = std::make_unique<GeneratorNet>(s.net, cfg.seed);
  s.ema = std::make_unique<GeneratorNet>(s.net, cfg.seed);
  copy_parameters(s.generator->parameters(), teacher.ema->parameters());
  copy_parameters(s.ema->parameters(), teacher.ema->parameters());
  s.disc = std::make_unique<DiscriminatorNet>(s.net, cfg.seed, cfg.heads);
  s.disc->load_backbone(*teacher.ema);
  s.opt_g = std::make_unique<Adam>(s.generator->parameters(), AdamConfig{cfg.lr_g, 0.5, 0.999, 1e-8});
  s.opt_d = std::make_unique<Adam>(s.disc->head_parameters(), AdamConfig{cfg.lr_d, 0.5, 0.999, 1e-8});
  s.meta = teacher.meta;
  s.meta.set("kind", std::string("student"));
  s.meta.set("teacher.final_step", teacher.step);
  cfg.store(s.meta);
  return s;
}

namespace {

void check_finite(double v, const char* term) {
  if (!std::isfinite(v)) fail(ErrorCode::diverged, std::string("non-finite ") + term);
}

void accumulate(std::vector<Tensor>& acc, const std::vector<Tensor>& g) {
  if (acc.empty()) {
    acc = g;
    return;
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = acc[i] + g[i];
}

Conditioning slice_cond(const Conditioning& c, std::int64_t start, std::int64_t len) {
  Conditioning out;
  out.image = slice(c.image, 0, start, len);
  out.frames = c.frames;
  return out;
}

std::span<const double> span_of(const std::vector<double>& v, std::int64_t start, std::int64_t len) {
  return std::span<const double>(v).subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(len));
}

}  // namespace

double teacher_step(ModelState& state, const Tensor& clips, const TeacherConfig& cfg, Rng& rng) {
  require(state.kind == ModelKind::teacher, "teacher_step needs a teacher state");
  const DType dt = state.net.dtype;
  Tensor x0 = clips.dtype() == dt ? clips : clips.to(dt);
  require(x0.shape() == state.net.video_shape(x0.size(0)), "clip batch does not match the network shape");
  const std::int64_t b = x0.size(0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> sigma(static_cast<std::size_t>(b)), keep(static_cast<std::size_t>(b));
  for (std::int64_t i = 0; i < b; ++i) {
    sigma[i] = std::exp(cfg.p_mean + cfg.p_std * normal(rng));
    keep[i] = u(rng) < cfg.cond_dropout ? 0.0 : 1.0;
  }
  Tensor eps = randn(x0.shape(), rng, dt);
  Conditioning cond = Conditioning::first_frame(x0);
  cond.image = cond.image * per_sample(keep, 4, dt);

  const std::vector<Tensor> params = tensors_of(state.generator->parameters());
  autograd::GradMode on(true);
  Tensor loss = dsm_loss(make_denoiser(*state.generator), x0, sigma, eps, cond);
  const double value = loss.item();
  check_finite(value, "denoising loss");
  std::vector<Tensor> grads = autograd::grad(loss, params);
  state.opt_g->step(grads);
  ema_update(state.ema->parameters(), state.generator->parameters(), cfg.ema_rate);
  ++state.step;
  return value;
}

void pretrain_teacher(ModelState& state, const Tensor& dataset, const TeacherConfig& cfg, const TeacherLogFn& log) {
  cfg.validate();
  require(dataset.rank() == 5 && dataset.size(0) >= 1, "dataset is empty");
  while (state.step < cfg.steps) {
    Rng rng = step_rng(cfg.seed, state.step, 1);
    const auto idx = draw_indices(rng, dataset.size(0), cfg.batch);
    const double loss = teacher_step(state, gather_clips(dataset, idx), cfg, rng);
    if (log) log(state.step, loss);
  }
}

LossBreakdown distill_step(ModelState& state, const Tensor& clips, const DistillConfig& cfg, Rng& rng) {
  require(state.kind == ModelKind::student && state.disc, "distill_step needs a student state");
  cfg.validate();
  const DType dt = state.net.dtype;
  Tensor x0 = clips.dtype() == dt ? clips : clips.to(dt);
  const std::int64_t total = x0.size(0);
  require(x0.shape() == state.net.video_shape(total), "clip batch does not match the network shape");
  GeneratorNet& gen = *state.generator;
  DiscriminatorNet& disc = *state.disc;
  disc.set_mode(cfg.heads);

  // Every per-sample draw is made up front so that micro-batching does not
  // change the randomness.
  const NoiseLevelDistribution dist = lognormal_pmf(karras_sigmas(cfg.t_d, cfg.schedule), cfg.p_mean, cfg.p_std);
  std::vector<double> sigma_g(static_cast<std::size_t>(total)), sigma_d(static_cast<std::size_t>(total));
  for (auto& s : sigma_g) s = sample_generator_sigma(rng, cfg.t_g, cfg.schedule).sigma;
  for (auto& s : sigma_d) s = sample_discriminator_sigma(rng, dist).sigma;
  const Tensor eps_g = randn(x0.shape(), rng, dt);
  const Tensor eps_real = randn(x0.shape(), rng, dt);
  const Tensor eps_fake = randn(x0.shape(), rng, dt);
  const Conditioning cond = Conditioning::first_frame(x0);
  const double huber_c = pseudo_huber_c(x0);

  LossBreakdown out;
  std::vector<Tensor> fakes;
  const NamedTensors gen_named = gen.parameters();
  const std::vector<Tensor> gen_params = tensors_of(gen_named);
  autograd::GradMode on(true);

  // (a) generator update; the heads only pass gradients through.
  std::vector<Tensor> g_acc;
  for (std::int64_t o = 0; o < total; o += cfg.batch) {
    const std::int64_t m = std::min(cfg.batch, total - o);
    const double w = static_cast<double>(m) / static_cast<double>(total);
    Tensor x0m = slice(x0, 0, o, m);
    const Conditioning cm = slice_cond(cond, o, m);
    Tensor xt = forward_diffuse(x0m, span_of(sigma_g, o, m), slice(eps_g, 0, o, m));
    Tensor x_hat = denoise(gen, xt, span_of(sigma_g, o, m), cm);
    fakes.push_back(x_hat.detach());
    Tensor recon = pseudo_huber(x_hat, x0m, huber_c);
    Tensor adv = Tensor::scalar(0.0, dt);
    if (cfg.adversarial) {
      Tensor noisy = forward_diffuse(x_hat, span_of(sigma_d, o, m), slice(eps_fake, 0, o, m));
      adv = hinge_g_loss(disc.score(noisy, span_of(sigma_d, o, m), cm));
    }
    Tensor loss = generator_total(adv, recon, cfg.lambda);
    check_finite(adv.item(), "generator adversarial loss");
    check_finite(recon.item(), "reconstruction loss");
    out.adv_g += w * adv.item();
    out.recon += w * recon.item();
    accumulate(g_acc, autograd::grad(loss * w, gen_params));
  }
  out.total_g = out.adv_g + cfg.lambda * out.recon;
  state.opt_g->step(g_acc);

  // (b) head update on detached fakes; the backbone is frozen.
  if (cfg.adversarial) {
    const std::vector<Tensor> head_params = tensors_of(disc.head_parameters());
    std::vector<Tensor> d_acc;
    std::int64_t k = 0;
    for (std::int64_t o = 0; o < total; o += cfg.batch, ++k) {
      const std::int64_t m = std::min(cfg.batch, total - o);
      const double w = static_cast<double>(m) / static_cast<double>(total);
      const auto sd = span_of(sigma_d, o, m);
      const Conditioning cm = slice_cond(cond, o, m);
      std::vector<double> ci;
      for (double s : sd) ci.push_back(precondition(s).c_in);
      const Tensor scale = per_sample(ci, x0.rank(), dt);
      Tensor real_pre = forward_diffuse(slice(x0, 0, o, m), sd, slice(eps_real, 0, o, m)) * scale;
      Tensor fake_pre = forward_diffuse(fakes[k], sd, slice(eps_fake, 0, o, m)) * scale;
      ScoreFn score = [&](const Tensor& x) { return disc.score_preconditioned(x, sd, cm); };
      ScoredR1 real;
      if (cfg.gamma > 0.0) {
        real = score_with_r1(score, real_pre, true);
      } else {
        real.scores = score(real_pre);
        real.penalty = Tensor::scalar(0.0, dt);
      }
      Tensor fake_scores = score(fake_pre);
      HingeTerms h = hinge_d_terms(real.scores, fake_scores, real.penalty, cfg.gamma);
      check_finite(h.real.item(), "discriminator real hinge");
      check_finite(h.fake.item(), "discriminator fake hinge");
      check_finite(real.penalty.item(), "R1 penalty");
      out.adv_d_real += w * h.real.item();
      out.adv_d_fake += w * h.fake.item();
      out.r1 += w * real.penalty.item();
      accumulate(d_acc, autograd::grad(h.total * w, head_params));
    }
    out.total_d = out.adv_d_real + cfg.gamma * out.r1 + out.adv_d_fake;
    state.opt_d->step(d_acc);
  }

  // (c) EMA of the generator.
  ema_update(state.ema->parameters(), gen_named, cfg.ema_rate);
  ++state.step;
  return out;
}

void distill(ModelState& state, const Tensor& dataset, const DistillConfig& cfg, const DistillLogFn& log) {
  cfg.validate();
  require(dataset.rank() == 5 && dataset.size(0) >= 1, "dataset is empty");
  while (state.step < cfg.steps) {
    Rng rng = step_rng(cfg.seed, state.step, 2);
    const auto idx = draw_indices(rng, dataset.size(0), cfg.batch * cfg.grad_accum);
    const LossBreakdown l = distill_step(state, gather_clips(dataset, idx), cfg, rng);
    if (log) log(state.step, l);
  }
}

}  // namespace sfv
