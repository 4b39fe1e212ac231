#include "sfv/nets.hpp"

#include <cmath>
#include <numeric>

#include "sfv/autograd.hpp"
#include "sfv/diffusion_math.hpp"

namespace sfv {

void NetConfig::validate() const {
  SFV_REQUIRE(channels >= 1, "channels must be >= 1");
  SFV_REQUIRE(frames >= 2, "clips need at least 2 frames");
  SFV_REQUIRE(height >= 8 && width >= 8 && height % 8 == 0 && width % 8 == 0,
          "height and width must be positive multiples of 8");
  for (auto w : widths) SFV_REQUIRE(w >= 1, "channel widths must be positive");
  SFV_REQUIRE(groups >= 1, "groups must be >= 1");
  SFV_REQUIRE(emb_dim >= 2 && emb_dim % 2 == 0, "emb_dim must be even");
  SFV_REQUIRE(head_width >= 1, "head_width must be positive");
}

Conditioning Conditioning::first_frame(const Tensor& clips) {
  SFV_REQUIRE(clips.rank() == 5, "clips must be [B, N, C, H, W]");
  Tensor f0 = slice(clips.detach(), 1, 0, 1);
  Conditioning c;
  c.image = reshape(f0, {clips.size(0), clips.size(2), clips.size(3), clips.size(4)});
  c.frames = clips.size(1);
  return c;
}

Tensor fourier_features(std::span<const double> values, std::int64_t dim, DType dtype) {
  SFV_REQUIRE(dim >= 2 && dim % 2 == 0, "fourier dim must be even");
  const std::int64_t half = dim / 2;
  const auto n = static_cast<std::int64_t>(values.size());
  std::vector<double> out(static_cast<std::size_t>(n * dim));
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t k = 0; k < half; ++k) {
      // Frequencies spaced geometrically over [1, 32].
      const double f = half > 1 ? std::exp2(5.0 * static_cast<double>(k) / static_cast<double>(half - 1)) : 1.0;
      out[b * dim + k] = std::sin(f * values[b]);
      out[b * dim + half + k] = std::cos(f * values[b]);
    }
  }
  return Tensor::from_values({n, dim}, out, dtype);
}

namespace {

Tensor uniform_param(Shape shape, double bound, Rng& rng, DType dtype) {
  Tensor t = rand_uniform(std::move(shape), -bound, bound, rng, dtype);
  t.requires_grad_(true);
  return t;
}

Tensor zero_param(Shape shape, DType dtype) {
  Tensor t = Tensor::zeros(std::move(shape), dtype);
  t.requires_grad_(true);
  return t;
}

Tensor bias_view(const Tensor& b) { return reshape(b, {1, b.size(0), 1, 1}); }

std::int64_t groups_for(std::int64_t channels, std::int64_t wanted) {
  std::int64_t g = std::min(channels, wanted);
  while (channels % g != 0) --g;
  return g;
}

}  // namespace

Conv2d::Conv2d(std::int64_t in, std::int64_t out, std::int64_t kh, std::int64_t kw, ConvGeom g, Rng& rng,
               DType dtype, double gain)
    : geom(g) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(in * kh * kw));
  weight = uniform_param({out, in, kh, kw}, bound, rng, dtype);
  bias = zero_param({out}, dtype);
}

Tensor Conv2d::operator()(const Tensor& x) const { return conv2d(x, weight, geom) + bias_view(bias); }

void Conv2d::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

FrameConv::FrameConv(std::int64_t in, std::int64_t out, Rng& rng, DType dtype, double gain) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(in * 3));
  weight = uniform_param({out, in, 3}, bound, rng, dtype);
  bias = zero_param({out}, dtype);
}

Tensor FrameConv::operator()(const Tensor& x) const {
  Tensor y = frame_conv(x, weight);
  Shape bshape(static_cast<std::size_t>(x.rank()), 1);
  bshape[2] = bias.size(0);
  return y + reshape(bias, bshape);
}

void FrameConv::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

GroupNorm::GroupNorm(std::int64_t channels, std::int64_t g, DType dtype) : groups(g) {
  SFV_REQUIRE(channels % g == 0, "group count must divide channels");
  gamma = Tensor::full({channels}, 1.0, dtype);
  gamma.requires_grad_(true);
  beta = zero_param({channels}, dtype);
}

Tensor GroupNorm::operator()(const Tensor& x) const { return group_norm(x, gamma, beta, groups); }

void GroupNorm::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

Linear::Linear(std::int64_t in, std::int64_t out, Rng& rng, DType dtype, double gain) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(in));
  weight = uniform_param({out, in}, bound, rng, dtype);
  bias = zero_param({out}, dtype);
}

Tensor Linear::operator()(const Tensor& x) const {
  return matmul(x, weight, false, true) + reshape(bias, {1, bias.size(0)});
}

void Linear::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

SpatioTemporalBlock::SpatioTemporalBlock(std::int64_t in, std::int64_t out, bool downsample,
                                         const NetConfig& cfg, Rng& rng) {
  const ConvGeom g_in = downsample ? ConvGeom{2, 2, 1, 1} : ConvGeom{1, 1, 1, 1};
  const std::int64_t g = groups_for(out, cfg.groups);
  in_conv = Conv2d(in, out, 3, 3, g_in, rng, cfg.dtype);
  norm1 = GroupNorm(out, g, cfg.dtype);
  emb_proj = Linear(cfg.emb_dim, out, rng, cfg.dtype);
  conv = Conv2d(out, out, 3, 3, {1, 1, 1, 1}, rng, cfg.dtype, 0.5);
  norm2 = GroupNorm(out, g, cfg.dtype);
  temporal = FrameConv(out, out, rng, cfg.dtype, 0.5);
}

Tensor SpatioTemporalBlock::operator()(const Tensor& x, const Tensor& emb, std::int64_t batch,
                                       std::int64_t frames) const {
  Tensor h = in_conv(x);
  const std::int64_t co = h.size(1), hh = h.size(2), ww = h.size(3);
  Tensor a = silu(norm1(h));
  Tensor e = reshape(emb_proj(silu(emb)), {batch, 1, co, 1, 1});
  a = reshape(reshape(a, {batch, frames, co, hh, ww}) + e, {batch * frames, co, hh, ww});
  a = conv(a);
  Tensor t = silu(norm2(a));
  t = reshape(temporal(reshape(t, {batch, frames, co, hh, ww})), {batch * frames, co, hh, ww});
  return h + a + t;
}

void SpatioTemporalBlock::collect(const std::string& prefix, NamedTensors& out) const {
  in_conv.collect(prefix + ".in_conv", out);
  norm1.collect(prefix + ".norm1", out);
  emb_proj.collect(prefix + ".emb_proj", out);
  conv.collect(prefix + ".conv", out);
  norm2.collect(prefix + ".norm2", out);
  temporal.collect(prefix + ".temporal", out);
}

Encoder::Encoder(const NetConfig& cfg, Rng& rng) {
  const auto& c = cfg.widths;
  emb1 = Linear(cfg.emb_dim, cfg.emb_dim, rng, cfg.dtype);
  emb2 = Linear(cfg.emb_dim, cfg.emb_dim, rng, cfg.dtype);
  stem = Conv2d(2 * cfg.channels, c[0], 3, 3, {1, 1, 1, 1}, rng, cfg.dtype);
  blocks[0] = SpatioTemporalBlock(c[0], c[0], true, cfg, rng);
  blocks[1] = SpatioTemporalBlock(c[0], c[1], true, cfg, rng);
  blocks[2] = SpatioTemporalBlock(c[1], c[2], true, cfg, rng);
  blocks[3] = SpatioTemporalBlock(c[2], c[3], false, cfg, rng);
}

Encoder::Output Encoder::operator()(const NetConfig& cfg, const Tensor& x_in, std::span<const double> c_noise,
                                    const Conditioning& cond) const {
  SFV_REQUIRE(x_in.rank() == 5, "generator input must be [B, N, C, H, W]");
  const std::int64_t b = x_in.size(0), n = x_in.size(1);
  SFV_REQUIRE(x_in.shape() == cfg.video_shape(b),
          "input " + shape_str(x_in.shape()) + " does not match net shape " + shape_str(cfg.video_shape(b)));
  SFV_REQUIRE(cond.image.defined() && cond.image.shape() == Shape({b, cfg.channels, cfg.height, cfg.width}),
          "conditioning image must be [B, C, H, W]");
  SFV_REQUIRE(c_noise.size() == 1 || static_cast<std::int64_t>(c_noise.size()) == b,
          "c_noise must hold 1 or B values");
  for (double v : c_noise) SFV_REQUIRE(std::isfinite(v), "c_noise must be finite");

  std::vector<double> cn(c_noise.begin(), c_noise.end());
  if (cn.size() == 1) cn.assign(static_cast<std::size_t>(b), cn[0]);

  Output out;
  out.emb = emb2(silu(emb1(fourier_features(cn, cfg.emb_dim, x_in.dtype()))));

  Tensor img = reshape(cond.image.to(x_in.dtype()), {b, 1, cfg.channels, cfg.height, cfg.width});
  img = broadcast_to(img, x_in.shape());
  Tensor h = reshape(concat({x_in, img}, 2), {b * n, 2 * cfg.channels, cfg.height, cfg.width});
  out.stem = stem(h);
  h = out.stem;
  for (int k = 0; k < 4; ++k) {
    h = blocks[k](h, out.emb, b, n);
    out.feats[k] = h;
  }
  return out;
}

void Encoder::collect(const std::string& prefix, NamedTensors& out) const {
  emb1.collect(prefix + ".emb1", out);
  emb2.collect(prefix + ".emb2", out);
  stem.collect(prefix + ".stem", out);
  for (int k = 0; k < 4; ++k) blocks[k].collect(prefix + ".block" + std::to_string(k), out);
}

Decoder::Decoder(const NetConfig& cfg, Rng& rng) {
  const auto& c = cfg.widths;
  blocks[0] = SpatioTemporalBlock(c[3] + c[2], c[2], false, cfg, rng);
  blocks[1] = SpatioTemporalBlock(c[2] + c[1], c[1], false, cfg, rng);
  blocks[2] = SpatioTemporalBlock(c[1] + c[0], c[0], false, cfg, rng);
  blocks[3] = SpatioTemporalBlock(c[0] + c[0], c[0], false, cfg, rng);
  out_norm = GroupNorm(c[0], groups_for(c[0], cfg.groups), cfg.dtype);
  out_conv = Conv2d(c[0], cfg.channels, 3, 3, {1, 1, 1, 1}, rng, cfg.dtype);
}

Tensor Decoder::operator()(const Encoder::Output& enc, std::int64_t batch, std::int64_t frames) const {
  const auto& f = enc.feats;
  Tensor d = blocks[0](concat({f[3], f[2]}, 1), enc.emb, batch, frames);
  d = blocks[1](concat({upsample2x(d), f[1]}, 1), enc.emb, batch, frames);
  d = blocks[2](concat({upsample2x(d), f[0]}, 1), enc.emb, batch, frames);
  d = blocks[3](concat({upsample2x(d), enc.stem}, 1), enc.emb, batch, frames);
  return out_conv(silu(out_norm(d)));
}

void Decoder::collect(const std::string& prefix, NamedTensors& out) const {
  for (int k = 0; k < 4; ++k) blocks[k].collect(prefix + ".block" + std::to_string(k), out);
  out_norm.collect(prefix + ".out_norm", out);
  out_conv.collect(prefix + ".out_conv", out);
}

GeneratorNet::GeneratorNet(const NetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = make_rng(seed, {0x67656e});
  enc_ = Encoder(cfg_, rng);
  dec_ = Decoder(cfg_, rng);
}

Tensor GeneratorNet::forward(const Tensor& x_in, std::span<const double> c_noise, const Conditioning& cond) const {
  ++forwards_;
  Encoder::Output e = enc_(cfg_, x_in, c_noise, cond);
  const std::int64_t b = x_in.size(0);
  Tensor y = dec_(e, b, cfg_.frames);
  return reshape(y, x_in.shape());
}

NamedTensors GeneratorNet::parameters() const {
  NamedTensors out;
  enc_.collect("enc", out);
  dec_.collect("dec", out);
  return out;
}

std::int64_t GeneratorNet::parameter_count() const { return count_elements(parameters()); }

Tensor denoise(const NetworkFn& net, const Tensor& x, std::span<const double> sigma, const Conditioning& cond) {
  SFV_REQUIRE(!sigma.empty(), "denoise needs sigma");
  SFV_REQUIRE(sigma.size() == 1 || static_cast<std::int64_t>(sigma.size()) == x.size(0),
          "sigma must hold 1 or B values");
  std::vector<double> cs, co, ci, cn;
  for (double s : sigma) {
    const Precondition p = precondition(s);
    cs.push_back(p.c_skip);
    co.push_back(p.c_out);
    ci.push_back(p.c_in);
    cn.push_back(p.c_noise);
  }
  const int r = x.rank();
  Tensor f = net(x * per_sample(ci, r, x.dtype()), cn, cond);
  SFV_REQUIRE(f.shape() == x.shape(), "network output shape mismatch");
  return x * per_sample(cs, r, x.dtype()) + f * per_sample(co, r, x.dtype());
}

Tensor denoise(const GeneratorNet& net, const Tensor& x, std::span<const double> sigma,
               const Conditioning& cond) {
  return denoise(
      [&net](const Tensor& xi, std::span<const double> cn, const Conditioning& c) { return net.forward(xi, cn, c); },
      x, sigma, cond);
}

Tensor reshape_spatial(const Tensor& feat) {
  SFV_REQUIRE(feat.rank() == 5, "reshape_spatial expects [B, N, C, h, w]");
  return reshape(feat, {feat.size(0) * feat.size(1), feat.size(2), feat.size(3), feat.size(4)});
}

Tensor unreshape_spatial(const Tensor& rows, std::int64_t batch, std::int64_t frames) {
  SFV_REQUIRE(rows.rank() == 4 && rows.size(0) == batch * frames, "unreshape_spatial shape mismatch");
  return reshape(rows, {batch, frames, rows.size(1), rows.size(2), rows.size(3)});
}

Tensor reshape_temporal(const Tensor& feat) {
  SFV_REQUIRE(feat.rank() == 5, "reshape_temporal expects [B, N, C, h, w]");
  const std::int64_t b = feat.size(0), n = feat.size(1), c = feat.size(2), h = feat.size(3), w = feat.size(4);
  return reshape(permute(feat, {0, 3, 4, 2, 1}), {b * h * w, c, n});
}

Tensor unreshape_temporal(const Tensor& seqs, std::int64_t batch, std::int64_t h, std::int64_t w) {
  SFV_REQUIRE(seqs.rank() == 3 && seqs.size(0) == batch * h * w, "unreshape_temporal shape mismatch");
  const std::int64_t c = seqs.size(1), n = seqs.size(2);
  return permute(reshape(seqs, {batch, h, w, c, n}), {0, 4, 3, 1, 2});
}

namespace {

Tensor projection_logit(const Tensor& psi, const Linear& out, const Linear& proj, const Tensor& proj_cond) {
  SFV_REQUIRE(proj_cond.rank() == 2 && proj_cond.size(0) == psi.size(0), "projection condition rows mismatch");
  Tensor emb = proj(proj_cond.to(psi.dtype()));
  Tensor logit = out(psi) + sum_axis(emb * psi, 1);
  return reshape(logit, {psi.size(0)});
}

Tensor global_pool(const Tensor& x) {
  const std::int64_t m = x.size(0), c = x.size(1);
  return reshape(mean_axis(reshape(x, {m, c, -1}), 2), {m, c});
}

}  // namespace

SpatialHead::SpatialHead(std::int64_t in, std::int64_t cond_dim, const NetConfig& cfg, Rng& rng) {
  const std::int64_t w = cfg.head_width, g = groups_for(w, cfg.groups);
  conv1 = Conv2d(in, w, 3, 3, {1, 1, 1, 1}, rng, cfg.dtype);
  norm1 = GroupNorm(w, g, cfg.dtype);
  conv2 = Conv2d(w, w, 3, 3, {1, 1, 1, 1}, rng, cfg.dtype);
  norm2 = GroupNorm(w, g, cfg.dtype);
  out = Linear(w, 1, rng, cfg.dtype);
  proj = Linear(cond_dim, w, rng, cfg.dtype, 1.0 / std::sqrt(static_cast<double>(w)));
}

Tensor SpatialHead::features(const Tensor& frames) const {
  SFV_REQUIRE(frames.rank() == 4 && frames.size(1) == conv1.weight.size(1),
          "spatial head channel count mismatch: " + shape_str(frames.shape()));
  Tensor h = silu(norm1(conv1(frames)));
  h = silu(norm2(conv2(h)));
  return global_pool(h);
}

Tensor SpatialHead::operator()(const Tensor& frames, const Tensor& proj_cond) const {
  return projection_logit(features(frames), out, proj, proj_cond);
}

void SpatialHead::collect(const std::string& prefix, NamedTensors& o) const {
  conv1.collect(prefix + ".conv1", o);
  norm1.collect(prefix + ".norm1", o);
  conv2.collect(prefix + ".conv2", o);
  norm2.collect(prefix + ".norm2", o);
  out.collect(prefix + ".out", o);
  proj.collect(prefix + ".proj", o);
}

TemporalHead::TemporalHead(std::int64_t in, std::int64_t cond_dim, const NetConfig& cfg, Rng& rng) {
  const std::int64_t w = cfg.head_width, g = groups_for(w, cfg.groups);
  conv1 = Conv2d(in, w, 3, 1, {1, 1, 1, 0}, rng, cfg.dtype);
  norm1 = GroupNorm(w, g, cfg.dtype);
  conv2 = Conv2d(w, w, 3, 1, {1, 1, 1, 0}, rng, cfg.dtype);
  norm2 = GroupNorm(w, g, cfg.dtype);
  out = Linear(w, 1, rng, cfg.dtype);
  proj = Linear(cond_dim, w, rng, cfg.dtype, 1.0 / std::sqrt(static_cast<double>(w)));
}

Tensor TemporalHead::features(const Tensor& seqs) const {
  SFV_REQUIRE(seqs.rank() == 3 && seqs.size(1) == conv1.weight.size(1),
          "temporal head channel count mismatch: " + shape_str(seqs.shape()));
  Tensor h = reshape(seqs, {seqs.size(0), seqs.size(1), seqs.size(2), 1});
  h = silu(norm1(conv1(h)));
  h = silu(norm2(conv2(h)));
  return global_pool(h);
}

Tensor TemporalHead::operator()(const Tensor& seqs, const Tensor& proj_cond) const {
  return projection_logit(features(seqs), out, proj, proj_cond);
}

void TemporalHead::collect(const std::string& prefix, NamedTensors& o) const {
  conv1.collect(prefix + ".conv1", o);
  norm1.collect(prefix + ".norm1", o);
  conv2.collect(prefix + ".conv2", o);
  norm2.collect(prefix + ".norm2", o);
  out.collect(prefix + ".out", o);
  proj.collect(prefix + ".proj", o);
}

HeadMode parse_head_mode(const std::string& s) {
  if (s == "spatial") return HeadMode::spatial;
  if (s == "temporal") return HeadMode::temporal;
  if (s == "both") return HeadMode::both;
  fail(ErrorCode::invalid_argument, "head mode must be spatial, temporal or both, got '" + s + "'");
}

const char* head_mode_name(HeadMode mode) {
  switch (mode) {
    case HeadMode::spatial:
      return "spatial";
    case HeadMode::temporal:
      return "temporal";
    default:
      return "both";
  }
}

namespace {

constexpr std::int64_t kSigmaEmbDim = 16;

// Conditioning image pooled to a 4x4 grid (fewer cells for tiny frames).
std::int64_t spatial_pool_side(const NetConfig& cfg) { return std::min<std::int64_t>(4, cfg.height); }

std::array<std::int64_t, 4> level_side(const NetConfig& cfg) {
  return {cfg.height / 2, cfg.height / 4, cfg.height / 8, cfg.height / 8};
}

void freeze(NamedTensors params) {
  for (auto& [name, t] : params) t.requires_grad_(false);
}

}  // namespace

DiscriminatorNet::DiscriminatorNet(const NetConfig& cfg, std::uint64_t seed, HeadMode mode)
    : cfg_(cfg), mode_(mode) {
  cfg_.validate();
  SFV_REQUIRE(cfg_.height == cfg_.width, "discriminator expects square frames");
  Rng rng = make_rng(seed, {0x646973});
  backbone_ = Encoder(cfg_, rng);
  freeze(backbone_parameters());
  const std::int64_t side = spatial_pool_side(cfg_);
  const std::int64_t sp_dim = kSigmaEmbDim + cfg_.channels * side * side + cfg_.frames;
  const std::int64_t te_dim = kSigmaEmbDim + cfg_.channels;
  for (int k = 0; k < 4; ++k) {
    spatial_[k] = SpatialHead(cfg_.widths[k], sp_dim, cfg_, rng);
    temporal_[k] = TemporalHead(cfg_.widths[k], te_dim, cfg_, rng);
  }
}

void DiscriminatorNet::load_backbone(const GeneratorNet& source) {
  NamedTensors src;
  source.encoder().collect("enc", src);
  NamedTensors dst = backbone_parameters();
  SFV_REQUIRE(src.size() == dst.size(), "backbone layout mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].second.assign(src[i].second);
}

std::array<Tensor, 4> DiscriminatorNet::backbone_features(const Tensor& x_pre, std::span<const double> c_noise,
                                                          const Conditioning& cond) const {
  Encoder::Output e = backbone_(cfg_, x_pre, c_noise, cond);
  std::array<Tensor, 4> out;
  const std::int64_t b = x_pre.size(0);
  for (int k = 0; k < 4; ++k) out[k] = unreshape_spatial(e.feats[k], b, cfg_.frames);
  return out;
}

namespace {

std::vector<double> sigma_noise(std::span<const double> sigma_prime, std::int64_t batch) {
  SFV_REQUIRE(sigma_prime.size() == 1 || static_cast<std::int64_t>(sigma_prime.size()) == batch,
          "sigma' must hold 1 or B values");
  std::vector<double> out;
  for (std::int64_t b = 0; b < batch; ++b) {
    const double s = sigma_prime[sigma_prime.size() == 1 ? 0 : b];
    out.push_back(precondition(s).c_noise);
  }
  return out;
}

}  // namespace

Tensor DiscriminatorNet::spatial_condition(int k, std::span<const double> sigma_prime,
                                           const Conditioning& cond) const {
  (void)k;
  const std::int64_t b = cond.batch(), n = cfg_.frames;
  const std::int64_t side = spatial_pool_side(cfg_);
  const std::vector<double> cn = sigma_noise(sigma_prime, b);
  const std::vector<double> sig = fourier_features(cn, kSigmaEmbDim, DType::f64).to_vector();
  const std::vector<double> img = avg_pool(cond.image.detach().to(DType::f64), cfg_.height / side).to_vector();
  const std::int64_t img_dim = cfg_.channels * side * side;
  const std::int64_t dim = kSigmaEmbDim + img_dim + n;
  std::vector<double> rows(static_cast<std::size_t>(b * n * dim), 0.0);
  for (std::int64_t bi = 0; bi < b; ++bi) {
    for (std::int64_t i = 0; i < n; ++i) {
      double* r = &rows[static_cast<std::size_t>((bi * n + i) * dim)];
      for (std::int64_t j = 0; j < kSigmaEmbDim; ++j) r[j] = sig[bi * kSigmaEmbDim + j];
      for (std::int64_t j = 0; j < img_dim; ++j) r[kSigmaEmbDim + j] = img[bi * img_dim + j];
      r[kSigmaEmbDim + img_dim + i] = 1.0;
    }
  }
  return Tensor::from_values({b * n, dim}, rows, cfg_.dtype);
}

Tensor DiscriminatorNet::temporal_condition(int k, std::span<const double> sigma_prime,
                                            const Conditioning& cond) const {
  const std::int64_t b = cond.batch(), c = cfg_.channels;
  const std::int64_t side = level_side(cfg_)[k];
  const std::vector<double> cn = sigma_noise(sigma_prime, b);
  const std::vector<double> sig = fourier_features(cn, kSigmaEmbDim, DType::f64).to_vector();
  // [B, C, side, side]
  const std::vector<double> img = avg_pool(cond.image.detach().to(DType::f64), cfg_.height / side).to_vector();
  const std::int64_t dim = kSigmaEmbDim + c;
  const std::int64_t cells = side * side;
  std::vector<double> rows(static_cast<std::size_t>(b * cells * dim));
  for (std::int64_t bi = 0; bi < b; ++bi) {
    for (std::int64_t p = 0; p < cells; ++p) {
      double* r = &rows[static_cast<std::size_t>((bi * cells + p) * dim)];
      for (std::int64_t j = 0; j < kSigmaEmbDim; ++j) r[j] = sig[bi * kSigmaEmbDim + j];
      for (std::int64_t ch = 0; ch < c; ++ch) r[kSigmaEmbDim + ch] = img[(bi * c + ch) * cells + p];
    }
  }
  return Tensor::from_values({b * cells, dim}, rows, cfg_.dtype);
}

Tensor DiscriminatorNet::score_preconditioned(const Tensor& x_pre, std::span<const double> sigma_prime,
                                              const Conditioning& cond) const {
  const std::int64_t b = x_pre.size(0);
  for (double s : sigma_prime) SFV_REQUIRE(s > 0.0 && std::isfinite(s), "sigma' must be positive");
  const std::vector<double> cn = sigma_noise(sigma_prime, b);
  std::array<Tensor, 4> feats = backbone_features(x_pre, cn, cond);
  Tensor total;
  int active = 0;
  auto accumulate = [&](const Tensor& logits, std::int64_t per_clip) {
    Tensor m = mean_axis(reshape(logits, {b, per_clip}), 1);
    total = total.defined() ? total + m : m;
    ++active;
  };
  for (int k = 0; k < 4; ++k) {
    if (mode_ != HeadMode::temporal) {
      accumulate(spatial_[k](reshape_spatial(feats[k]), spatial_condition(k, sigma_prime, cond)), cfg_.frames);
    }
    if (mode_ != HeadMode::spatial) {
      const std::int64_t h = feats[k].size(3), w = feats[k].size(4);
      accumulate(temporal_[k](reshape_temporal(feats[k]), temporal_condition(k, sigma_prime, cond)), h * w);
    }
  }
  return reshape(total * (1.0 / active), {b});
}

Tensor DiscriminatorNet::score(const Tensor& x_noisy, std::span<const double> sigma_prime,
                               const Conditioning& cond) const {
  std::vector<double> ci;
  for (double s : sigma_prime) ci.push_back(precondition(s).c_in);
  return score_preconditioned(x_noisy * per_sample(ci, x_noisy.rank(), x_noisy.dtype()), sigma_prime, cond);
}

NamedTensors DiscriminatorNet::backbone_parameters() const {
  NamedTensors out;
  backbone_.collect("backbone", out);
  return out;
}

NamedTensors DiscriminatorNet::head_parameters() const {
  NamedTensors out;
  for (int k = 0; k < 4; ++k) spatial_[k].collect("heads.spatial" + std::to_string(k), out);
  for (int k = 0; k < 4; ++k) temporal_[k].collect("heads.temporal" + std::to_string(k), out);
  return out;
}

NamedTensors DiscriminatorNet::active_head_parameters() const {
  NamedTensors out;
  if (mode_ != HeadMode::temporal) {
    for (int k = 0; k < 4; ++k) spatial_[k].collect("heads.spatial" + std::to_string(k), out);
  }
  if (mode_ != HeadMode::spatial) {
    for (int k = 0; k < 4; ++k) temporal_[k].collect("heads.temporal" + std::to_string(k), out);
  }
  return out;
}

std::int64_t count_elements(const NamedTensors& params) {
  std::int64_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

}  // namespace sfv
