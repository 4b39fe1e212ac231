#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sfv/ops.hpp"
#include "sfv/rng.hpp"
#include "sfv/tensor.hpp"

namespace sfv {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct NetConfig {
  std::int64_t channels = 1;
  std::int64_t frames = 8;
  std::int64_t height = 32;
  std::int64_t width = 32;
  std::array<std::int64_t, 4> widths{32, 64, 96, 128};
  std::int64_t groups = 8;
  std::int64_t emb_dim = 64;
  std::int64_t head_width = 32;
  DType dtype = DType::f32;

  void validate() const;
  Shape video_shape(std::int64_t batch) const { return {batch, frames, channels, height, width}; }
};

// Clean first frame of each clip; the clip length is carried alongside.
struct Conditioning {
  Tensor image;  // [B, C, H, W]
  std::int64_t frames = 0;

  static Conditioning first_frame(const Tensor& clips);
  std::int64_t batch() const { return image.size(0); }
};

// Fixed sin/cos features of per-sample scalars -> [B, dim].
Tensor fourier_features(std::span<const double> values, std::int64_t dim, DType dtype);

struct Conv2d {
  Tensor weight, bias;
  ConvGeom geom;

  Conv2d() = default;
  Conv2d(std::int64_t in, std::int64_t out, std::int64_t kh, std::int64_t kw, ConvGeom geom,
         Rng& rng, DType dtype, double gain = 1.0);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

// Kernel-3 convolution along the frame axis of [B, N, C, H, W].
struct FrameConv {
  Tensor weight, bias;

  FrameConv() = default;
  FrameConv(std::int64_t in, std::int64_t out, Rng& rng, DType dtype, double gain = 1.0);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct GroupNorm {
  Tensor gamma, beta;
  std::int64_t groups = 1;

  GroupNorm() = default;
  GroupNorm(std::int64_t channels, std::int64_t groups, DType dtype);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct Linear {
  Tensor weight, bias;  // [out, in], [out]

  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, Rng& rng, DType dtype, double gain = 1.0);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

// Residual spatio-temporal block on frames flattened into the batch axis.
struct SpatioTemporalBlock {
  Conv2d in_conv;
  GroupNorm norm1;
  Linear emb_proj;
  Conv2d conv;
  GroupNorm norm2;
  FrameConv temporal;

  SpatioTemporalBlock() = default;
  SpatioTemporalBlock(std::int64_t in, std::int64_t out, bool downsample, const NetConfig& cfg, Rng& rng);
  Tensor operator()(const Tensor& x, const Tensor& emb, std::int64_t batch, std::int64_t frames) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

// UNet encoder: noise embedding, stem, and four blocks (three downsampling).
struct Encoder {
  struct Output {
    Tensor stem;                  // [B*N, c1, H, W]
    std::array<Tensor, 4> feats;  // [B*N, c_k, H_k, W_k]
    Tensor emb;                   // [B, E]
  };

  Linear emb1, emb2;
  Conv2d stem;
  std::array<SpatioTemporalBlock, 4> blocks;

  Encoder() = default;
  Encoder(const NetConfig& cfg, Rng& rng);
  Output operator()(const NetConfig& cfg, const Tensor& x_in, std::span<const double> c_noise,
                    const Conditioning& cond) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct Decoder {
  std::array<SpatioTemporalBlock, 4> blocks;
  GroupNorm out_norm;
  Conv2d out_conv;

  Decoder() = default;
  Decoder(const NetConfig& cfg, Rng& rng);
  Tensor operator()(const Encoder::Output& enc, std::int64_t batch, std::int64_t frames) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

// The network F inside the preconditioned denoiser.
class GeneratorNet {
 public:
  GeneratorNet(const NetConfig& cfg, std::uint64_t seed);

  // x_in [B, N, C, H, W]; c_noise holds one value or one per clip.
  Tensor forward(const Tensor& x_in, std::span<const double> c_noise, const Conditioning& cond) const;

  const NetConfig& config() const { return cfg_; }
  const Encoder& encoder() const { return enc_; }
  NamedTensors parameters() const;
  std::int64_t parameter_count() const;

  std::uint64_t forward_count() const { return forwards_; }
  void reset_forward_count() { forwards_ = 0; }

 private:
  NetConfig cfg_;
  Encoder enc_;
  Decoder dec_;
  mutable std::uint64_t forwards_ = 0;
};

// c_skip(s) x + c_out(s) F(c_in(s) x; c_noise(s), c), per-sample sigma.
using NetworkFn =
    std::function<Tensor(const Tensor& x_in, std::span<const double> c_noise, const Conditioning& cond)>;
Tensor denoise(const NetworkFn& net, const Tensor& x, std::span<const double> sigma, const Conditioning& cond);
Tensor denoise(const GeneratorNet& net, const Tensor& x, std::span<const double> sigma,
               const Conditioning& cond);

// (B, N, C, h, w) <-> (B*N, C, h, w): frame i of clip b is row b*N + i.
Tensor reshape_spatial(const Tensor& feat);
Tensor unreshape_spatial(const Tensor& rows, std::int64_t batch, std::int64_t frames);
// (B, N, C, h, w) <-> (B*h*w, C, N): location (y, x) of clip b is row (b*h + y)*w + x.
Tensor reshape_temporal(const Tensor& feat);
Tensor unreshape_temporal(const Tensor& seqs, std::int64_t batch, std::int64_t h, std::int64_t w);

// logit = w . psi + b + <proj(cond), psi>, psi = pooled conv features.
struct SpatialHead {
  Conv2d conv1, conv2;
  GroupNorm norm1, norm2;
  Linear out;   // width -> 1
  Linear proj;  // condition -> width

  SpatialHead() = default;
  SpatialHead(std::int64_t in, std::int64_t cond_dim, const NetConfig& cfg, Rng& rng);
  Tensor features(const Tensor& frames) const;  // [(B*N), width]
  Tensor operator()(const Tensor& frames, const Tensor& proj_cond) const;  // [(B*N)]
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct TemporalHead {
  Conv2d conv1, conv2;  // kernel 3 along frames
  GroupNorm norm1, norm2;
  Linear out;
  Linear proj;

  TemporalHead() = default;
  TemporalHead(std::int64_t in, std::int64_t cond_dim, const NetConfig& cfg, Rng& rng);
  Tensor features(const Tensor& seqs) const;  // [(B*h*w), width]
  Tensor operator()(const Tensor& seqs, const Tensor& proj_cond) const;  // [(B*h*w)]
  void collect(const std::string& prefix, NamedTensors& out) const;
};

enum class HeadMode { spatial, temporal, both };
HeadMode parse_head_mode(const std::string& s);
const char* head_mode_name(HeadMode mode);

// Frozen copy of the generator encoder plus four spatial and four temporal heads.
class DiscriminatorNet {
 public:
  DiscriminatorNet(const NetConfig& cfg, std::uint64_t seed, HeadMode mode = HeadMode::both);

  // Copies the backbone weights from a generator's encoder.
  void load_backbone(const GeneratorNet& source);

  // x_pre is the already c_in-scaled input. Returns [B, N, C_k, H_k, W_k].
  std::array<Tensor, 4> backbone_features(const Tensor& x_pre, std::span<const double> c_noise,
                                          const Conditioning& cond) const;

  // Projection conditions for head k.
  Tensor spatial_condition(int k, std::span<const double> sigma_prime, const Conditioning& cond) const;
  Tensor temporal_condition(int k, std::span<const double> sigma_prime, const Conditioning& cond) const;

  // Mean over active heads of each head's per-clip mean logit -> [B].
  Tensor score_preconditioned(const Tensor& x_pre, std::span<const double> sigma_prime,
                              const Conditioning& cond) const;
  // Scales x_noisy by c_in(sigma') first.
  Tensor score(const Tensor& x_noisy, std::span<const double> sigma_prime, const Conditioning& cond) const;

  HeadMode mode() const { return mode_; }
  void set_mode(HeadMode mode) { mode_ = mode; }
  const NetConfig& config() const { return cfg_; }
  std::array<SpatialHead, 4>& spatial_heads() { return spatial_; }
  std::array<TemporalHead, 4>& temporal_heads() { return temporal_; }

  NamedTensors backbone_parameters() const;
  NamedTensors head_parameters() const;
  // Heads that contribute to the score under the current mode.
  NamedTensors active_head_parameters() const;

 private:
  NetConfig cfg_;
  Encoder backbone_;
  std::array<SpatialHead, 4> spatial_;
  std::array<TemporalHead, 4> temporal_;
  HeadMode mode_;
};

std::int64_t count_elements(const NamedTensors& params);

}  // namespace sfv
