#include "sfv/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

#include "sfv/binio.hpp"

namespace sfv {

namespace {

constexpr char kMagic[4] = {'S', 'F', 'V', 'D'};
constexpr std::uint32_t kVersion = 1;

struct Shape2d {
  bool square = false;
  double radius = 0.0;
  double intensity = 0.0;
  double x = 0.0, y = 0.0;
  double vx = 0.0, vy = 0.0;
};

// One frame of motion with elastic reflection off the walls.
void advance(double& pos, double& vel, double lo, double hi) {
  pos += vel;
  for (int guard = 0; guard < 8 && (pos < lo || pos > hi); ++guard) {
    if (pos < lo) pos = 2.0 * lo - pos;
    if (pos > hi) pos = 2.0 * hi - pos;
    vel = -vel;
  }
  pos = std::clamp(pos, lo, hi);
}

double coverage(const Shape2d& s, double px, double py) {
  const double dx = px - s.x, dy = py - s.y;
  const double d = s.square ? std::max(std::abs(dx), std::abs(dy)) : std::sqrt(dx * dx + dy * dy);
  return std::clamp(s.radius + 0.5 - d, 0.0, 1.0);
}

}  // namespace

void SceneSpec::validate() const {
  require(frames >= 2, "clips need at least 2 frames");
  require(height >= 8 && width >= 8 && height % 8 == 0 && width % 8 == 0,
          "frame size must be a positive multiple of 8");
  require(channels >= 1, "channels must be >= 1");
  require(min_shapes >= 1 && max_shapes >= min_shapes, "shape count range is invalid");
  require(min_radius >= 1.0 && max_radius >= min_radius, "radius range is invalid");
  require(2.0 * max_radius + 2.0 < static_cast<double>(std::min(height, width)),
          "shapes do not fit inside the frame");
  require(min_speed >= 0.0 && max_speed >= min_speed, "speed range is invalid");
  require(min_intensity > 0.0 && max_intensity <= 1.0 && max_intensity >= min_intensity,
          "intensity range must lie in (0, 1]");
}

Tensor make_videos(const SceneSpec& spec, std::int64_t count, std::uint64_t seed) {
  spec.validate();
  require(count >= 1, "clip count must be >= 1");
  const std::int64_t n = spec.frames, c = spec.channels, h = spec.height, w = spec.width;
  const std::int64_t frame_size = c * h * w;
  std::vector<float> out(static_cast<std::size_t>(count * n * frame_size));
  for (std::int64_t i = 0; i < count; ++i) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(i)});
    std::uniform_int_distribution<std::int64_t> nshapes(spec.min_shapes, spec.max_shapes);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto lerp = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
    std::vector<Shape2d> shapes(static_cast<std::size_t>(nshapes(rng)));
    for (auto& s : shapes) {
      s.square = spec.allow_squares && u(rng) < 0.5;
      s.radius = lerp(spec.min_radius, spec.max_radius);
      s.intensity = lerp(spec.min_intensity, spec.max_intensity);
      s.x = lerp(s.radius, static_cast<double>(w - 1) - s.radius);
      s.y = lerp(s.radius, static_cast<double>(h - 1) - s.radius);
      const double speed = lerp(spec.min_speed, spec.max_speed);
      const double angle = lerp(0.0, 2.0 * std::numbers::pi);
      s.vx = speed * std::cos(angle);
      s.vy = speed * std::sin(angle);
    }
    for (std::int64_t f = 0; f < n; ++f) {
      float* frame = &out[static_cast<std::size_t>((i * n + f) * frame_size)];
      for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
          double v = 0.0;
          for (const auto& s : shapes) {
            v = std::max(v, s.intensity * coverage(s, static_cast<double>(x), static_cast<double>(y)));
          }
          const auto px = static_cast<float>(2.0 * v - 1.0);
          for (std::int64_t ch = 0; ch < c; ++ch) frame[(ch * h + y) * w + x] = px;
        }
      }
      for (auto& s : shapes) {
        advance(s.x, s.vx, s.radius, static_cast<double>(w - 1) - s.radius);
        advance(s.y, s.vy, s.radius, static_cast<double>(h - 1) - s.radius);
      }
    }
  }
  return Tensor::from_floats({count, n, c, h, w}, std::move(out));
}

void write_dataset(const Tensor& clips, const std::string& path) {
  require(clips.rank() == 5, "dataset must be [B, N, C, H, W]");
  Tensor data = clips.dtype() == DType::f32 ? clips : clips.to(DType::f32);
  binio::Writer wr;
  wr.bytes(kMagic, 4);
  wr.u32(kVersion);
  for (auto d : data.shape()) {
    require(d <= std::numeric_limits<std::uint32_t>::max(), "dataset dimension exceeds u32");
    wr.u32(static_cast<std::uint32_t>(d));
  }
  wr.u8(static_cast<std::uint8_t>(DType::f32));
  wr.tensor_data(data);
  binio::append_crc(wr.buffer(), 4);
  binio::write_file(path, wr.buffer());
}

Tensor read_dataset(const std::string& path) {
  const std::vector<std::uint8_t> buf = binio::read_file(path);
  if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0) {
    fail(ErrorCode::format, path + ": not a dataset file (bad magic)");
  }
  binio::check_crc(buf, 4, path);
  binio::Reader rd(buf.data() + 4, buf.size() - 8);
  const std::uint32_t version = rd.u32();
  if (version != kVersion) {
    fail(ErrorCode::version, path + ": unsupported dataset version " + std::to_string(version));
  }
  Shape shape(5);
  std::uint64_t total = 1;
  for (auto& d : shape) {
    d = rd.u32();
    constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 40;
    if (d != 0 && total > kMaxElements / static_cast<std::uint64_t>(d)) {
      fail(ErrorCode::format, path + ": dimension overflow");
    }
    total *= static_cast<std::uint64_t>(d);
  }
  const std::uint8_t dtype = rd.u8();
  if (dtype != 0) fail(ErrorCode::format, path + ": unsupported dtype code " + std::to_string(dtype));
  if (rd.remaining() != total * sizeof(float)) {
    fail(ErrorCode::format, path + ": payload size does not match header dims");
  }
  std::vector<float> values(static_cast<std::size_t>(total));
  rd.bytes(values.data(), values.size() * sizeof(float));
  return Tensor::from_floats(shape, std::move(values));
}

Tensor gather_clips(const Tensor& clips, std::span<const std::int64_t> index) {
  require(clips.rank() >= 1, "gather needs a batch axis");
  Shape shape = clips.shape();
  const std::int64_t stride = clips.numel() / std::max<std::int64_t>(shape[0], 1);
  shape[0] = static_cast<std::int64_t>(index.size());
  Tensor out(shape, clips.dtype());
  dispatch(clips.dtype(), [&]<class T>() {
    const T* src = clips.data<T>();
    T* dst = out.data<T>();
    for (std::size_t i = 0; i < index.size(); ++i) {
      require(index[i] >= 0 && index[i] < clips.size(0), "clip index out of range");
      std::memcpy(dst + i * stride, src + index[i] * stride, sizeof(T) * static_cast<std::size_t>(stride));
    }
  });
  return out;
}

std::vector<std::int64_t> draw_indices(Rng& rng, std::int64_t population, std::int64_t count) {
  require(population >= 1, "cannot draw from an empty dataset");
  std::uniform_int_distribution<std::int64_t> pick(0, population - 1);
  std::vector<std::int64_t> out(static_cast<std::size_t>(count));
  for (auto& i : out) i = pick(rng);
  return out;
}

DatasetStats dataset_stats(const Tensor& clips) {
  require(clips.rank() == 5 && clips.numel() > 0, "dataset must be a non-empty [B, N, C, H, W]");
  const std::vector<double> v = clips.to_vector();
  DatasetStats s;
  double sum = 0.0, sq = 0.0;
  s.min = v[0];
  s.max = v[0];
  for (double x : v) {
    sum += x;
    sq += x * x;
    s.min = std::min(s.min, x);
    s.max = std::max(s.max, x);
  }
  const auto count = static_cast<double>(v.size());
  s.mean = sum / count;
  s.stddev = std::sqrt(std::max(0.0, sq / count - s.mean * s.mean));
  const std::int64_t b = clips.size(0), n = clips.size(1);
  const std::int64_t fs = clips.numel() / (b * n);
  double diff = 0.0;
  for (std::int64_t i = 0; i < b; ++i) {
    for (std::int64_t f = 0; f + 1 < n; ++f) {
      const double* a = &v[static_cast<std::size_t>((i * n + f) * fs)];
      for (std::int64_t j = 0; j < fs; ++j) diff += std::abs(a[j + fs] - a[j]);
    }
  }
  s.frame_diff = diff / static_cast<double>(b * (n - 1) * fs);
  return s;
}

}  // namespace sfv
