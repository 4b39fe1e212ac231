#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "sfv/rng.hpp"
#include "sfv/tensor.hpp"

namespace sfv {

// Bouncing discs and squares on a dark background.
struct SceneSpec {
  std::int64_t frames = 8;
  std::int64_t height = 32;
  std::int64_t width = 32;
  std::int64_t channels = 1;
  std::int64_t min_shapes = 1;
  std::int64_t max_shapes = 2;
  double min_radius = 3.0;  // pixels
  double max_radius = 6.0;
  double min_speed = 1.0;  // pixels per frame
  double max_speed = 2.5;
  double min_intensity = 0.4;  // fraction of the [-1, 1] range above background
  double max_intensity = 1.0;
  bool allow_squares = true;

  void validate() const;
};

// [count, N, C, H, W] float clips in [-1, 1]; clip i depends only on (seed, i).
Tensor make_videos(const SceneSpec& spec, std::int64_t count, std::uint64_t seed);

void write_dataset(const Tensor& clips, const std::string& path);
Tensor read_dataset(const std::string& path);

// Clips at the given indices, stacked.
Tensor gather_clips(const Tensor& clips, std::span<const std::int64_t> index);
// Indices drawn uniformly with replacement.
std::vector<std::int64_t> draw_indices(Rng& rng, std::int64_t population, std::int64_t count);

struct DatasetStats {
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;
  double frame_diff = 0.0;  // mean |x_{n+1} - x_n|
};
DatasetStats dataset_stats(const Tensor& clips);

}  // namespace sfv
