#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sfv/tensor.hpp"

namespace sfv {

void write_png_gray(const std::string& path, int width, int height, const std::vector<std::uint8_t>& pixels);

// One row per clip, one column per frame; values in [-1, 1] map to [0, 255].
// Multi-channel clips are averaged over channels.
void write_contact_sheet(const Tensor& clips, const std::string& path, int scale = 2, std::int64_t max_clips = 16);

}  // namespace sfv
