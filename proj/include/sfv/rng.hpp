#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include "sfv/tensor.hpp"

namespace sfv {

using Rng = std::mt19937_64;

// Independent stream for (seed, tags...), e.g. (seed, step, purpose).
inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {}) {
  std::vector<std::uint32_t> words;
  words.push_back(static_cast<std::uint32_t>(seed));
  words.push_back(static_cast<std::uint32_t>(seed >> 32));
  for (auto t : tags) {
    words.push_back(static_cast<std::uint32_t>(t));
    words.push_back(static_cast<std::uint32_t>(t >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

inline Tensor randn(Shape shape, Rng& rng, DType dtype = DType::f32) {
  Tensor t(std::move(shape), dtype);
  std::normal_distribution<double> normal(0.0, 1.0);
  dispatch(dtype, [&]<class T>() {
    T* p = t.data<T>();
    for (std::int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(normal(rng));
  });
  return t;
}

inline Tensor rand_uniform(Shape shape, double lo, double hi, Rng& rng, DType dtype = DType::f32) {
  Tensor t(std::move(shape), dtype);
  std::uniform_real_distribution<double> u(lo, hi);
  dispatch(dtype, [&]<class T>() {
    T* p = t.data<T>();
    for (std::int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(u(rng));
  });
  return t;
}

}  // namespace sfv
