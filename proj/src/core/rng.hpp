#pragma once

#include <cstdint>
#include <random>

#include "core/tensor.hpp"

namespace pistm {

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

// Derives an independent stream for a sub-task (per condition, per start, ...).
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  Rng mix(seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
  mix.discard(7);
  return Rng(mix());
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

inline Tensor random_normal(Shape dims, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(dims));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * normal(rng);
  return t;
}

inline Tensor random_uniform(Shape dims, Rng& rng, double lo, double hi) {
  Tensor t(std::move(dims));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(rng, lo, hi);
  return t;
}

}  // namespace pistm
