// Synthetic desk-scale image corpus: piecewise-constant rectangles, smooth
// Gaussian bumps, or a mix, all in [0,1] and deterministic per seed.

#pragma once

#include <cstdint>
#include <string>

#include "n2b/estimators.hpp"

namespace n2b {

enum class DataKind { blocks, bumps, mixed };

DataKind data_kind_from_string(const std::string& s);
std::string data_kind_name(DataKind k);

// Fills `clean` only; callers add measurement noise.
Dataset gen_synthetic_dataset(DataKind kind, int height, int width, int count,
                              std::uint64_t seed);

// clean + N(0, sigma^2) per image, seeded per index.
std::vector<Tensor> add_noise(const std::vector<Tensor>& clean, double sigma, std::uint64_t seed);

}  // namespace n2b
