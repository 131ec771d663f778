// 8-bit binary PGM (P5) image I/O; values map to [0,1] tensors.

#pragma once

#include <filesystem>

#include "n2b/tensor.hpp"

namespace n2b {

Tensor read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Tensor& image);

}  // namespace n2b
