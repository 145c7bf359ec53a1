#pragma once

#include <string>

#include "foley/tensor.hpp"

namespace foley {

// Writes a [H x W] tensor with values in [-1, 1] as an 8-bit P5 PGM,
// row 0 at the top.
void write_pgm(const std::string& path, const Tensor& img);

}  // namespace foley
