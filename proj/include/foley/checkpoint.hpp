#pragma once

#include <string>
#include <utility>
#include <vector>

#include "foley/errors.hpp"
#include "foley/tensor.hpp"

namespace foley {

// Binary container of named float tensors. Layout, all little-endian:
//   "NTC1" | u32 entry count
//   per entry: u16 name length | name bytes | u8 dtype (0 = f32) | u8 rank |
//              rank x u64 dims | raw f32 data
//   u64 total file length (self-check against truncation)
// Writes go to a temp file renamed into place so readers never see a partial
// checkpoint.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& entries);

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

const Tensor* find_entry(const std::vector<std::pair<std::string, Tensor>>& entries,
                         const std::string& name);

}  // namespace foley
