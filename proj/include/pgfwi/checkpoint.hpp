#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "pgfwi/tensor.hpp"

namespace pgfwi {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// WGT1 layout, little-endian: "WGT1", then one record per parameter until EOF:
//   u32 name_len, name bytes, u32 ndim, u64 dims[ndim], f64 payload[numel].
void save_checkpoint(const std::filesystem::path& path, const NamedTensors& params);
NamedTensors load_checkpoint(const std::filesystem::path& path);

// Copies stored values into existing parameters matched by name; every
// parameter must be present with the same shape.
void restore_checkpoint(const std::filesystem::path& path, const NamedTensors& params);

} // namespace pgfwi
