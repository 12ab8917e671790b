#pragma once

#include <filesystem>

#include "mmfuse/model.hpp"

namespace mmfuse {

// Checkpoint layout (little endian):
//   8-byte magic "MMFUSEC1"
//   u32 version
//   u32 meta_len, meta JSON (the ModelConfig, charset included)
//   u32 tensor count, then per tensor:
//     u32 name_len, name bytes, u32 rows, u32 cols, rows*cols float32 row-major
void save_checkpoint(const Model& m, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace mmfuse
