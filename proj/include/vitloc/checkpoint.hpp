#pragma once

#include <string>

#include "vitloc/vit.hpp"

namespace vitloc {

// On-disk model format, version 1:
//   bytes 0-3   ASCII magic "VITL"
//   bytes 4-7   u32 little-endian format version (= 1)
//   bytes 8-15  u64 little-endian manifest byte length
//   ...         UTF-8 JSON manifest: full model config, ordered weight
//               name/shape list, class table, AP ids
//   ...         every weight tensor as IEEE-754 binary32 little-endian,
//               concatenated in manifest order
//
// Loading rejects: wrong magic, unsupported version, truncated manifest or
// payload, and trailing bytes (all FormatError with a say-which message).

/// Writes atomically (temp file + rename). Verifies before writing that the
/// scalar count implied by the shape manifest matches param_count(config).
void save_checkpoint(const VitModel<float>& model, const std::string& path);

VitModel<float> load_checkpoint(const std::string& path);

}  // namespace vitloc
