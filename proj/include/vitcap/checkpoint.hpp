#pragma once

#include <string>

#include "vitcap/vit.hpp"

// Model checkpoints: "VCPT" magic, a format version, a JSON header holding
// the model config, the element type, and a named tensor table (shape +
// byte offset per parameter), then the raw little-endian values. Round-trip
// is exact; loading validates magic, version, dtype, names, and shapes.

namespace vitcap {

inline constexpr uint32_t checkpoint_format_version = 1;

template <typename T>
void save_checkpoint(const VisionTransformer<T>& model, const std::string& path);

template <typename T>
VisionTransformer<T> load_checkpoint(const std::string& path);

}  // namespace vitcap
