#pragma once

#include <filesystem>

#include "mal/numcore/param_store.hpp"

namespace mal::numcore {

// Container layout: 8-byte magic "MALCKPT1", u64 little-endian header length,
// JSON header {format, payload_bytes, payload_sha256, tensors:[{name, shape,
// offset, count}]}, then the payload of little-endian IEEE-754 doubles.
void save_checkpoint(const ParamStore& store, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);
// Copies values into an existing store; names and shapes must match exactly.
void load_checkpoint_into(ParamStore& store, const std::filesystem::path& path);

}  // namespace mal::numcore
