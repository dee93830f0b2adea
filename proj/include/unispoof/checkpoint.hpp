#pragma once

// Checkpoint files: an 8-byte little-endian header length, a JSON header
// (tensor names, shapes, dtype, byte offsets and free-form metadata), then
// the raw little-endian float32 payload.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "unispoof/layers.hpp"

namespace unispoof {

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  ParamList<float> tensors;

  // nullptr when absent.
  const Tensor<float>* find(const std::string& name) const;
  // Every tensor whose name starts with `prefix` + ".".
  ParamList<float> with_prefix(const std::string& prefix) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// SHA-256 over names, shapes and raw bytes, as lowercase hex.
std::string params_sha256(const ParamList<float>& params);

}  // namespace unispoof
