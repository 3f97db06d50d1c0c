#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "colorcount/nn/tensor.hpp"

namespace colorcount::pipeline {

/// Manifest plus named parameter tensors.
///
/// On-disk layout (single file):
///   8 bytes   magic "CCKPT\0\0\1"
///   8 bytes   manifest length, little-endian uint64
///   N bytes   manifest, UTF-8 JSON; manifest["tensors"] lists
///             {name, shape, offset} with offsets counted in elements
///   rest      tensor data, little-endian IEEE-754 float32, in list order
struct Checkpoint {
  nlohmann::json manifest = nlohmann::json::object();
  std::vector<nn::Parameter> tensors;

  [[nodiscard]] int stage() const;
  [[nodiscard]] const nn::Parameter* find(const std::string& name) const;
  [[nodiscard]] const nn::Parameter& at(const std::string& name) const;
  /// All tensors whose name starts with `prefix`, in stored order.
  [[nodiscard]] std::vector<nn::Parameter> with_prefix(const std::string& prefix) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Validates the manifest tensor table against the data section.
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path);

/// 64-bit FNV-1a of a string (used for config hashes in manifests).
[[nodiscard]] std::uint64_t fnv1a(const std::string& text);

}  // namespace colorcount::pipeline
