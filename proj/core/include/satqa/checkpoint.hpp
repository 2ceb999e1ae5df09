#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "satqa/nn.hpp"
#include "satqa/tensor.hpp"

namespace satqa {

inline constexpr int kCheckpointFormatVersion = 1;

// Single-file container: magic, format version, JSON header, then named
// tensors with raw little-endian doubles (bit-exact reload).
struct Checkpoint {
  nlohmann::json header;
  std::map<std::string, Tensor> tensors;

  void add_module(const std::string& prefix, nn::Module& module);
  // Copies every `prefix`-qualified tensor into the module. Missing or
  // mis-shaped tensors are configuration errors.
  void load_module(const std::string& prefix, nn::Module& module) const;
  bool has_prefix(const std::string& prefix) const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
  // Reads only the header (cheap provenance checks).
  static nlohmann::json peek_header(const std::filesystem::path& path);
};

// FNV-1a over the names, shapes and raw bytes of every parameter.
std::uint64_t module_checksum(nn::Module& module);
std::uint64_t file_hash(const std::filesystem::path& path);

}  // namespace satqa
