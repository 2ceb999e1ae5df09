#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace satqa {

// `key = value` text with `#` comments. Keys are unique; later `set` calls
// (command-line overrides) replace file values.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void merge(const KeyValueConfig& overrides);

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  // Sorted `key = value` lines; the canonical form hashed into checkpoints.
  std::string canonical() const;
  std::uint64_t hash() const;

 private:
  std::string origin_ = "<config>";
  std::map<std::string, std::string> values_;
};

// Splits on `sep`, trimming whitespace and dropping empty pieces.
std::vector<std::string> split_trim(const std::string& s, char sep);
int parse_int(const std::string& s, const std::string& what);
double parse_double(const std::string& s, const std::string& what);

// Which Multi-Stream Block branches are wired in.
struct BranchSet {
  bool deform = true;
  bool depthwise = true;
  bool attention = true;

  // Accepts `deform,depthwise,attention` names or the ablation labels
  // MA, DF+DW, MA+DF, MA+DW, MA+DF+DW.
  static BranchSet parse(const std::string& text);
  std::string label() const;  // MA+DF+DW style
  int count() const { return int(deform) + int(depthwise) + int(attention); }
  bool operator==(const BranchSet&) const = default;
};

using StageSplit = std::array<int, 3>;  // widths of the deform / depthwise / attention groups

// Architecture preset. `full.preset` and `desk.preset` ship in presets/.
struct ModelPreset {
  std::string name;
  int input_size = 0;
  int patch_size = 0;
  int vit_width = 0;
  int vit_depth = 0;
  int vit_heads = 0;
  int mlp_ratio = 4;
  std::vector<int> tap_layers;  // 1-based transformer block indices
  int D = 0;
  std::array<StageSplit, 3> stage_splits{};
  int heads = 0;  // attention-branch heads inside the Multi-Stream Block
  BranchSet branches;
  int cbam_reduction = 16;
  int pab_heads = 1;
  int encoder_stem = 0;
  int encoder_stem_stride = 2;  // 2: strided stem plus 2x2 max-pool; 1: full resolution
  std::array<int, 4> encoder_widths{};
  std::array<int, 4> encoder_blocks{};
  int proj_dim = 128;
  int proj_hidden = 0;  // 0 -> D

  static ModelPreset from_config(const KeyValueConfig& cfg);
  static ModelPreset load(const std::filesystem::path& path);
  KeyValueConfig to_config() const;

  int grid() const { return input_size / patch_size; }
  int final_grid() const { return grid() / 4; }
  int final_tokens() const { return final_grid() * final_grid(); }
  int tap_width() const { return vit_width * static_cast<int>(tap_layers.size()); }
  int max_tap() const;
  // Throws ConfigError naming the violated constraint.
  void validate() const;
};

// Locates a preset by name (`desk`, `full`) or path.
std::filesystem::path resolve_preset(const std::string& name_or_path);

}  // namespace satqa
