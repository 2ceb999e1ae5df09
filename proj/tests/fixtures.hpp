#pragma once

#include <filesystem>
#include <string>

#include "satqa/config.hpp"
#include "satqa/dataset.hpp"
#include "satqa/distortion.hpp"
#include "satqa/image.hpp"

namespace satqa::testing {

inline ModelPreset load_named_preset(const std::string& name) {
  return ModelPreset::load(std::filesystem::path(SATQA_PRESET_DIR) / (name + ".preset"));
}
inline ModelPreset desk_preset() { return load_named_preset("desk"); }
inline ModelPreset full_preset() { return load_named_preset("full"); }

inline KeyValueConfig load_shipped_config(const std::string& file) {
  return KeyValueConfig::load(std::filesystem::path(SATQA_CONFIG_DIR) / file);
}

inline Tensor random_image_input(int size, std::uint64_t seed) {
  return to_model_input(synth::generate_reference(size, size, seed));
}

}  // namespace satqa::testing
