#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "satqa/image.hpp"

namespace satqa::synth {

enum class DistortionKind { GaussianBlur, Awgn, Jpeg, Brighten, Contrast, Saturation };

// Family u (1..U), level v (1..V) and the derived class index. Category 0 is
// the undistorted reference.
struct DistortionLabel {
  int family = 0;
  int level = 0;
  int category = 0;

  static DistortionLabel reference() { return {}; }
  static DistortionLabel distorted(int family, int level, int levels);
  bool is_reference() const { return category == 0; }
  bool operator==(const DistortionLabel&) const = default;
};

// reference -> 0, otherwise (u - 1) * V + v. Throws DomainError for v outside
// 1..V or u < 1.
int category_index(bool reference, int family, int level, int levels);
int category_count(int families, int levels);  // U * V + 1

struct DistortionSpec {
  DistortionKind kind = DistortionKind::GaussianBlur;
  std::string name;
  // One entry per level, strictly increasing in severity along the family's
  // axis (blur sigma up, noise sigma up, JPEG quality down, ...).
  std::vector<double> params;
  bool deterministic = true;  // false when the family consumes the seed

  int levels() const { return static_cast<int>(params.size()); }
  // Same family with a V-entry table, linearly interpolated over the
  // calibrated range.
  DistortionSpec resampled(int levels) const;
  // Throws ConfigError if the table is not strictly monotone in severity.
  void validate() const;
};

// Gaussian blur, additive white Gaussian noise, JPEG, brighten, contrast
// change, colour saturation shift; five calibrated levels each.
std::vector<DistortionSpec> default_bank();
// Looks up a family by name in the default bank; unknown names are
// configuration errors.
DistortionSpec find_family(const std::string& name);
// Comma separated names, or `all`.
std::vector<DistortionSpec> parse_family_list(const std::string& list);

// Output has the input's dimensions, intensities clamped to [0, 1], and is
// bit-identical for identical (image, spec, level, seed).
RgbImage apply_distortion(const RgbImage& image, const DistortionSpec& spec, int level, std::uint64_t seed);

// Derives a per-record seed from the corpus seed and record coordinates.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

// Procedural natural-looking reference: smooth gradients, fractal texture,
// soft-edged shapes and stripes, so every distortion family has signal to
// act on.
RgbImage generate_reference(int height, int width, std::uint64_t seed);

}  // namespace satqa::synth
