#include "satqa/distortion.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "satqa/config.hpp"
#include "satqa/errors.hpp"

namespace satqa::synth {

DistortionLabel DistortionLabel::distorted(int family, int level, int levels) {
  return {family, level, category_index(false, family, level, levels)};
}

int category_index(bool reference, int family, int level, int levels) {
  if (reference) return 0;
  if (levels < 1) throw DomainError("number of levels must be >= 1");
  if (family < 1) throw DomainError("distortion family must be >= 1, got " + std::to_string(family));
  if (level < 1 || level > levels) {
    throw DomainError("distortion level " + std::to_string(level) + " outside 1.." + std::to_string(levels));
  }
  return (family - 1) * levels + level;
}

int category_count(int families, int levels) { return families * levels + 1; }

namespace {

// Sign of the severity axis: +1 when a larger parameter is more severe.
double severity_sign(DistortionKind kind) { return kind == DistortionKind::Jpeg ? -1.0 : 1.0; }

}  // namespace

void DistortionSpec::validate() const {
  if (params.empty()) throw ConfigError("distortion family '" + name + "' has no levels");
  const double s = severity_sign(kind);
  for (std::size_t i = 1; i < params.size(); ++i) {
    if (!(s * params[i] > s * params[i - 1])) {
      throw ConfigError("distortion family '" + name + "': level " + std::to_string(i + 1) +
                        " is not strictly more severe than level " + std::to_string(i));
    }
  }
}

DistortionSpec DistortionSpec::resampled(int levels) const {
  if (levels < 1) throw DomainError("number of levels must be >= 1");
  if (levels == this->levels()) return *this;
  DistortionSpec out = *this;
  out.params.clear();
  const int n = this->levels();
  for (int v = 0; v < levels; ++v) {
    const double pos = levels == 1 ? 0.0 : static_cast<double>(v) * (n - 1) / (levels - 1);
    const int lo = std::min(static_cast<int>(std::floor(pos)), n - 1);
    const int hi = std::min(lo + 1, n - 1);
    const double t = pos - lo;
    double p = params[static_cast<std::size_t>(lo)] * (1 - t) + params[static_cast<std::size_t>(hi)] * t;
    if (kind == DistortionKind::Jpeg) p = std::round(p);
    out.params.push_back(p);
  }
  out.validate();
  return out;
}

std::vector<DistortionSpec> default_bank() {
  // Calibrated on the procedural reference set: level 1 lands near 40 dB,
  // level 5 near 20 dB for the blur, noise and compression families.
  std::vector<DistortionSpec> bank = {
      {DistortionKind::GaussianBlur, "gaussian_blur", {0.7, 1.1, 1.8, 3.2, 6.0}, true},
      {DistortionKind::Awgn, "awgn", {0.01, 0.02, 0.04, 0.07, 0.11}, false},
      {DistortionKind::Jpeg, "jpeg_compression", {97, 80, 45, 14, 3}, true},
      {DistortionKind::Brighten, "brighten", {0.01, 0.02, 0.04, 0.065, 0.1}, true},
      {DistortionKind::Contrast, "contrast_change", {0.06, 0.14, 0.26, 0.42, 0.6}, true},
      {DistortionKind::Saturation, "color_saturation", {0.08, 0.17, 0.3, 0.48, 0.75}, true},
  };
  for (const auto& s : bank) s.validate();
  return bank;
}

DistortionSpec find_family(const std::string& name) {
  for (auto& s : default_bank()) {
    if (s.name == name) return s;
  }
  // Short aliases used on the command line.
  if (name == "blur") return find_family("gaussian_blur");
  if (name == "noise") return find_family("awgn");
  if (name == "jpeg") return find_family("jpeg_compression");
  if (name == "contrast") return find_family("contrast_change");
  if (name == "saturation") return find_family("color_saturation");
  throw ConfigError("unknown distortion family '" + name + "'");
}

std::vector<DistortionSpec> parse_family_list(const std::string& list) {
  if (list == "all") return default_bank();
  std::vector<DistortionSpec> out;
  for (const auto& n : split_trim(list, ',')) out.push_back(find_family(n));
  if (out.empty()) throw ConfigError("empty distortion family list");
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = i + 1; j < out.size(); ++j)
      if (out[i].name == out[j].name) throw ConfigError("distortion family '" + out[i].name + "' listed twice");
  return out;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double s = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    s += v;
  }
  for (double& v : k) v /= s;
  return k;
}

int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

RgbImage gaussian_blur(const RgbImage& img, double sigma) {
  if (sigma <= 0.0) return img;
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const int h = img.height(), w = img.width();
  std::vector<double> tmp(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * img.at(y, reflect(x + i, w), c);
        tmp[(static_cast<std::size_t>(y) * w + x) * 3 + c] = acc;
      }
  RgbImage out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i)
          acc += k[static_cast<std::size_t>(i + r)] * tmp[(static_cast<std::size_t>(reflect(y + i, h)) * w + x) * 3 + c];
        out.at(y, x, c) = static_cast<float>(acc);
      }
  return out;
}

RgbImage awgn(const RgbImage& img, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  RgbImage out = img;
  for (float& v : out.pixels()) v = static_cast<float>(v + noise(rng));
  return out;
}

double luma(const RgbImage& img, int y, int x) {
  return 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
}

RgbImage contrast_change(const RgbImage& img, double amount) {
  double mean = 0.0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) mean += luma(img, y, x);
  mean /= static_cast<double>(img.height()) * img.width();
  RgbImage out = img;
  for (float& v : out.pixels()) v = static_cast<float>(mean + (v - mean) * (1.0 - amount));
  return out;
}

RgbImage desaturate(const RgbImage& img, double amount) {
  RgbImage out = img;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const double g = luma(img, y, x);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = static_cast<float>(g + (img.at(y, x, c) - g) * (1.0 - amount));
    }
  return out;
}

}  // namespace

RgbImage apply_distortion(const RgbImage& image, const DistortionSpec& spec, int level, std::uint64_t seed) {
  if (level < 1 || level > spec.levels()) {
    throw DomainError("distortion level " + std::to_string(level) + " outside 1.." + std::to_string(spec.levels()) +
                      " for family '" + spec.name + "'");
  }
  const double p = spec.params[static_cast<std::size_t>(level - 1)];
  RgbImage out;
  switch (spec.kind) {
    case DistortionKind::GaussianBlur:
      out = gaussian_blur(image, p);
      break;
    case DistortionKind::Awgn:
      out = awgn(image, p, seed);
      break;
    case DistortionKind::Jpeg:
      out = decode_jpeg(encode_jpeg(image, static_cast<int>(p)));
      break;
    case DistortionKind::Brighten:
      out = image;
      for (float& v : out.pixels()) v = static_cast<float>(v + p);
      break;
    case DistortionKind::Contrast:
      out = contrast_change(image, p);
      break;
    case DistortionKind::Saturation:
      out = desaturate(image, p);
      break;
    default:
      throw ConfigError("unknown distortion family id " + std::to_string(static_cast<int>(spec.kind)));
  }
  out.clamp01();
  return out;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  // splitmix64 over the mixed coordinates
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(base);
  h = mix(h ^ a);
  h = mix(h ^ (b * 0x100000001b3ULL));
  h = mix(h ^ (c * 0xc2b2ae3d27d4eb4fULL));
  return h;
}

RgbImage generate_reference(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RgbImage img(height, width);

  // Background: bilinear blend of four corner colours.
  double corner[4][3];
  for (auto& cc : corner)
    for (double& v : cc) v = 0.15 + 0.7 * u(rng);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double ty = static_cast<double>(y) / (height - 1), tx = static_cast<double>(x) / (width - 1);
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = static_cast<float>((1 - ty) * ((1 - tx) * corner[0][c] + tx * corner[1][c]) +
                                             ty * ((1 - tx) * corner[2][c] + tx * corner[3][c]));
    }

  // Fractal value noise, 4 octaves.
  const double tint[3] = {u(rng), u(rng), u(rng)};
  double amp = 0.12;
  for (int octave = 0; octave < 4; ++octave, amp *= 0.55) {
    const int cells = 3 << octave;
    std::vector<double> lattice(static_cast<std::size_t>((cells + 1) * (cells + 1)));
    for (double& v : lattice) v = u(rng) - 0.5;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double fy = static_cast<double>(y) * cells / height, fx = static_cast<double>(x) * cells / width;
        const int iy = static_cast<int>(fy), ix = static_cast<int>(fx);
        double ty = fy - iy, tx = fx - ix;
        ty = ty * ty * (3 - 2 * ty);
        tx = tx * tx * (3 - 2 * tx);
        auto L = [&](int a, int b) { return lattice[static_cast<std::size_t>(a * (cells + 1) + b)]; };
        const double n = (1 - ty) * ((1 - tx) * L(iy, ix) + tx * L(iy, ix + 1)) +
                         ty * ((1 - tx) * L(iy + 1, ix) + tx * L(iy + 1, ix + 1));
        for (int c = 0; c < 3; ++c) img.at(y, x, c) += static_cast<float>(amp * n * (0.6 + 0.8 * tint[c]));
      }
  }

  // Soft-edged discs and rectangles.
  const int shapes = 4 + static_cast<int>(u(rng) * 5);
  for (int s = 0; s < shapes; ++s) {
    const double cy = u(rng) * height, cx = u(rng) * width;
    const double ry = (0.08 + 0.22 * u(rng)) * height, rx = (0.08 + 0.22 * u(rng)) * width;
    const double col[3] = {u(rng), u(rng), u(rng)};
    const bool disc = u(rng) < 0.5;
    const double alpha = 0.5 + 0.5 * u(rng);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        const double d = disc ? std::sqrt(dy * dy + dx * dx) : std::max(std::abs(dy), std::abs(dx));
        const double edge = std::clamp((1.0 - d) * std::min(ry, rx) / 1.2, 0.0, 1.0) * alpha;
        if (edge <= 0.0) continue;
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>((1 - edge) * img.at(y, x, c) + edge * col[c]);
      }
  }

  // One patch of oriented stripes for high-frequency content.
  {
    const double angle = u(rng) * M_PI, freq = 0.35 + 0.6 * u(rng);
    const int y0 = static_cast<int>(u(rng) * height * 0.6), x0 = static_cast<int>(u(rng) * width * 0.6);
    const int hh = height / 3, ww = width / 3;
    for (int y = y0; y < std::min(height, y0 + hh); ++y)
      for (int x = x0; x < std::min(width, x0 + ww); ++x) {
        const double t = std::sin(freq * (std::cos(angle) * x + std::sin(angle) * y));
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(img.at(y, x, c) * 0.6 + 0.4 * (0.5 + 0.45 * t));
      }
  }
  img.clamp01();
  return img;
}

}  // namespace satqa::synth
