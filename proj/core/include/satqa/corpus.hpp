#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "satqa/distortion.hpp"

namespace satqa {

inline constexpr const char* kGeneratorVersion = "satqa-synth/1";

struct CorpusRecord {
  std::string path;  // relative to the manifest directory
  synth::DistortionLabel label;
  std::string reference_id;
  std::uint64_t seed = 0;
  std::string family_name;  // empty for references
  // Full-reference pseudo opinion score in [0, 100] derived from PSNR, so the
  // corpus doubles as a quality-regression dataset. References score 100.
  double score = 100.0;
  std::optional<double> psnr;
};

struct CorpusManifest {
  int U = 0;
  int V = 0;
  std::string generator_version = kGeneratorVersion;
  std::vector<std::string> families;
  std::uint64_t seed = 0;
  std::vector<CorpusRecord> records;
  // Directory the record paths are relative to.
  std::filesystem::path root;

  // Throws ConfigError on a dangling reference id, duplicate
  // (reference, family, level) triple or inconsistent category.
  void validate() const;
  std::string to_jsonl() const;
  static CorpusManifest parse(const std::string& text, const std::filesystem::path& root,
                              const std::string& origin = "<manifest>");
  static CorpusManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::uint64_t hash() const;

  std::filesystem::path resolve(const CorpusRecord& r) const { return root / r.path; }
  std::vector<std::string> reference_ids() const;
};

double pseudo_mos_from_psnr(double psnr);

// Sorted PNG / JPEG / PPM files directly inside `dir`.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

// Writes `count` procedural references `ref_XXXX.png` into `dir`.
std::vector<std::filesystem::path> write_procedural_references(const std::filesystem::path& dir, int count, int size,
                                                               std::uint64_t seed);

// One distorted image per (reference, family, level) plus every reference
// itself, under out_dir/images, and out_dir/manifest.jsonl. Refuses to
// overwrite an existing manifest unless `force`.
CorpusManifest build_synthetic_corpus(const std::vector<std::filesystem::path>& references,
                                      const std::vector<synth::DistortionSpec>& families, int levels,
                                      const std::filesystem::path& out_dir, std::uint64_t seed, bool force = false);

}  // namespace satqa
