#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "satqa/image.hpp"

namespace satqa {

enum class Schema { Synthetic, Csv };
enum class Polarity { HigherIsBetter, LowerIsBetter };

Schema parse_schema(const std::string& s);
std::string schema_name(Schema s);
std::string polarity_name(Polarity p);
Polarity parse_polarity(const std::string& s);

struct IqaSample {
  std::filesystem::path path;
  std::string image_id;  // path relative to the dataset root
  double score = 0.0;
  Polarity polarity = Polarity::HigherIsBetter;
  std::optional<std::string> reference_id;
  // Synthetic-only distortion labels (0 for references and authentic data).
  int family = 0;
  int level = 0;
  int category = 0;
  std::string family_name;

  // Reference id when present, otherwise the image id.
  const std::string& split_key() const { return reference_id ? *reference_id : image_id; }
  bool operator==(const IqaSample&) const = default;
};

struct Dataset {
  std::string name;
  Schema schema = Schema::Csv;
  Polarity polarity = Polarity::HigherIsBetter;
  std::filesystem::path root;
  std::vector<IqaSample> samples;
};

// Synthetic manifests take `score` as the quality target; CSV files need a
// `path,score` header (optional `reference_id` column). Missing images are
// listed in one IoError; malformed rows raise ConfigError with the line.
Dataset load_dataset(const std::filesystem::path& manifest, Schema schema,
                     Polarity polarity = Polarity::HigherIsBetter);
// Writes the `path,score,reference_id` form readable by load_dataset.
void write_dataset_csv(const std::vector<IqaSample>& samples, const std::filesystem::path& root,
                       const std::filesystem::path& out);

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

// Group-level partition over split keys; train gets round(f * groups)
// groups (at least one group on each side when there are two or more).
std::pair<std::vector<IqaSample>, std::vector<IqaSample>> split_by_reference(const std::vector<IqaSample>& samples,
                                                                             const SplitSpec& spec);
// Split keys of the first ceil(f * groups) groups of a seeded permutation;
// a smaller fraction always selects a prefix of a larger one.
std::vector<std::string> nested_key_subset(const std::vector<std::string>& keys, double fraction, std::uint64_t seed);

struct CropBox {
  int top = 0;
  int left = 0;
  bool flipped = false;
  bool operator==(const CropBox&) const = default;
};

struct PatchBatch {
  std::vector<RgbImage> patches;
  std::vector<double> scores;
  std::vector<std::string> source_ids;
  std::vector<CropBox> boxes;
  int size = 0;
};

// n uniformly placed size x size crops, each horizontally flipped with
// probability 1/2 when `flip`. Images whose short side is below `size` are
// bicubically upscaled first.
PatchBatch sample_patches(const RgbImage& image, int n, int size, std::uint64_t seed, bool flip, double score = 0.0,
                          const std::string& source_id = "");
// Upscale used by sample_patches (identity when already large enough).
RgbImage ensure_min_side(const RgbImage& image, int size);

// Augmentation for contrastive pre-training: random crop plus horizontal
// and vertical flips.
RgbImage contrastive_view(const RgbImage& image, int size, std::uint64_t seed);

// Affine map of the training split's score range onto [0, 1].
struct ScoreNormalizer {
  double lo = 0.0;
  double hi = 1.0;

  static ScoreNormalizer fit(const std::vector<IqaSample>& samples);
  double normalize(double s) const { return (s - lo) / (hi - lo); }
  double denormalize(double t) const { return lo + t * (hi - lo); }
};

}  // namespace satqa
