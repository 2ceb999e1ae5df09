#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "satqa/checkpoint.hpp"
#include "satqa/config.hpp"
#include "satqa/corpus.hpp"
#include "satqa/nn.hpp"

namespace satqa {

inline constexpr double kDefaultTemperature = 0.1;

// ---- loss --------------------------------------------------------------

struct NtXentResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d embeddings, N x D_z
};

// Supervised NT-Xent: batch mean over anchors i of
//   -1/|P(i)| sum_{j in P(i)} log( exp(cos(z_i, z_j) / tau) / sum_{k != i} exp(cos(z_i, z_k) / tau) )
// evaluated with a per-anchor log-sum-exp. Anchors without a positive raise
// ContractError naming the category.
NtXentResult nt_xent_supervised(const Tensor& embeddings, const std::vector<int>& categories, double tau);
ag::Var nt_xent_loss(ag::Var embeddings, const std::vector<int>& categories, double tau);

// ---- networks ----------------------------------------------------------

class ResidualBlock : public nn::Module {
 public:
  ResidualBlock(int in, int out, int stride, nn::Initializer& init);
  std::vector<ag::Var> forward(ag::Graph& g, const std::vector<ag::Var>& xs, bool training);

 private:
  nn::Conv2d* conv1_;
  nn::BatchNorm2d* bn1_;
  nn::Conv2d* conv2_;
  nn::BatchNorm2d* bn2_;
  nn::Conv2d* down_ = nullptr;
  nn::BatchNorm2d* down_bn_ = nullptr;
};

// Residual trunk whose four stage outputs are pooled to the final token
// grid, projected to D/4 channels each and concatenated into P.
class DegradationEncoder : public nn::Module {
 public:
  DegradationEncoder(const ModelPreset& preset, nn::Initializer& init);
  // 3 x S x S inputs -> (h4 * w4) x D tokens each. Training mode uses batch
  // statistics and updates the running ones.
  std::vector<ag::Var> forward(ag::Graph& g, const std::vector<ag::Var>& images, bool training);
  ag::Var forward(ag::Graph& g, ag::Var image) { return forward(g, std::vector<ag::Var>{image}, false).front(); }
  int grid() const { return grid_; }
  int channels() const { return D_; }

 private:
  int grid_, D_;
  bool pool_;
  nn::Conv2d* stem_;
  nn::BatchNorm2d* stem_bn_;
  std::vector<std::vector<ResidualBlock*>> stages_;
  std::vector<nn::Conv2d*> heads_;
};

// r -> L2 normalise -> MLP -> L2 normalise.
class Projector : public nn::Module {
 public:
  Projector(int in, int hidden, int out, nn::Initializer& init);
  ag::Var forward(ag::Graph& g, ag::Var r);
  int out_dim() const { return out_; }

 private:
  int out_;
  nn::Linear* fc1_;
  nn::Linear* fc2_;
};

class SclModel : public nn::Module {
 public:
  SclModel(const ModelPreset& preset, std::uint64_t seed);
  const ModelPreset& preset() const { return preset_; }
  DegradationEncoder& encoder() { return *encoder_; }
  Projector& projector() { return *projector_; }

  // Token-mean pooled encoder output (1 x D).
  ag::Var pooled(ag::Graph& g, ag::Var features);
  // Unit-norm 1 x D_z embedding of a 3 x S x S input.
  ag::Var embed(ag::Graph& g, ag::Var image);
  // N x D_z embeddings of a batch.
  ag::Var embed_batch(ag::Graph& g, const std::vector<ag::Var>& images, bool training);

 private:
  ModelPreset preset_;
  DegradationEncoder* encoder_;
  Projector* projector_;
};

// Frozen-encoder features P for one 3 x S x S input. Throws ConfigError
// when the input size does not match the preset.
Tensor degradation_features(SclModel& model, const Tensor& image);
// Unit-norm embedding row (1 x D_z); NumericError on non-finite output.
Tensor project_embedding(SclModel& model, const Tensor& image, const std::string& what = "input");

// ---- training ----------------------------------------------------------

struct SclConfig {
  int epochs = 2;
  double tau = kDefaultTemperature;
  int batch_size = 16;  // images; the loss sees batch_size * views embeddings
  double lr = 1e-3;
  double weight_decay = 1e-2;
  double train_fraction = 0.8;
  int max_steps = 0;  // 0: unlimited
  std::string schedule = "constant";  // or "cosine", per step
  int views = 2;                      // augmented views per sampled image
  std::uint64_t seed = 0;

  static SclConfig from_config(const KeyValueConfig& cfg);
  KeyValueConfig to_config() const;
};

struct SclStep {
  int epoch = 0;
  int step = 0;
  double loss = 0.0;
};

struct PretrainResult {
  std::unique_ptr<SclModel> model;
  std::vector<SclStep> log;
  std::vector<double> epoch_mean_loss;
  std::vector<std::string> train_refs;
  std::vector<std::string> test_refs;
  std::vector<int> excluded_categories;
  nlohmann::json header;
};

// Category-balanced batches: B/2 distinct categories (reused only if fewer
// exist), two distinct images each. Every category in a batch therefore has
// at least two members.
class BalancedBatchSampler {
 public:
  BalancedBatchSampler(const std::vector<int>& categories, int batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();
  const std::vector<int>& excluded() const { return excluded_; }
  int steps_per_epoch() const { return steps_; }

 private:
  std::vector<int> cats_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::size_t> cursor_;
  std::vector<std::size_t> cat_queue_;
  std::size_t cat_pos_ = 0;
  std::vector<int> excluded_;
  int pairs_;
  int steps_;
  std::mt19937_64 rng_;
};

using ProgressFn = std::function<void(const std::string&)>;

// Optional reference-id whitelist supports data-amount studies; empty means
// every reference in the corpus.
PretrainResult pretrain(const CorpusManifest& corpus, const ModelPreset& preset, const SclConfig& cfg,
                        const std::vector<std::string>& reference_subset = {}, const ProgressFn& progress = {});

void save_encoder(const std::filesystem::path& path, SclModel& model, const nlohmann::json& header);
struct LoadedEncoder {
  std::unique_ptr<SclModel> model;
  nlohmann::json header;
};
LoadedEncoder load_encoder(const std::filesystem::path& path);
// Encoder stored inside another checkpoint under `prefix`.
std::unique_ptr<SclModel> encoder_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix,
                                                  const ModelPreset& preset);

// Held-out clustering statistics over unit embeddings.
struct ClusterStats {
  double same_category_cos = 0.0;
  double cross_category_cos = 0.0;
  double family_accuracy = 0.0;  // nearest family centroid
  int n_test = 0;
};
ClusterStats cluster_stats(const Tensor& train_emb, const std::vector<int>& train_family, const Tensor& test_emb,
                           const std::vector<int>& test_family, const std::vector<int>& test_category);

// Embeds every record of the listed references (centre-crop view) and
// scores the test references against centroids of the train ones.
ClusterStats held_out_clusters(SclModel& model, const CorpusManifest& corpus, const std::vector<std::string>& train_refs,
                               const std::vector<std::string>& test_refs);

// Deterministic evaluation view: centre crop at the preset input size.
Tensor evaluation_input(const RgbImage& image, int size);

}  // namespace satqa
