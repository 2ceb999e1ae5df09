#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "satqa/backbone.hpp"
#include "satqa/checkpoint.hpp"
#include "satqa/config.hpp"
#include "satqa/dataset.hpp"
#include "satqa/scl.hpp"

namespace satqa {

// Cross attention: queries from P, keys and values from R.
class PatchAttention : public nn::Module {
 public:
  PatchAttention(int D, int heads, nn::Initializer& init);
  // P, R: (h4*w4) x D. When `attn` is given the softmax rows are appended.
  ag::Var forward(ag::Graph& g, ag::Var P, ag::Var R, std::vector<Tensor>* attn = nullptr);
  nn::Linear& query() { return *q_; }
  nn::Linear& key() { return *k_; }
  nn::Linear& value() { return *v_; }
  nn::Linear& output() { return *o_; }

 private:
  int D_, heads_;
  nn::Linear* q_;
  nn::Linear* k_;
  nn::Linear* v_;
  nn::Linear* o_;
};

// Global average pool over tokens followed by the linear head: 1 x 1.
// NumericError on a non-finite result.
ag::Var predict_score(ag::Graph& g, nn::Linear& head, ag::Var S);

// Module switches of the ablation study. Baseline = all off.
struct ModelOptions {
  bool scl = true;
  bool msb = true;
  bool pab = true;
  // Head input when SCL is on but PAB is off: `concat` pools R and P and
  // joins them, `none` regresses R alone.
  std::string no_pab_fusion = "concat";

  // `baseline`, `+scl`, `+scl+msb`, `+scl+msb+pab`, `+msb`.
  static ModelOptions parse(const std::string& label);
  std::string label() const;
  // PAB without SCL has no queries: ConfigError.
  void validate() const;
};

struct QualityTrace {
  BackboneTrace backbone;
  ag::Var R;
  ag::Var S;
  std::vector<Tensor>* pab_attn = nullptr;  // filled when set
};

class QualityModel : public nn::Module {
 public:
  QualityModel(const ModelPreset& preset, const ModelOptions& options, std::uint64_t seed);
  const ModelPreset& preset() const { return preset_; }
  const ModelOptions& options() const { return options_; }
  // Null in baseline mode, which runs the transformer alone.
  PerceptualBackbone* backbone() { return backbone_; }
  VisionTransformer& vit() { return *vit_; }
  PatchAttention* pab() { return pab_; }
  bool uses_degradation() const;
  nn::Linear& head() { return *head_; }

  // image: 3 x S x S; P: frozen degradation features (ignored when SCL is off).
  ag::Var forward(ag::Graph& g, ag::Var image, const Tensor* P, QualityTrace* trace = nullptr);

 private:
  ModelPreset preset_;
  ModelOptions options_;
  PerceptualBackbone* backbone_ = nullptr;
  VisionTransformer* vit_ = nullptr;
  PatchAttention* pab_ = nullptr;
  nn::Linear* head_;
};

// ---- training ----------------------------------------------------------

struct TrainConfig {
  double lr = 2e-5;
  double weight_decay = 1e-2;
  std::string schedule = "cosine";
  int t_max = 50;
  double eta_min = 0.0;
  int epochs = 150;
  int batch_size = 4;
  int n_crops = 8;  // test-time crops
  int crop_size = 224;
  std::uint64_t seed = 0;
  int train_crops = 0;  // crops per training image; 0 -> n_crops
  int max_steps = 0;    // 0: unlimited
  bool freeze_extractor = false;
  int val_every = 1;  // epochs between validation passes; 0 disables

  static TrainConfig from_config(const KeyValueConfig& cfg);
  KeyValueConfig to_config() const;
  int crops_per_image() const { return train_crops > 0 ? train_crops : n_crops; }
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_srocc;
  std::optional<double> val_plcc;
};

struct TrainLog {
  std::vector<double> step_loss;
  std::vector<EpochRecord> epochs;
  std::string encoder_checksum_before;
  std::string encoder_checksum_after;
  nlohmann::json to_json() const;
};

// Optimises every trainable parameter of `model` with AdamW on the L1 loss
// between patch predictions and normalised scores. The encoder is only ever
// evaluated, and its checksum is verified unchanged at the end.
TrainLog train_quality(QualityModel& model, SclModel* encoder, const std::vector<IqaSample>& train,
                       const ScoreNormalizer& norm, const TrainConfig& cfg, const std::vector<IqaSample>* val = nullptr,
                       const ProgressFn& progress = {});

struct QualityPrediction {
  std::vector<double> patch_scores;  // dataset scale
  double score = 0.0;                // arithmetic mean of patch_scores
};

QualityPrediction predict_image(QualityModel& model, SclModel* encoder, const RgbImage& image, int n_crops,
                                std::uint64_t seed, const ScoreNormalizer& norm);
// Scores of every sample, crops seeded per image from `seed`.
std::vector<double> predict_samples(QualityModel& model, SclModel* encoder, const std::vector<IqaSample>& samples,
                                    int n_crops, std::uint64_t seed, const ScoreNormalizer& norm);

// ---- checkpoints -------------------------------------------------------

void save_quality_model(const std::filesystem::path& path, QualityModel& model, SclModel* encoder,
                        const ScoreNormalizer& norm, const nlohmann::json& extra);
struct LoadedQuality {
  std::unique_ptr<QualityModel> model;
  std::unique_ptr<SclModel> encoder;
  ScoreNormalizer norm;
  nlohmann::json header;
};
LoadedQuality load_quality_model(const std::filesystem::path& path);

}  // namespace satqa
