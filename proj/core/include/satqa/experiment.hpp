#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "satqa/config.hpp"
#include "satqa/corpus.hpp"
#include "satqa/dataset.hpp"
#include "satqa/fusion.hpp"
#include "satqa/metrics.hpp"
#include "satqa/scl.hpp"

namespace satqa {

// ---- evaluation protocols ---------------------------------------------------

enum class Protocol { Individual, PerFamily, CrossDataset };
Protocol parse_protocol(const std::string& s);
std::string protocol_name(Protocol p);

// One report per crop seed plus the mean row (last). PerFamily needs
// distortion labels on every distorted sample; CrossDataset verifies the
// model and encoder checksums are untouched by the pass.
std::vector<MetricReport> evaluate(QualityModel& model, SclModel* encoder, const ScoreNormalizer& norm,
                                   const std::vector<IqaSample>& samples, const std::string& dataset, Protocol protocol,
                                   const std::vector<std::uint64_t>& seeds, int n_crops);

struct CrossEvalResult {
  std::vector<MetricReport> reports;
  std::string checkpoint_hash_before;
  std::string checkpoint_hash_after;
};
// Loads a quality checkpoint and scores a dataset it was not trained on.
// The checkpoint file hash is compared before and after.
CrossEvalResult cross_evaluate(const std::filesystem::path& checkpoint, const Dataset& target,
                               const std::vector<std::uint64_t>& seeds, int n_crops);

// ---- experiment config -------------------------------------------------------

struct ExperimentConfig {
  std::string preset = "desk";
  std::filesystem::path corpus;   // contrastive corpus manifest
  std::filesystem::path dataset;  // quality dataset (synthetic manifest or csv)
  std::string schema = "synthetic";
  Polarity polarity = Polarity::HigherIsBetter;
  std::filesystem::path encoder;  // pre-trained encoder checkpoint
  std::vector<std::string> variants{"baseline", "+scl", "+scl+msb", "+scl+msb+pab"};
  std::vector<std::string> msb_variants;
  std::vector<double> fractions{0.25, 0.5, 1.0};
  std::vector<std::uint64_t> seeds{0};
  double train_fraction = 0.8;
  std::string no_pab_fusion = "concat";
  TrainConfig train;
  SclConfig scl;

  // Keys `train.*` and `scl.*` feed the nested configs.
  static ExperimentConfig from_config(const KeyValueConfig& cfg);
  KeyValueConfig to_config() const;
  ModelPreset resolved_preset() const;
};

// Config entries under `prefix` with the prefix stripped.
KeyValueConfig sub_config(const KeyValueConfig& cfg, const std::string& prefix);

// ---- runs --------------------------------------------------------------------

struct VariantResult {
  std::string label;
  std::string branches;  // MSB branch label
  nlohmann::json wiring;
  std::vector<MetricReport> reports;  // per seed, then the mean row
  std::vector<TrainLog> logs;
  std::vector<std::vector<std::string>> test_keys;  // split keys per seed
};

struct RunBundle {
  std::string kind;
  nlohmann::json config;
  nlohmann::json hashes;
  std::vector<VariantResult> variants;
  nlohmann::json to_json() const;
  // Variant label then mean SROCC / PLCC, one row per variant.
  std::string comparison_table() const;
};

// Trains and tests one model variant per seed. Each seed draws its own
// reference-disjoint split, initialisation and crops.
VariantResult run_variant(const ExperimentConfig& cfg, const ModelPreset& preset, const ModelOptions& options,
                          SclModel* encoder, const Dataset& data, const ProgressFn& progress = {});

// Module matrix (and MSB structure rows when `msb_variants` is set).
RunBundle run_ablation(const ExperimentConfig& cfg, SclModel* encoder, const Dataset& data,
                       const ProgressFn& progress = {});

// Pre-trains one encoder per reference fraction (nested subsets), then runs
// the full model downstream on each.
RunBundle run_data_fraction(const ExperimentConfig& cfg, const CorpusManifest& corpus, const Dataset& data,
                            const ProgressFn& progress = {});
// Nested reference subsets used by run_data_fraction, in fraction order.
std::vector<std::vector<std::string>> fraction_subsets(const CorpusManifest& corpus, const std::vector<double>& fractions,
                                                       double train_fraction, std::uint64_t seed);

// ---- visualization data ------------------------------------------------------

// `gt,pred,image_id` rows.
void export_scatter(const std::filesystem::path& out, QualityModel& model, SclModel* encoder,
                    const ScoreNormalizer& norm, const std::vector<IqaSample>& samples, int n_crops,
                    std::uint64_t seed);
// `image_id,category,family,level,z0..` rows of projected embeddings.
void export_embeddings(const std::filesystem::path& out, SclModel& encoder, const std::vector<IqaSample>& samples);

// ---- provenance --------------------------------------------------------------

// run.json: subcommand, resolved config, seed, input and output hashes.
void write_run_record(const std::filesystem::path& out_dir, const std::string& subcommand, const nlohmann::json& config,
                      std::uint64_t seed, const nlohmann::json& inputs, const nlohmann::json& outputs);

}  // namespace satqa
