#include "satqa/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "satqa/checkpoint.hpp"
#include "satqa/distortion.hpp"
#include "satqa/errors.hpp"
#include "satqa/image.hpp"

namespace satqa {

Protocol parse_protocol(const std::string& s) {
  if (s == "individual") return Protocol::Individual;
  if (s == "per_family" || s == "per-family") return Protocol::PerFamily;
  if (s == "cross" || s == "cross_dataset") return Protocol::CrossDataset;
  throw ConfigError("unknown protocol '" + s + "' (expected individual, per_family or cross_dataset)");
}

std::string protocol_name(Protocol p) {
  switch (p) {
    case Protocol::Individual:
      return "individual";
    case Protocol::PerFamily:
      return "per_family";
    case Protocol::CrossDataset:
      return "cross_dataset";
  }
  return "?";
}

namespace {

std::string model_sums(QualityModel& model, SclModel* encoder) {
  std::string s = hex64(module_checksum(model));
  if (encoder) s += ":" + hex64(module_checksum(*encoder));
  return s;
}

}  // namespace

std::vector<MetricReport> evaluate(QualityModel& model, SclModel* encoder, const ScoreNormalizer& norm,
                                   const std::vector<IqaSample>& samples, const std::string& dataset, Protocol protocol,
                                   const std::vector<std::uint64_t>& seeds, int n_crops) {
  if (seeds.empty()) throw ConfigError("evaluation needs at least one seed");
  if (protocol == Protocol::PerFamily) {
    bool labelled = false;
    for (const auto& s : samples) labelled = labelled || s.family > 0;
    if (!labelled) {
      throw ConfigError("per-family protocol requested on '" + dataset +
                        "', which carries no distortion-family labels");
    }
  }
  const std::string before = protocol == Protocol::CrossDataset ? model_sums(model, encoder) : "";
  std::vector<double> gt;
  for (const auto& s : samples) gt.push_back(s.score);

  std::vector<MetricReport> out;
  for (const auto seed : seeds) {
    const auto pred = predict_samples(model, encoder, samples, n_crops, seed, norm);
    MetricReport r;
    r.dataset = dataset;
    r.protocol = protocol_name(protocol);
    r.seed = static_cast<long long>(seed);
    r.srocc = srocc(pred, gt);
    r.plcc = plcc(pred, gt);
    r.n = static_cast<int>(samples.size());
    if (!samples.empty()) r.polarity = polarity_name(samples.front().polarity);
    if (protocol == Protocol::PerFamily) {
      std::vector<double> p, g;
      std::vector<std::string> fam;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].family == 0) continue;
        p.push_back(pred[i]);
        g.push_back(gt[i]);
        fam.push_back(samples[i].family_name.empty() ? std::to_string(samples[i].family) : samples[i].family_name);
      }
      r.per_family = per_family_metrics(p, g, fam);
    }
    out.push_back(std::move(r));
  }
  out.push_back(aggregate_reports(out));
  if (protocol == Protocol::CrossDataset) {
    const std::string after = model_sums(model, encoder);
    if (after != before) throw ContractError("model parameters changed during cross-dataset evaluation");
  }
  return out;
}

CrossEvalResult cross_evaluate(const std::filesystem::path& checkpoint, const Dataset& target,
                               const std::vector<std::uint64_t>& seeds, int n_crops) {
  CrossEvalResult res;
  res.checkpoint_hash_before = hex64(file_hash(checkpoint));
  auto loaded = load_quality_model(checkpoint);
  res.reports = evaluate(*loaded.model, loaded.encoder.get(), loaded.norm, target.samples, target.name,
                         Protocol::CrossDataset, seeds, n_crops);
  res.checkpoint_hash_after = hex64(file_hash(checkpoint));
  if (res.checkpoint_hash_after != res.checkpoint_hash_before) {
    throw ContractError("checkpoint " + checkpoint.string() + " changed during cross-dataset evaluation");
  }
  return res;
}

// ---- config ------------------------------------------------------------------

KeyValueConfig sub_config(const KeyValueConfig& cfg, const std::string& prefix) {
  KeyValueConfig out;
  for (const auto& [k, v] : cfg.values())
    if (k.rfind(prefix, 0) == 0) out.set(k.substr(prefix.size()), v);
  return out;
}

ExperimentConfig ExperimentConfig::from_config(const KeyValueConfig& c) {
  ExperimentConfig e;
  e.preset = c.get_string("preset", e.preset);
  e.corpus = c.get_string("corpus", "");
  e.dataset = c.get_string("dataset", "");
  e.schema = c.get_string("schema", e.schema);
  parse_schema(e.schema);
  e.polarity = parse_polarity(c.get_string("polarity", polarity_name(e.polarity)));
  e.encoder = c.get_string("encoder", "");
  if (c.has("variants")) e.variants = c.get_list("variants");
  if (c.has("msb_variants")) e.msb_variants = c.get_list("msb_variants");
  if (c.has("fractions")) e.fractions = c.get_double_list("fractions");
  if (c.has("seeds")) {
    e.seeds.clear();
    for (int s : c.get_int_list("seeds")) {
      if (s < 0) throw ConfigError("seeds must be non-negative");
      e.seeds.push_back(static_cast<std::uint64_t>(s));
    }
  }
  if (e.seeds.empty()) throw ConfigError("at least one seed is required");
  e.train_fraction = c.get_double("train_fraction", e.train_fraction);
  if (!(e.train_fraction > 0.0 && e.train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
  e.no_pab_fusion = c.get_string("no_pab_fusion", e.no_pab_fusion);
  for (const auto& v : e.variants) {
    ModelOptions o = ModelOptions::parse(v);
    o.no_pab_fusion = e.no_pab_fusion;
    o.validate();
  }
  for (const auto& v : e.msb_variants) BranchSet::parse(v);
  for (double f : e.fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("data fractions must lie in (0, 1]");
  e.train = TrainConfig::from_config(sub_config(c, "train."));
  e.scl = SclConfig::from_config(sub_config(c, "scl."));
  return e;
}

KeyValueConfig ExperimentConfig::to_config() const {
  KeyValueConfig c;
  auto join = [](const auto& xs) {
    std::ostringstream o;
    o.precision(17);
    for (std::size_t i = 0; i < xs.size(); ++i) o << (i ? "," : "") << xs[i];
    return o.str();
  };
  c.set("preset", preset);
  c.set("corpus", corpus.string());
  c.set("dataset", dataset.string());
  c.set("schema", schema);
  c.set("polarity", polarity_name(polarity));
  c.set("encoder", encoder.string());
  c.set("variants", join(variants));
  c.set("msb_variants", join(msb_variants));
  c.set("fractions", join(fractions));
  c.set("seeds", join(seeds));
  std::ostringstream tf;
  tf.precision(17);
  tf << train_fraction;
  c.set("train_fraction", tf.str());
  c.set("no_pab_fusion", no_pab_fusion);
  const KeyValueConfig tc = train.to_config();
  const KeyValueConfig sc = scl.to_config();
  for (const auto& [k, v] : tc.values()) c.set("train." + k, v);
  for (const auto& [k, v] : sc.values()) c.set("scl." + k, v);
  return c;
}

ModelPreset ExperimentConfig::resolved_preset() const { return ModelPreset::load(resolve_preset(preset)); }

// ---- runs --------------------------------------------------------------------

namespace {

nlohmann::json wiring_of(const QualityModel& m, const ModelPreset& p) {
  const auto& o = m.options();
  std::string head;
  if (!o.scl && !o.msb && !o.pab) {
    head = "pooled transformer tokens";
  } else if (o.pab) {
    head = "pooled patch-attention output";
  } else if (o.scl && o.no_pab_fusion == "concat") {
    head = "pooled perceptual and degradation features, concatenated";
  } else {
    head = "pooled perceptual features";
  }
  return {{"scl", o.scl},           {"msb", o.msb},         {"pab", o.pab}, {"no_pab_fusion", o.no_pab_fusion},
          {"head_input", head},     {"branches", p.branches.label()}};
}

void check_disjoint(const std::vector<IqaSample>& tr, const std::vector<IqaSample>& te) {
  std::set<std::string> keys;
  for (const auto& s : tr) keys.insert(s.split_key());
  for (const auto& s : te)
    if (keys.count(s.split_key()))
      throw ContractError("reference '" + s.split_key() + "' appears on both sides of the split");
}

}  // namespace

VariantResult run_variant(const ExperimentConfig& cfg, const ModelPreset& preset, const ModelOptions& options,
                          SclModel* encoder, const Dataset& data, const ProgressFn& progress) {
  VariantResult vr;
  vr.label = options.label();
  vr.branches = preset.branches.label();
  const bool needs_p = options.scl && (options.pab || options.no_pab_fusion == "concat");
  if (needs_p && !encoder) {
    throw ConfigError("variant " + vr.label + " needs a degradation encoder checkpoint (set `encoder`)");
  }
  std::vector<MetricReport> per_seed;
  for (const auto seed : cfg.seeds) {
    auto [tr, te] = split_by_reference(data.samples, {cfg.train_fraction, seed});
    check_disjoint(tr, te);
    const ScoreNormalizer norm = ScoreNormalizer::fit(tr);
    QualityModel model(preset, options, synth::derive_seed(seed, 0x51));
    if (vr.wiring.is_null()) vr.wiring = wiring_of(model, preset);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    ProgressFn inner;
    if (progress) {
      inner = [&](const std::string& s) { progress(vr.label + " [" + vr.branches + "] seed " + std::to_string(seed) + " " + s); };
    }
    SclModel* enc = needs_p ? encoder : nullptr;
    vr.logs.push_back(train_quality(model, enc, tr, norm, tc, nullptr, inner));
    auto reps = evaluate(model, enc, norm, te, data.name, Protocol::Individual, {seed}, tc.n_crops);
    per_seed.push_back(reps.front());
    std::vector<std::string> keys;
    for (const auto& s : te) keys.push_back(s.split_key());
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    vr.test_keys.push_back(std::move(keys));
    if (progress) {
      progress(vr.label + " [" + vr.branches + "] seed " + std::to_string(seed) + " test srocc " +
               std::to_string(per_seed.back().srocc) + " plcc " + std::to_string(per_seed.back().plcc));
    }
  }
  vr.reports = per_seed;
  vr.reports.push_back(aggregate_reports(per_seed));
  return vr;
}

nlohmann::json RunBundle::to_json() const {
  nlohmann::json vs = nlohmann::json::array();
  for (const auto& v : variants) {
    nlohmann::json reps = nlohmann::json::array();
    for (const auto& r : v.reports) reps.push_back(r.to_json());
    nlohmann::json logs = nlohmann::json::array();
    for (const auto& l : v.logs) logs.push_back(l.to_json());
    vs.push_back({{"label", v.label},
                  {"branches", v.branches},
                  {"wiring", v.wiring},
                  {"reports", reps},
                  {"train_logs", logs},
                  {"test_keys", v.test_keys}});
  }
  return {{"kind", kind}, {"config", config}, {"hashes", hashes}, {"variants", vs}};
}

std::string RunBundle::comparison_table() const {
  std::ostringstream o;
  o << "variant,branches,srocc,plcc,srocc_std,plcc_std\n";
  o << std::setprecision(6) << std::fixed;
  for (const auto& v : variants) {
    const auto& m = v.reports.back();
    o << v.label << "," << v.branches << "," << m.srocc << "," << m.plcc << "," << m.srocc_std.value_or(0.0) << ","
      << m.plcc_std.value_or(0.0) << "\n";
  }
  return o.str();
}

RunBundle run_ablation(const ExperimentConfig& cfg, SclModel* encoder, const Dataset& data,
                       const ProgressFn& progress) {
  RunBundle b;
  b.kind = "ablation";
  b.config = cfg.to_config().values();
  if (encoder) b.hashes["encoder_checksum"] = hex64(module_checksum(*encoder));
  if (!cfg.encoder.empty() && std::filesystem::exists(cfg.encoder)) b.hashes["encoder_file"] = hex64(file_hash(cfg.encoder));
  if (!cfg.dataset.empty() && std::filesystem::exists(cfg.dataset)) b.hashes["dataset_file"] = hex64(file_hash(cfg.dataset));
  const ModelPreset preset = cfg.resolved_preset();
  for (const auto& label : cfg.variants) {
    ModelOptions o = ModelOptions::parse(label);
    o.no_pab_fusion = cfg.no_pab_fusion;
    b.variants.push_back(run_variant(cfg, preset, o, encoder, data, progress));
  }
  for (const auto& branch : cfg.msb_variants) {
    ModelPreset p = preset;
    p.branches = BranchSet::parse(branch);
    ModelOptions o;
    o.no_pab_fusion = cfg.no_pab_fusion;
    b.variants.push_back(run_variant(cfg, p, o, encoder, data, progress));
  }
  return b;
}

std::vector<std::vector<std::string>> fraction_subsets(const CorpusManifest& corpus, const std::vector<double>& fractions,
                                                       double train_fraction, std::uint64_t seed) {
  const auto keys = corpus.reference_ids();
  std::vector<std::vector<std::string>> out;
  for (double f : fractions) {
    auto sub = nested_key_subset(keys, f, seed);
    const long train_refs = std::lround(train_fraction * static_cast<double>(sub.size()));
    if (sub.size() < 3 || train_refs < 2) {
      std::ostringstream o;
      o << "fraction " << f << " keeps " << sub.size()
        << " reference(s); every category needs at least 2 training samples";
      throw ConfigError(o.str());
    }
    out.push_back(std::move(sub));
  }
  return out;
}

RunBundle run_data_fraction(const ExperimentConfig& cfg, const CorpusManifest& corpus, const Dataset& data,
                            const ProgressFn& progress) {
  RunBundle b;
  b.kind = "data_fraction";
  b.config = cfg.to_config().values();
  b.hashes["corpus"] = hex64(corpus.hash());
  const ModelPreset preset = cfg.resolved_preset();
  const auto subsets = fraction_subsets(corpus, cfg.fractions, cfg.scl.train_fraction, cfg.scl.seed);
  for (std::size_t i = 0; i < subsets.size(); ++i) {
    ProgressFn inner;
    if (progress) inner = [&](const std::string& s) { progress("fraction " + std::to_string(cfg.fractions[i]) + " " + s); };
    auto pre = pretrain(corpus, preset, cfg.scl, subsets[i], inner);
    ModelOptions o;
    o.no_pab_fusion = cfg.no_pab_fusion;
    VariantResult vr = run_variant(cfg, preset, o, pre.model.get(), data, inner);
    std::ostringstream label;
    label << "fraction " << cfg.fractions[i];
    vr.label = label.str();
    vr.wiring["references"] = subsets[i].size();
    vr.wiring["encoder_checksum"] = hex64(module_checksum(*pre.model));
    b.variants.push_back(std::move(vr));
  }
  return b;
}

// ---- visualization data ------------------------------------------------------

void export_scatter(const std::filesystem::path& out, QualityModel& model, SclModel* encoder,
                    const ScoreNormalizer& norm, const std::vector<IqaSample>& samples, int n_crops,
                    std::uint64_t seed) {
  const auto pred = predict_samples(model, encoder, samples, n_crops, seed, norm);
  std::ofstream f(out);
  if (!f) throw IoError("cannot write " + out.string());
  f << std::setprecision(17) << "gt,pred,image_id\n";
  for (std::size_t i = 0; i < samples.size(); ++i) f << samples[i].score << "," << pred[i] << "," << samples[i].image_id << "\n";
}

void export_embeddings(const std::filesystem::path& out, SclModel& encoder, const std::vector<IqaSample>& samples) {
  std::ofstream f(out);
  if (!f) throw IoError("cannot write " + out.string());
  const int S = encoder.preset().input_size;
  f << std::setprecision(17) << "image_id,category,family,level";
  for (int k = 0; k < encoder.projector().out_dim(); ++k) f << ",z" << k;
  f << "\n";
  for (const auto& s : samples) {
    const Tensor z = project_embedding(encoder, evaluation_input(load_image(s.path), S), s.image_id);
    f << s.image_id << "," << s.category << "," << s.family << "," << s.level;
    for (std::size_t k = 0; k < z.size(); ++k) f << "," << z[k];
    f << "\n";
  }
}

// ---- provenance --------------------------------------------------------------

void write_run_record(const std::filesystem::path& out_dir, const std::string& subcommand, const nlohmann::json& config,
                      std::uint64_t seed, const nlohmann::json& inputs, const nlohmann::json& outputs) {
  std::filesystem::create_directories(out_dir);
  nlohmann::json j = {{"subcommand", subcommand},
                      {"seed", seed},
                      {"config", config},
                      {"config_hash", hex64(fnv1a(config.dump().data(), config.dump().size()))},
                      {"inputs", inputs},
                      {"outputs", outputs},
                      {"format_version", kCheckpointFormatVersion}};
  std::ofstream f(out_dir / "run.json");
  if (!f) throw IoError("cannot write " + (out_dir / "run.json").string());
  f << j.dump(2) << "\n";
}

}  // namespace satqa
