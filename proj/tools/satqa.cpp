#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "satqa/checkpoint.hpp"
#include "satqa/corpus.hpp"
#include "satqa/dataset.hpp"
#include "satqa/distortion.hpp"
#include "satqa/errors.hpp"
#include "satqa/experiment.hpp"
#include "satqa/fusion.hpp"
#include "satqa/scl.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace satqa;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out = "out";
  std::string seed;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key = value config file");
  app->add_option("--set", c.sets, "override, key=value (repeatable)");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--seed", c.seed, "seed (falls back to the config, then SATQA_SEED)");
  app->add_flag("--quiet", c.quiet, "no progress output");
}

KeyValueConfig load_config(const Common& c) {
  KeyValueConfig cfg;
  if (!c.config.empty()) cfg = KeyValueConfig::load(c.config);
  KeyValueConfig over;
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + s + "' is not key=value");
    const auto key = split_trim(s.substr(0, eq), ' ');
    if (key.size() != 1) throw ConfigError("override '" + s + "' has a malformed key");
    over.set(key.front(), s.substr(eq + 1));
  }
  cfg.merge(over);
  return cfg;
}

// --seed, then the config's own key, then SATQA_SEED, then 0.
std::uint64_t resolve_seed(const Common& c, KeyValueConfig& cfg, const std::string& key = "seed") {
  std::string v = c.seed;
  if (v.empty() && cfg.has(key)) v = cfg.get_string(key);
  if (v.empty()) {
    const char* env = std::getenv("SATQA_SEED");
    if (env && *env) v = env;
  }
  if (v.empty()) v = "0";
  const int s = parse_int(v, key);
  if (s < 0) throw ConfigError(key + " must be non-negative");
  cfg.set(key, std::to_string(s));
  return static_cast<std::uint64_t>(s);
}

ProgressFn progress_of(const Common& c) {
  if (c.quiet) return {};
  return [](const std::string& s) { std::cerr << s << std::endl; };
}

json config_json(const KeyValueConfig& cfg) { return cfg.values(); }

std::string file_sum(const fs::path& p) { return hex64(file_hash(p)); }

void write_json(const fs::path& p, const json& j) {
  std::ofstream f(p);
  if (!f) throw IoError("cannot write " + p.string());
  f << j.dump(2) << "\n";
}

Dataset open_dataset(const fs::path& path, const std::string& schema, Polarity polarity) {
  if (path.empty()) throw ConfigError("no dataset given (set `dataset` or pass --dataset)");
  if (!fs::exists(path)) throw ConfigError("dataset not found: " + path.string());
  std::string s = schema;
  if (s.empty()) s = path.extension() == ".csv" ? "csv" : "synthetic";
  return load_dataset(path, parse_schema(s), polarity);
}

std::vector<IqaSample> select_split(const std::vector<IqaSample>& all, const std::string& split, double fraction,
                                    std::uint64_t seed) {
  if (split == "all") return all;
  auto [tr, te] = split_by_reference(all, {fraction, seed});
  if (split == "train") return tr;
  if (split == "test") return te;
  throw ConfigError("split must be train, test or all, got '" + split + "'");
}

json reports_json(const std::vector<MetricReport>& reps) {
  json a = json::array();
  for (const auto& r : reps) a.push_back(r.to_json());
  return a;
}

// ---- subcommands -------------------------------------------------------------

struct SynthArgs {
  std::string refs;
  int procedural = 0;
  int ref_size = 96;
  std::string families = "gaussian_blur,awgn,jpeg_compression,brighten,contrast_change,color_saturation";
  int levels = 5;
  bool force = false;
};

int cmd_synth(const Common& c, const SynthArgs& a) {
  KeyValueConfig cfg = load_config(c);
  const std::uint64_t seed = resolve_seed(c, cfg);
  const fs::path out = c.out;
  std::vector<fs::path> refs;
  if (!a.refs.empty()) {
    refs = list_images(a.refs);
    if (refs.empty()) throw ConfigError("no reference images in " + a.refs);
  } else if (a.procedural > 0) {
    refs = write_procedural_references(out / "refs", a.procedural, a.ref_size, seed);
  } else {
    throw ConfigError("pass --refs DIR or --procedural N");
  }
  const auto fams = synth::parse_family_list(a.families);
  const auto m = build_synthetic_corpus(refs, fams, a.levels, out, seed, a.force);
  if (!c.quiet) std::cerr << "wrote " << m.records.size() << " records to " << (out / "manifest.jsonl") << std::endl;
  json conf = config_json(cfg);
  conf["families"] = a.families;
  conf["levels"] = a.levels;
  conf["references"] = refs.size();
  write_run_record(out, "synth", conf, seed, {{"refs", a.refs.empty() ? "procedural" : a.refs}},
                   {{"manifest", file_sum(out / "manifest.jsonl")}, {"corpus_hash", hex64(m.hash())}});
  return 0;
}

int cmd_pretrain(const Common& c, std::string corpus_path, std::string preset_name) {
  KeyValueConfig cfg = load_config(c);
  const std::uint64_t seed = resolve_seed(c, cfg);
  if (corpus_path.empty()) corpus_path = cfg.get_string("corpus", "");
  if (preset_name.empty()) preset_name = cfg.get_string("preset", "desk");
  if (corpus_path.empty()) throw ConfigError("no corpus given (set `corpus` or pass --corpus)");
  if (!fs::exists(corpus_path)) throw ConfigError("corpus manifest not found: " + corpus_path);
  const auto corpus = CorpusManifest::load(corpus_path);
  const auto preset = ModelPreset::load(resolve_preset(preset_name));
  SclConfig sc = SclConfig::from_config(cfg);
  sc.seed = seed;
  auto res = pretrain(corpus, preset, sc, {}, progress_of(c));
  const fs::path out = c.out;
  fs::create_directories(out);
  save_encoder(out / "encoder.ckpt", *res.model, res.header);
  json steps = json::array();
  for (const auto& s : res.log) steps.push_back({{"epoch", s.epoch}, {"step", s.step}, {"loss", s.loss}});
  write_json(out / "pretrain_log.json", {{"steps", steps}, {"epoch_mean_loss", res.epoch_mean_loss}});
  const auto st = held_out_clusters(*res.model, corpus, res.train_refs, res.test_refs);
  write_json(out / "clusters.json", {{"same_category_cos", st.same_category_cos},
                                     {"cross_category_cos", st.cross_category_cos},
                                     {"gap", st.same_category_cos - st.cross_category_cos},
                                     {"family_accuracy", st.family_accuracy},
                                     {"n_test", st.n_test}});
  if (!c.quiet) {
    std::cerr << "held-out cosine same " << st.same_category_cos << " cross " << st.cross_category_cos
              << " family accuracy " << st.family_accuracy << std::endl;
  }
  json conf = config_json(cfg);
  conf["corpus"] = corpus_path;
  conf["preset"] = preset_name;
  write_run_record(out, "pretrain", conf, seed, {{"corpus", file_sum(corpus_path)}, {"corpus_hash", hex64(corpus.hash())}},
                   {{"encoder.ckpt", file_sum(out / "encoder.ckpt")}});
  return 0;
}

struct TrainArgs {
  std::string dataset, encoder, preset, variant;
};

int cmd_train(const Common& c, TrainArgs a) {
  KeyValueConfig cfg = load_config(c);
  const std::uint64_t seed = resolve_seed(c, cfg);
  if (a.dataset.empty()) a.dataset = cfg.get_string("dataset", "");
  if (a.encoder.empty()) a.encoder = cfg.get_string("encoder", "");
  if (a.preset.empty()) a.preset = cfg.get_string("preset", "desk");
  if (a.variant.empty()) a.variant = cfg.get_string("variant", "+scl+msb+pab");
  ModelOptions opt = ModelOptions::parse(a.variant);
  opt.no_pab_fusion = cfg.get_string("no_pab_fusion", opt.no_pab_fusion);
  opt.validate();
  ModelPreset preset = ModelPreset::load(resolve_preset(a.preset));
  if (cfg.has("branches")) preset.branches = BranchSet::parse(cfg.get_string("branches"));
  TrainConfig tc = TrainConfig::from_config(cfg);
  tc.seed = seed;
  const double fraction = cfg.get_double("train_fraction", 0.8);
  const Dataset data = open_dataset(a.dataset, cfg.get_string("schema", ""),
                                    parse_polarity(cfg.get_string("polarity", "higher_is_better")));

  std::unique_ptr<SclModel> encoder;
  QualityModel model(preset, opt, synth::derive_seed(seed, 0x51));
  if (model.uses_degradation()) {
    if (a.encoder.empty()) throw ConfigError("variant " + opt.label() + " needs an encoder checkpoint (--encoder)");
    auto le = load_encoder(a.encoder);
    encoder = std::move(le.model);
    if (encoder->preset().to_config().canonical() != preset.to_config().canonical()) {
      throw ConfigError("encoder checkpoint was pre-trained with a different preset");
    }
  }
  auto [tr, te] = split_by_reference(data.samples, {fraction, seed});
  std::set<std::string> keys;
  for (const auto& s : tr) keys.insert(s.split_key());
  for (const auto& s : te)
    if (keys.count(s.split_key())) throw ContractError("split is not reference-disjoint at " + s.split_key());
  const ScoreNormalizer norm = ScoreNormalizer::fit(tr);
  const TrainLog log = train_quality(model, encoder.get(), tr, norm, tc, &te, progress_of(c));

  const fs::path out = c.out;
  fs::create_directories(out);
  json conf = config_json(cfg);
  conf["dataset"] = a.dataset;
  conf["encoder"] = a.encoder;
  conf["preset"] = a.preset;
  conf["variant"] = opt.label();
  conf["train_fraction"] = fraction;
  json extra = {{"dataset", a.dataset},
                {"dataset_hash", file_sum(a.dataset)},
                {"split", {{"seed", seed}, {"train_fraction", fraction}}},
                {"train_config", tc.to_config().values()},
                {"run_config", conf}};
  if (!a.encoder.empty() && encoder) extra["encoder_file_hash"] = file_sum(a.encoder);
  save_quality_model(out / "model.ckpt", model, encoder.get(), norm, extra);
  write_json(out / "train_log.json", log.to_json());
  const auto reps = evaluate(model, encoder.get(), norm, te, data.name, Protocol::Individual, {seed}, tc.n_crops);
  write_json(out / "report.json", reports_json(reps));
  if (!c.quiet) std::cerr << "test srocc " << reps.front().srocc << " plcc " << reps.front().plcc << std::endl;
  json inputs = {{"dataset", file_sum(a.dataset)}};
  if (encoder) inputs["encoder"] = file_sum(a.encoder);
  write_run_record(out, "train", conf, seed, inputs,
                   {{"model.ckpt", file_sum(out / "model.ckpt")}, {"report.json", file_sum(out / "report.json")}});
  return 0;
}

struct EvalArgs {
  std::string checkpoint, dataset, protocol = "individual", split;
  std::vector<int> seeds;
};

std::vector<std::uint64_t> seed_list(const std::vector<int>& s, std::uint64_t fallback) {
  if (s.empty()) return {fallback};
  std::vector<std::uint64_t> out;
  for (int v : s) {
    if (v < 0) throw ConfigError("seeds must be non-negative");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  return out;
}

int cmd_eval(const Common& c, EvalArgs a) {
  KeyValueConfig cfg = load_config(c);
  if (a.checkpoint.empty()) a.checkpoint = cfg.get_string("checkpoint", "");
  if (a.checkpoint.empty()) throw ConfigError("no checkpoint given (--checkpoint)");
  const json h = Checkpoint::peek_header(a.checkpoint);
  if (a.dataset.empty()) a.dataset = cfg.get_string("dataset", h.value("dataset", std::string()));
  const bool same = fs::exists(a.dataset) && file_sum(a.dataset) == h.value("dataset_hash", std::string());
  if (a.split.empty()) a.split = same ? "test" : "all";
  const std::uint64_t split_seed = h.contains("split") ? h["split"]["seed"].get<std::uint64_t>() : 0;
  const double fraction = h.contains("split") ? h["split"]["train_fraction"].get<double>() : 0.8;
  const int n_crops = cfg.get_int("n_crops", h.contains("train_config")
                                                 ? parse_int(h["train_config"].value("n_crops", "8"), "n_crops")
                                                 : 8);
  const Protocol proto = parse_protocol(a.protocol);
  const Dataset data = open_dataset(a.dataset, cfg.get_string("schema", ""),
                                    parse_polarity(cfg.get_string("polarity", "higher_is_better")));
  if (a.split != "all" && !same) throw ConfigError("train/test splits are only defined on the training dataset");
  const auto samples = select_split(data.samples, a.split, fraction, split_seed);
  auto loaded = load_quality_model(a.checkpoint);
  const auto seeds = seed_list(a.seeds, split_seed);
  const auto reps =
      evaluate(*loaded.model, loaded.encoder.get(), loaded.norm, samples, data.name, proto, seeds, n_crops);
  const fs::path out = c.out;
  fs::create_directories(out);
  write_json(out / "report.json", reports_json(reps));
  if (!c.quiet) {
    const auto& m = reps.back();
    std::cerr << data.name << " " << protocol_name(proto) << " srocc " << m.srocc << " plcc " << m.plcc << " n " << m.n
              << std::endl;
  }
  json conf = config_json(cfg);
  conf["checkpoint"] = a.checkpoint;
  conf["dataset"] = a.dataset;
  conf["protocol"] = protocol_name(proto);
  conf["split"] = a.split;
  write_run_record(out, "eval", conf, seeds.front(),
                   {{"checkpoint", file_sum(a.checkpoint)}, {"dataset", file_sum(a.dataset)}},
                   {{"report.json", file_sum(out / "report.json")}});
  return 0;
}

int cmd_cross_eval(const Common& c, EvalArgs a) {
  KeyValueConfig cfg = load_config(c);
  if (a.checkpoint.empty()) a.checkpoint = cfg.get_string("checkpoint", "");
  if (a.dataset.empty()) a.dataset = cfg.get_string("dataset", "");
  if (a.checkpoint.empty()) throw ConfigError("no checkpoint given (--checkpoint)");
  if (!fs::exists(a.checkpoint)) throw ConfigError("checkpoint not found: " + a.checkpoint);
  const json h = Checkpoint::peek_header(a.checkpoint);
  const Dataset data = open_dataset(a.dataset, cfg.get_string("schema", ""),
                                    parse_polarity(cfg.get_string("polarity", "higher_is_better")));
  if (file_sum(a.dataset) == h.value("dataset_hash", std::string()) && !c.quiet) {
    std::cerr << "warning: the target dataset is the training dataset" << std::endl;
  }
  const std::uint64_t fallback = h.contains("split") ? h["split"]["seed"].get<std::uint64_t>() : 0;
  const int n_crops = cfg.get_int("n_crops", 8);
  const auto res = cross_evaluate(a.checkpoint, data, seed_list(a.seeds, fallback), n_crops);
  const fs::path out = c.out;
  fs::create_directories(out);
  write_json(out / "report.json", reports_json(res.reports));
  if (!c.quiet) {
    std::cerr << "cross-dataset " << data.name << " srocc " << res.reports.back().srocc << " plcc "
              << res.reports.back().plcc << std::endl;
  }
  json conf = config_json(cfg);
  conf["checkpoint"] = a.checkpoint;
  conf["dataset"] = a.dataset;
  write_run_record(out, "cross-eval", conf, fallback,
                   {{"checkpoint_before", res.checkpoint_hash_before},
                    {"checkpoint_after", res.checkpoint_hash_after},
                    {"dataset", file_sum(a.dataset)}},
                   {{"report.json", file_sum(out / "report.json")}});
  return 0;
}

ExperimentConfig experiment_config(const Common& c, KeyValueConfig& cfg) {
  if (!c.seed.empty() && !cfg.has("seeds")) cfg.set("seeds", c.seed);
  if (!cfg.has("seeds")) {
    const char* env = std::getenv("SATQA_SEED");
    if (env && *env) cfg.set("seeds", env);
  }
  return ExperimentConfig::from_config(cfg);
}

void write_bundle(const fs::path& out, const RunBundle& b) {
  fs::create_directories(out);
  write_json(out / "bundle.json", b.to_json());
  std::ofstream t(out / "table.csv");
  if (!t) throw IoError("cannot write " + (out / "table.csv").string());
  t << b.comparison_table();
}

int cmd_ablate(const Common& c) {
  KeyValueConfig cfg = load_config(c);
  const ExperimentConfig e = experiment_config(c, cfg);
  const Dataset data = open_dataset(e.dataset, e.schema, e.polarity);
  std::unique_ptr<SclModel> encoder;
  if (!e.encoder.empty()) {
    if (!fs::exists(e.encoder)) throw ConfigError("encoder checkpoint not found: " + e.encoder.string());
    encoder = load_encoder(e.encoder).model;
  }
  const RunBundle b = run_ablation(e, encoder.get(), data, progress_of(c));
  write_bundle(c.out, b);
  if (!c.quiet) std::cerr << b.comparison_table();
  json inputs = {{"dataset", file_sum(e.dataset)}};
  if (!e.encoder.empty()) inputs["encoder"] = file_sum(e.encoder);
  write_run_record(c.out, "ablate", e.to_config().values(), e.seeds.front(), inputs,
                   {{"bundle.json", file_sum(fs::path(c.out) / "bundle.json")}});
  return 0;
}

int cmd_data_fraction(const Common& c) {
  KeyValueConfig cfg = load_config(c);
  const ExperimentConfig e = experiment_config(c, cfg);
  if (e.corpus.empty() || !fs::exists(e.corpus)) throw ConfigError("corpus manifest not found: " + e.corpus.string());
  const auto corpus = CorpusManifest::load(e.corpus);
  const Dataset data = open_dataset(e.dataset, e.schema, e.polarity);
  const RunBundle b = run_data_fraction(e, corpus, data, progress_of(c));
  write_bundle(c.out, b);
  if (!c.quiet) std::cerr << b.comparison_table();
  write_run_record(c.out, "data-fraction", e.to_config().values(), e.seeds.front(),
                   {{"corpus", file_sum(e.corpus)}, {"dataset", file_sum(e.dataset)}},
                   {{"bundle.json", file_sum(fs::path(c.out) / "bundle.json")}});
  return 0;
}

struct VizArgs {
  std::string kind, checkpoint, encoder, dataset, split = "all";
};

int cmd_export_viz(const Common& c, VizArgs a) {
  KeyValueConfig cfg = load_config(c);
  const std::uint64_t seed = resolve_seed(c, cfg);
  if (a.dataset.empty()) a.dataset = cfg.get_string("dataset", "");
  const fs::path out = c.out;
  fs::create_directories(out);
  json inputs;
  fs::path file;
  if (a.kind == "scatter") {
    if (a.checkpoint.empty()) throw ConfigError("scatter export needs a quality checkpoint (--checkpoint)");
    const json h = Checkpoint::peek_header(a.checkpoint);
    if (a.dataset.empty()) a.dataset = h.value("dataset", std::string());
    const Dataset data = open_dataset(a.dataset, cfg.get_string("schema", ""),
                                      parse_polarity(cfg.get_string("polarity", "higher_is_better")));
    const double fraction = h.contains("split") ? h["split"]["train_fraction"].get<double>() : 0.8;
    const std::uint64_t split_seed = h.contains("split") ? h["split"]["seed"].get<std::uint64_t>() : 0;
    const auto samples = select_split(data.samples, a.split, fraction, split_seed);
    auto loaded = load_quality_model(a.checkpoint);
    file = out / "scatter.csv";
    export_scatter(file, *loaded.model, loaded.encoder.get(), loaded.norm, samples, cfg.get_int("n_crops", 8), seed);
    inputs = {{"checkpoint", file_sum(a.checkpoint)}, {"dataset", file_sum(a.dataset)}};
  } else if (a.kind == "embed") {
    std::unique_ptr<SclModel> enc;
    if (!a.encoder.empty()) {
      enc = load_encoder(a.encoder).model;
      inputs["encoder"] = file_sum(a.encoder);
    } else if (!a.checkpoint.empty()) {
      auto loaded = load_quality_model(a.checkpoint);
      enc = std::move(loaded.encoder);
      inputs["checkpoint"] = file_sum(a.checkpoint);
    }
    if (!enc) throw ConfigError("embedding export needs a pre-trained encoder checkpoint (--encoder)");
    const Dataset data = open_dataset(a.dataset, cfg.get_string("schema", ""),
                                      parse_polarity(cfg.get_string("polarity", "higher_is_better")));
    const auto samples = select_split(data.samples, a.split, cfg.get_double("train_fraction", 0.8), seed);
    file = out / "embed.csv";
    export_embeddings(file, *enc, samples);
    inputs["dataset"] = file_sum(a.dataset);
  } else {
    throw ConfigError("--kind must be scatter or embed");
  }
  json conf = config_json(cfg);
  conf["kind"] = a.kind;
  conf["split"] = a.split;
  write_run_record(out, "export-viz", conf, seed, inputs, {{file.filename().string(), file_sum(file)}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"satqa: contrastive pre-training, quality training and evaluation harness"};
  app.require_subcommand(1);

  Common common;
  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "build a labelled synthetic distortion corpus");
  add_common(synth, common);
  synth->add_option("--refs", synth_args.refs, "directory of reference images");
  synth->add_option("--procedural", synth_args.procedural, "generate N procedural references instead");
  synth->add_option("--ref-size", synth_args.ref_size, "side of procedural references");
  synth->add_option("--families", synth_args.families, "comma-separated distortion families");
  synth->add_option("--levels", synth_args.levels, "levels per family");
  synth->add_flag("--force", synth_args.force, "overwrite an existing manifest");

  std::string corpus, preset;
  auto* pre = app.add_subcommand("pretrain", "contrastive pre-training of the degradation encoder");
  add_common(pre, common);
  pre->add_option("--corpus", corpus, "corpus manifest.jsonl");
  pre->add_option("--preset", preset, "preset name or path");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a quality model");
  add_common(train, common);
  train->add_option("--dataset", train_args.dataset, "dataset manifest (jsonl or csv)");
  train->add_option("--encoder", train_args.encoder, "pre-trained encoder checkpoint");
  train->add_option("--preset", train_args.preset, "preset name or path");
  train->add_option("--variant", train_args.variant, "baseline, +scl, +scl+msb, +scl+msb+pab, +msb");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "evaluate a quality checkpoint");
  add_common(eval, common);
  eval->add_option("--checkpoint", eval_args.checkpoint, "quality checkpoint");
  eval->add_option("--dataset", eval_args.dataset, "dataset manifest");
  eval->add_option("--protocol", eval_args.protocol, "individual or per_family");
  eval->add_option("--split", eval_args.split, "train, test or all");
  eval->add_option("--seeds", eval_args.seeds, "crop seeds")->delimiter(',');

  EvalArgs cross_args;
  auto* cross = app.add_subcommand("cross-eval", "score another dataset without any tuning");
  add_common(cross, common);
  cross->add_option("--checkpoint", cross_args.checkpoint, "quality checkpoint");
  cross->add_option("--dataset", cross_args.dataset, "target dataset manifest");
  cross->add_option("--seeds", cross_args.seeds, "crop seeds")->delimiter(',');

  auto* ablate = app.add_subcommand("ablate", "module and branch ablations");
  add_common(ablate, common);
  auto* frac = app.add_subcommand("data-fraction", "pre-training data amount study");
  add_common(frac, common);

  VizArgs viz_args;
  auto* viz = app.add_subcommand("export-viz", "export scatter or embedding CSV data");
  add_common(viz, common);
  viz->add_option("--kind", viz_args.kind, "scatter or embed")->required();
  viz->add_option("--checkpoint", viz_args.checkpoint, "quality checkpoint");
  viz->add_option("--encoder", viz_args.encoder, "encoder checkpoint");
  viz->add_option("--dataset", viz_args.dataset, "dataset manifest");
  viz->add_option("--split", viz_args.split, "train, test or all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*synth) return cmd_synth(common, synth_args);
    if (*pre) return cmd_pretrain(common, corpus, preset);
    if (*train) return cmd_train(common, train_args);
    if (*eval) {
      if (parse_protocol(eval_args.protocol) == Protocol::CrossDataset) {
        throw ConfigError("use the cross-eval subcommand for the cross-dataset protocol");
      }
      return cmd_eval(common, eval_args);
    }
    if (*cross) return cmd_cross_eval(common, cross_args);
    if (*ablate) return cmd_ablate(common);
    if (*frac) return cmd_data_fraction(common);
    if (*viz) return cmd_export_viz(common, viz_args);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << std::endl;
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
