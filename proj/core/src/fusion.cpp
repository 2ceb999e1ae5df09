#include "satqa/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "satqa/distortion.hpp"
#include "satqa/errors.hpp"
#include "satqa/image.hpp"
#include "satqa/metrics.hpp"
#include "satqa/optim.hpp"

namespace satqa {

using ag::Graph;
using ag::Var;

// ---- patch attention -------------------------------------------------------

PatchAttention::PatchAttention(int D, int heads, nn::Initializer& init) : D_(D), heads_(heads) {
  if (heads < 1 || D % heads != 0) {
    throw ConfigError("patch attention width " + std::to_string(D) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  q_ = &add_child("q", std::make_unique<nn::Linear>(D, D, init));
  k_ = &add_child("k", std::make_unique<nn::Linear>(D, D, init));
  v_ = &add_child("v", std::make_unique<nn::Linear>(D, D, init));
  o_ = &add_child("out", std::make_unique<nn::Linear>(D, D, init));
}

Var PatchAttention::forward(Graph& g, Var P, Var R, std::vector<Tensor>* attn) {
  if (P.shape() != R.shape()) {
    throw ContractError("degradation features " + shape_str(P.shape()) + " and perceptual features " +
                        shape_str(R.shape()) + " must have identical shapes");
  }
  if (P.dim(1) != D_) throw ContractError("patch attention expects width " + std::to_string(D_));
  Var Q = q_->forward(g, P);
  Var K = k_->forward(g, R);
  Var V = v_->forward(g, R);
  const int dh = D_ / heads_;
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  for (int h = 0; h < heads_; ++h) {
    Var qh = heads_ == 1 ? Q : ag::slice_cols(Q, h * dh, dh);
    Var kh = heads_ == 1 ? K : ag::slice_cols(K, h * dh, dh);
    Var vh = heads_ == 1 ? V : ag::slice_cols(V, h * dh, dh);
    Var a = ag::softmax_rows(ag::scale(ag::matmul(qh, kh, true), s));
    if (attn) attn->push_back(a.value());
    outs.push_back(ag::matmul(a, vh));
  }
  Var S = heads_ == 1 ? outs.front() : ag::concat_cols(outs);
  return o_->forward(g, S);
}

Var predict_score(Graph& g, nn::Linear& head, Var S) {
  if (!S.value().all_finite()) throw NumericError("non-finite fused features before the quality head");
  Var y = head.forward(g, ag::mean_axis(S, 0));
  if (!y.value().all_finite()) throw NumericError("non-finite quality score");
  return y;
}

// ---- options ---------------------------------------------------------------

ModelOptions ModelOptions::parse(const std::string& label) {
  ModelOptions o;
  o.scl = o.msb = o.pab = false;
  if (label == "baseline") return o;
  std::string rest = label;
  while (!rest.empty()) {
    if (rest[0] != '+') throw ConfigError("malformed variant label '" + label + "'");
    const auto next = rest.find('+', 1);
    const std::string tok = rest.substr(1, next == std::string::npos ? std::string::npos : next - 1);
    if (tok == "scl") {
      o.scl = true;
    } else if (tok == "msb") {
      o.msb = true;
    } else if (tok == "pab") {
      o.pab = true;
    } else {
      throw ConfigError("unknown module '" + tok + "' in variant label '" + label + "'");
    }
    rest = next == std::string::npos ? "" : rest.substr(next);
  }
  return o;
}

std::string ModelOptions::label() const {
  if (!scl && !msb && !pab) return "baseline";
  std::string s;
  if (scl) s += "+scl";
  if (msb) s += "+msb";
  if (pab) s += "+pab";
  return s;
}

void ModelOptions::validate() const {
  if (pab && !scl) {
    throw ConfigError("patch attention needs degradation features as queries; enable scl or disable pab");
  }
  if (no_pab_fusion != "concat" && no_pab_fusion != "none") {
    throw ConfigError("no_pab_fusion must be concat or none, got '" + no_pab_fusion + "'");
  }
}

// ---- model -----------------------------------------------------------------

QualityModel::QualityModel(const ModelPreset& preset, const ModelOptions& options, std::uint64_t seed)
    : preset_(preset), options_(options) {
  options_.validate();
  nn::Initializer init(seed);
  int head_in = preset.D;
  if (!options_.scl && !options_.msb && !options_.pab) {
    vit_ = &add_child("vit", std::make_unique<VisionTransformer>(preset, init));
    head_in = preset.vit_width;
  } else {
    backbone_ = &add_child("backbone", std::make_unique<PerceptualBackbone>(preset, options_.msb, init));
    vit_ = &backbone_->vit();
    if (options_.pab) {
      pab_ = &add_child("pab", std::make_unique<PatchAttention>(preset.D, preset.pab_heads, init));
    } else if (uses_degradation()) {
      head_in = 2 * preset.D;
    }
  }
  head_ = &add_child("head", std::make_unique<nn::Linear>(head_in, 1, init));
}

bool QualityModel::uses_degradation() const {
  return options_.scl && (options_.pab || options_.no_pab_fusion == "concat");
}

Var QualityModel::forward(Graph& g, Var image, const Tensor* P, QualityTrace* trace) {
  if (!backbone_) {
    auto taps = vit_->forward_taps(g, image, trace ? trace->backbone.attn : nullptr);
    Var S = taps.back();
    if (trace) trace->S = S;
    return predict_score(g, *head_, S);
  }
  Var R = backbone_->forward(g, image, trace ? &trace->backbone : nullptr);
  if (trace) trace->R = R;
  if (!uses_degradation()) {
    if (trace) trace->S = R;
    return predict_score(g, *head_, R);
  }
  if (!P) throw ConfigError("variant " + options_.label() + " needs degradation features from an encoder");
  if (P->shape() != R.shape()) {
    throw ContractError("degradation features " + shape_str(P->shape()) + " do not match perceptual features " +
                        shape_str(R.shape()));
  }
  Var Pv = g.constant(*P);
  if (pab_) {
    Var S = pab_->forward(g, Pv, R, trace ? trace->pab_attn : nullptr);
    if (trace) trace->S = S;
    return predict_score(g, *head_, S);
  }
  Var S = ag::concat_cols({R, Pv});
  if (trace) trace->S = S;
  return predict_score(g, *head_, S);
}

// ---- training config -------------------------------------------------------

TrainConfig TrainConfig::from_config(const KeyValueConfig& c) {
  TrainConfig t;
  t.lr = c.get_double("lr", t.lr);
  t.weight_decay = c.get_double("weight_decay", t.weight_decay);
  t.schedule = c.get_string("schedule", t.schedule);
  t.t_max = c.get_int("t_max", t.t_max);
  t.eta_min = c.get_double("eta_min", t.eta_min);
  t.epochs = c.get_int("epochs", t.epochs);
  t.batch_size = c.get_int("batch_size", t.batch_size);
  t.n_crops = c.get_int("n_crops", t.n_crops);
  t.crop_size = c.get_int("crop_size", t.crop_size);
  t.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<int>(t.seed)));
  t.train_crops = c.get_int("train_crops", t.train_crops);
  t.max_steps = c.get_int("max_steps", t.max_steps);
  t.freeze_extractor = c.get_bool("freeze_extractor", t.freeze_extractor);
  t.val_every = c.get_int("val_every", t.val_every);
  if (t.schedule != "cosine" && t.schedule != "constant") {
    throw ConfigError("schedule must be cosine or constant, got '" + t.schedule + "'");
  }
  if (!(t.lr > 0)) throw ConfigError("lr must be > 0");
  if (t.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (t.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (t.n_crops < 1) throw ConfigError("n_crops must be >= 1");
  if (t.t_max < 1) throw ConfigError("t_max must be >= 1");
  if (t.crop_size < 1) throw ConfigError("crop_size must be >= 1");
  return t;
}

KeyValueConfig TrainConfig::to_config() const {
  KeyValueConfig c;
  auto num = [](double v) {
    std::ostringstream o;
    o.precision(17);
    o << v;
    return o.str();
  };
  c.set("lr", num(lr));
  c.set("weight_decay", num(weight_decay));
  c.set("schedule", schedule);
  c.set("t_max", std::to_string(t_max));
  c.set("eta_min", num(eta_min));
  c.set("epochs", std::to_string(epochs));
  c.set("batch_size", std::to_string(batch_size));
  c.set("n_crops", std::to_string(n_crops));
  c.set("crop_size", std::to_string(crop_size));
  c.set("seed", std::to_string(seed));
  c.set("train_crops", std::to_string(train_crops));
  c.set("max_steps", std::to_string(max_steps));
  c.set("freeze_extractor", freeze_extractor ? "true" : "false");
  c.set("val_every", std::to_string(val_every));
  return c;
}

nlohmann::json TrainLog::to_json() const {
  nlohmann::json ep = nlohmann::json::array();
  for (const auto& e : epochs) {
    nlohmann::json j = {{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}};
    j["val_srocc"] = e.val_srocc ? nlohmann::json(*e.val_srocc) : nlohmann::json();
    j["val_plcc"] = e.val_plcc ? nlohmann::json(*e.val_plcc) : nlohmann::json();
    ep.push_back(j);
  }
  return {{"step_loss", step_loss},
          {"epochs", ep},
          {"encoder_checksum_before", encoder_checksum_before},
          {"encoder_checksum_after", encoder_checksum_after}};
}

// ---- training --------------------------------------------------------------

namespace {

std::uint64_t id_hash(const std::string& s) { return fnv1a(s.data(), s.size()); }

struct TrainPatch {
  Tensor input;
  Tensor P;
  double target = 0.0;
};

}  // namespace

TrainLog train_quality(QualityModel& model, SclModel* encoder, const std::vector<IqaSample>& train,
                       const ScoreNormalizer& norm, const TrainConfig& cfg, const std::vector<IqaSample>* val,
                       const ProgressFn& progress) {
  const bool needs_p = model.uses_degradation();
  if (needs_p && !encoder) {
    throw ConfigError("variant " + model.options().label() + " requires a degradation encoder checkpoint");
  }
  if (cfg.crop_size != model.preset().input_size) {
    throw ConfigError("crop_size " + std::to_string(cfg.crop_size) + " does not match the preset input size " +
                      std::to_string(model.preset().input_size));
  }
  if (train.empty()) throw InsufficientDataError("no training samples");

  TrainLog log;
  if (encoder) log.encoder_checksum_before = hex64(module_checksum(*encoder));
  if (cfg.freeze_extractor) model.vit().set_trainable(false);

  std::vector<TrainPatch> patches;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const RgbImage img = load_image(train[i].path);
    const auto pb = sample_patches(img, cfg.crops_per_image(), cfg.crop_size,
                                   synth::derive_seed(cfg.seed, id_hash(train[i].image_id), 0x71), true);
    for (const auto& p : pb.patches) {
      TrainPatch tp;
      tp.input = to_model_input(p);
      if (needs_p) tp.P = degradation_features(*encoder, tp.input);
      tp.target = norm.normalize(train[i].score);
      patches.push_back(std::move(tp));
    }
  }

  optim::AdamW opt(model.parameters(), {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  std::vector<std::size_t> order(patches.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  int global = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.max_steps > 0 && global >= cfg.max_steps) break;
    const double lr =
        cfg.schedule == "cosine" ? optim::cosine_annealing_lr(cfg.lr, cfg.eta_min, cfg.t_max, epoch) : cfg.lr;
    opt.set_lr(lr);
    std::mt19937_64 rng(synth::derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 0x33));
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    int steps = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      if (cfg.max_steps > 0 && global >= cfg.max_steps) break;
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      const double w = 1.0 / static_cast<double>(e - b);
      opt.zero_grad();
      double loss = 0.0;
      for (std::size_t k = b; k < e; ++k) {
        const TrainPatch& tp = patches[order[k]];
        Graph g;
        Var pred = model.forward(g, g.constant(tp.input), needs_p ? &tp.P : nullptr);
        Var l = ag::scale(ag::l1_loss(pred, {tp.target}), w);
        loss += l.value()[0];
        g.backward(l);
        g.accumulate();
      }
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite quality loss at epoch " + std::to_string(epoch + 1) + " step " +
                           std::to_string(global + 1));
      }
      opt.step();
      log.step_loss.push_back(loss);
      sum += loss;
      ++steps;
      ++global;
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    rec.train_loss = steps ? sum / steps : 0.0;
    const bool last = epoch + 1 == cfg.epochs || (cfg.max_steps > 0 && global >= cfg.max_steps);
    if (val && !val->empty() && cfg.val_every > 0 && ((epoch + 1) % cfg.val_every == 0 || last)) {
      const auto pred = predict_samples(model, encoder, *val, cfg.n_crops, cfg.seed, norm);
      std::vector<double> gt;
      for (const auto& s : *val) gt.push_back(s.score);
      try {
        rec.val_srocc = srocc(pred, gt);
        rec.val_plcc = plcc(pred, gt);
      } catch (const Error&) {
        // Too few or constant validation scores leave the fields empty.
      }
    }
    log.epochs.push_back(rec);
    if (progress) {
      std::ostringstream o;
      o << "epoch " << rec.epoch << " lr " << lr << " loss " << rec.train_loss;
      if (rec.val_srocc) o << " val_srocc " << *rec.val_srocc << " val_plcc " << *rec.val_plcc;
      progress(o.str());
    }
  }

  if (encoder) {
    log.encoder_checksum_after = hex64(module_checksum(*encoder));
    if (log.encoder_checksum_after != log.encoder_checksum_before) {
      throw ContractError("degradation encoder changed during quality training (" + log.encoder_checksum_before +
                          " -> " + log.encoder_checksum_after + ")");
    }
  }
  return log;
}

QualityPrediction predict_image(QualityModel& model, SclModel* encoder, const RgbImage& image, int n_crops,
                                std::uint64_t seed, const ScoreNormalizer& norm) {
  if (n_crops < 1) throw ConfigError("n_crops must be >= 1");
  const bool needs_p = model.uses_degradation();
  if (needs_p && !encoder) throw ConfigError("variant " + model.options().label() + " requires an encoder");
  const auto pb = sample_patches(image, n_crops, model.preset().input_size, seed, false);
  QualityPrediction out;
  for (const auto& p : pb.patches) {
    Graph g(false);
    const Tensor x = to_model_input(p);
    Tensor P;
    if (needs_p) P = degradation_features(*encoder, x);
    Var y = model.forward(g, g.constant(x), needs_p ? &P : nullptr);
    out.patch_scores.push_back(norm.denormalize(y.value()[0]));
  }
  double s = 0.0;
  for (double v : out.patch_scores) s += v;
  out.score = s / static_cast<double>(out.patch_scores.size());
  return out;
}

std::vector<double> predict_samples(QualityModel& model, SclModel* encoder, const std::vector<IqaSample>& samples,
                                    int n_crops, std::uint64_t seed, const ScoreNormalizer& norm) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const RgbImage img = load_image(s.path);
    out.push_back(
        predict_image(model, encoder, img, n_crops, synth::derive_seed(seed, id_hash(s.image_id), 0x7e), norm).score);
  }
  return out;
}

// ---- checkpoints -----------------------------------------------------------

void save_quality_model(const std::filesystem::path& path, QualityModel& model, SclModel* encoder,
                        const ScoreNormalizer& norm, const nlohmann::json& extra) {
  Checkpoint c;
  c.header = extra.is_object() ? extra : nlohmann::json::object();
  const auto& o = model.options();
  c.header["kind"] = "quality_model";
  c.header["format_version"] = kCheckpointFormatVersion;
  c.header["preset"] = model.preset().to_config().values();
  c.header["options"] = {
      {"scl", o.scl}, {"msb", o.msb}, {"pab", o.pab}, {"no_pab_fusion", o.no_pab_fusion}, {"label", o.label()}};
  c.header["normalizer"] = {{"lo", norm.lo}, {"hi", norm.hi}};
  c.header["model_checksum"] = hex64(module_checksum(model));
  c.add_module("model.", model);
  if (encoder) {
    c.header["encoder_checksum"] = hex64(module_checksum(*encoder));
    c.add_module("encoder.", *encoder);
  }
  c.save(path);
}

LoadedQuality load_quality_model(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("quality checkpoint not found: " + path.string());
  Checkpoint c = Checkpoint::load(path);
  if (c.header.value("kind", "") != "quality_model") throw ConfigError(path.string() + " is not a quality checkpoint");
  KeyValueConfig kv;
  for (auto& [k, v] : c.header.at("preset").items()) kv.set(k, v.get<std::string>());
  const ModelPreset preset = ModelPreset::from_config(kv);
  ModelOptions o;
  const auto& jo = c.header.at("options");
  o.scl = jo.at("scl").get<bool>();
  o.msb = jo.at("msb").get<bool>();
  o.pab = jo.at("pab").get<bool>();
  o.no_pab_fusion = jo.value("no_pab_fusion", std::string("concat"));

  LoadedQuality out;
  out.header = c.header;
  out.model = std::make_unique<QualityModel>(preset, o, 0);
  c.load_module("model.", *out.model);
  if (c.has_prefix("encoder.")) {
    out.encoder = encoder_from_checkpoint(c, "encoder.", preset);
    const std::string sum = hex64(module_checksum(*out.encoder));
    if (sum != c.header.value("encoder_checksum", "")) {
      throw ContractError("encoder checksum mismatch in " + path.string());
    }
  }
  out.norm.lo = c.header.at("normalizer").at("lo").get<double>();
  out.norm.hi = c.header.at("normalizer").at("hi").get<double>();
  return out;
}

}  // namespace satqa
