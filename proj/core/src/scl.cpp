#include "satqa/scl.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "satqa/dataset.hpp"
#include "satqa/errors.hpp"
#include "satqa/image.hpp"
#include "satqa/optim.hpp"

namespace satqa {

using ag::Graph;
using ag::Var;

// ---- loss ----------------------------------------------------------------

NtXentResult nt_xent_supervised(const Tensor& z, const std::vector<int>& categories, double tau) {
  if (!(tau > 0.0)) throw DomainError("temperature must be > 0, got " + std::to_string(tau));
  if (z.rank() != 2) throw ContractError("embeddings must be N x D, got " + shape_str(z.shape()));
  const int n = z.dim(0), d = z.dim(1);
  if (n < 2) throw ContractError("contrastive loss needs N >= 2 embeddings");
  if (static_cast<int>(categories.size()) != n) throw ContractError("one category per embedding required");

  std::vector<int> positives(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (j != i && categories[static_cast<std::size_t>(j)] == categories[static_cast<std::size_t>(i)])
        ++positives[static_cast<std::size_t>(i)];
  for (int i = 0; i < n; ++i)
    if (positives[static_cast<std::size_t>(i)] == 0)
      throw ContractError("anchor " + std::to_string(i) + " of category " +
                          std::to_string(categories[static_cast<std::size_t>(i)]) + " has no positive in the batch");

  // Unit rows and their norms.
  std::vector<double> norm(static_cast<std::size_t>(n));
  Tensor u({n, d});
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int c = 0; c < d; ++c) s += z.at(i, c) * z.at(i, c);
    norm[static_cast<std::size_t>(i)] = std::max(std::sqrt(s), 1e-12);
    for (int c = 0; c < d; ++c) u.at(i, c) = z.at(i, c) / norm[static_cast<std::size_t>(i)];
  }
  Tensor sim({n, n});
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      double s = 0.0;
      for (int c = 0; c < d; ++c) s += u.at(i, c) * u.at(k, c);
      sim.at(i, k) = s / tau;
    }

  // G(i, k) = dL / dsim(i, k).
  Tensor G({n, n});
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (int k = 0; k < n; ++k)
      if (k != i) mx = std::max(mx, sim.at(i, k));
    double den = 0.0;
    for (int k = 0; k < n; ++k)
      if (k != i) den += std::exp(sim.at(i, k) - mx);
    const double lse = mx + std::log(den);
    const double np = positives[static_cast<std::size_t>(i)];
    double li = 0.0;
    for (int k = 0; k < n; ++k) {
      if (k == i) continue;
      const bool pos = categories[static_cast<std::size_t>(k)] == categories[static_cast<std::size_t>(i)];
      if (pos) li -= (sim.at(i, k) - lse) / np;
      G.at(i, k) = (std::exp(sim.at(i, k) - lse) - (pos ? 1.0 / np : 0.0)) / n;
    }
    loss += li / n;
  }

  // d/du(i) = sum_k (G(i,k) + G(k,i)) u(k) / tau, then through the row
  // normalisation.
  NtXentResult r{loss, Tensor({n, d})};
  for (int i = 0; i < n; ++i) {
    std::vector<double> gu(static_cast<std::size_t>(d), 0.0);
    for (int k = 0; k < n; ++k) {
      const double w = (G.at(i, k) + G.at(k, i)) / tau;
      if (w == 0.0) continue;
      for (int c = 0; c < d; ++c) gu[static_cast<std::size_t>(c)] += w * u.at(k, c);
    }
    double dot = 0.0;
    for (int c = 0; c < d; ++c) dot += gu[static_cast<std::size_t>(c)] * u.at(i, c);
    for (int c = 0; c < d; ++c)
      r.grad.at(i, c) = (gu[static_cast<std::size_t>(c)] - dot * u.at(i, c)) / norm[static_cast<std::size_t>(i)];
  }
  return r;
}

Var nt_xent_loss(Var embeddings, const std::vector<int>& categories, double tau) {
  Graph& g = *embeddings.graph;
  auto res = std::make_shared<NtXentResult>(nt_xent_supervised(embeddings.value(), categories, tau));
  return g.emit(Tensor::scalar(res->loss), {embeddings}, [embeddings, res](Graph& gr, const Tensor&, const Tensor& og) {
    Tensor& gz = gr.grad(embeddings);
    const double s = og[0];
    for (std::size_t i = 0; i < gz.size(); ++i) gz[i] += s * res->grad[i];
  });
}

// ---- networks ------------------------------------------------------------

ResidualBlock::ResidualBlock(int in, int out, int stride, nn::Initializer& init) {
  conv1_ = &add_child("conv1", std::make_unique<nn::Conv2d>(in, out, 3, ag::Conv2dGeom{stride, 1, 1}, init, false));
  bn1_ = &add_child("bn1", std::make_unique<nn::BatchNorm2d>(out));
  conv2_ = &add_child("conv2", std::make_unique<nn::Conv2d>(out, out, 3, ag::Conv2dGeom{1, 1, 1}, init, false));
  bn2_ = &add_child("bn2", std::make_unique<nn::BatchNorm2d>(out));
  if (stride != 1 || in != out) {
    down_ = &add_child("down", std::make_unique<nn::Conv2d>(in, out, 1, ag::Conv2dGeom{stride, 0, 1}, init, false));
    down_bn_ = &add_child("down_bn", std::make_unique<nn::BatchNorm2d>(out));
  }
}

std::vector<Var> ResidualBlock::forward(Graph& g, const std::vector<Var>& xs, bool training) {
  auto conv = [&g](nn::Conv2d* c, const std::vector<Var>& in) {
    std::vector<Var> out;
    for (const auto& x : in) out.push_back(c->forward(g, x));
    return out;
  };
  auto h = bn1_->forward(g, conv(conv1_, xs), training);
  for (auto& v : h) v = ag::relu(v);
  h = bn2_->forward(g, conv(conv2_, h), training);
  const auto skip = down_ ? down_bn_->forward(g, conv(down_, xs), training) : xs;
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = ag::relu(ag::add(h[i], skip[i]));
  return h;
}

DegradationEncoder::DegradationEncoder(const ModelPreset& preset, nn::Initializer& init)
    : grid_(preset.final_grid()), D_(preset.D), pool_(preset.encoder_stem_stride == 2) {
  stem_ = &add_child("stem", std::make_unique<nn::Conv2d>(3, preset.encoder_stem, 3, ag::Conv2dGeom{preset.encoder_stem_stride, 1, 1}, init, false));
  stem_bn_ = &add_child("stem_bn", std::make_unique<nn::BatchNorm2d>(preset.encoder_stem));
  int in = preset.encoder_stem;
  for (int s = 0; s < 4; ++s) {
    std::vector<ResidualBlock*> blocks;
    const int w = preset.encoder_widths[static_cast<std::size_t>(s)];
    for (int b = 0; b < preset.encoder_blocks[static_cast<std::size_t>(s)]; ++b) {
      const int stride = (b == 0 && s > 0) ? 2 : 1;
      blocks.push_back(&add_child("stage" + std::to_string(s + 1) + "." + std::to_string(b),
                                  std::make_unique<ResidualBlock>(in, w, stride, init)));
      in = w;
    }
    stages_.push_back(blocks);
    heads_.push_back(&add_child("proj" + std::to_string(s + 1),
                                std::make_unique<nn::Conv2d>(w, D_ / 4, 1, ag::Conv2dGeom{}, init, true)));
  }
}

std::vector<Var> DegradationEncoder::forward(Graph& g, const std::vector<Var>& images, bool training) {
  std::vector<Var> x;
  for (const auto& im : images) x.push_back(stem_->forward(g, im));
  x = stem_bn_->forward(g, x, training);
  for (auto& v : x) v = pool_ ? ag::max_pool2d(ag::relu(v), 2, 2, false) : ag::relu(v);
  std::vector<std::vector<Var>> parts(images.size());
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (auto* b : stages_[s]) x = b->forward(g, x, training);
    if (x[0].dim(1) < grid_ || x[0].dim(2) < grid_) {
      throw ConfigError("encoder stage " + std::to_string(s + 1) + " map " + shape_str(x[0].shape()) +
                        " is smaller than the final grid " + std::to_string(grid_));
    }
    for (std::size_t i = 0; i < x.size(); ++i)
      parts[i].push_back(heads_[s]->forward(g, ag::adaptive_avg_pool2d(x[i], grid_, grid_)));
  }
  std::vector<Var> out;
  for (auto& p : parts) out.push_back(nn::map_to_tokens(ag::concat_rows(p)));
  return out;
}

Projector::Projector(int in, int hidden, int out, nn::Initializer& init) : out_(out) {
  fc1_ = &add_child("fc1", std::make_unique<nn::Linear>(in, hidden, init));
  fc2_ = &add_child("fc2", std::make_unique<nn::Linear>(hidden, out, init));
}

Var Projector::forward(Graph& g, Var r) {
  Var h = ag::relu(fc1_->forward(g, ag::l2_normalize_rows(r)));
  return ag::l2_normalize_rows(fc2_->forward(g, h));
}

SclModel::SclModel(const ModelPreset& preset, std::uint64_t seed) : preset_(preset) {
  preset_.validate();
  nn::Initializer init(seed);
  encoder_ = &add_child("encoder", std::make_unique<DegradationEncoder>(preset_, init));
  const int hidden = preset_.proj_hidden > 0 ? preset_.proj_hidden : preset_.D;
  projector_ = &add_child("projector", std::make_unique<Projector>(preset_.D, hidden, preset_.proj_dim, init));
}

Var SclModel::pooled(Graph&, Var features) { return ag::mean_axis(features, 0); }

Var SclModel::embed(Graph& g, Var image) { return projector_->forward(g, pooled(g, encoder_->forward(g, image))); }

Var SclModel::embed_batch(Graph& g, const std::vector<Var>& images, bool training) {
  std::vector<Var> rows;
  for (const auto& p : encoder_->forward(g, images, training)) rows.push_back(pooled(g, p));
  return projector_->forward(g, ag::concat_rows(rows));
}

namespace {

void check_input(const ModelPreset& p, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != p.input_size || image.dim(2) != p.input_size) {
    throw ConfigError("input " + shape_str(image.shape()) + " does not match preset '" + p.name + "' input " +
                      shape_str({3, p.input_size, p.input_size}));
  }
}

}  // namespace

Tensor degradation_features(SclModel& model, const Tensor& image) {
  check_input(model.preset(), image);
  Graph g(false);
  Tensor p = model.encoder().forward(g, g.constant(image)).value();
  const Shape want{model.preset().final_tokens(), model.preset().D};
  if (p.shape() != want) {
    throw ConfigError("degradation features " + shape_str(p.shape()) + " do not match the backbone output " +
                      shape_str(want));
  }
  return p;
}

Tensor project_embedding(SclModel& model, const Tensor& image, const std::string& what) {
  check_input(model.preset(), image);
  Graph g(false);
  Tensor z = model.embed(g, g.constant(image)).value();
  if (!z.all_finite()) throw NumericError("non-finite embedding for " + what);
  return z;
}

Tensor evaluation_input(const RgbImage& image, int size) {
  const RgbImage src = ensure_min_side(image, size);
  const int top = (src.height() - size) / 2, left = (src.width() - size) / 2;
  return to_model_input(crop(src, top, left, size, size));
}

// ---- training ------------------------------------------------------------

SclConfig SclConfig::from_config(const KeyValueConfig& c) {
  SclConfig s;
  s.epochs = c.get_int("epochs", s.epochs);
  s.tau = c.get_double("tau", s.tau);
  s.batch_size = c.get_int("batch_size", s.batch_size);
  s.lr = c.get_double("lr", s.lr);
  s.weight_decay = c.get_double("weight_decay", s.weight_decay);
  s.train_fraction = c.get_double("train_fraction", s.train_fraction);
  s.max_steps = c.get_int("max_steps", s.max_steps);
  s.schedule = c.get_string("schedule", s.schedule);
  s.views = c.get_int("views", s.views);
  s.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<int>(s.seed)));
  if (s.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (s.batch_size < 2 || s.batch_size % 2 != 0) throw ConfigError("contrastive batch_size must be even and >= 2");
  if (!(s.tau > 0)) throw DomainError("tau must be > 0");
  if (s.schedule != "cosine" && s.schedule != "constant") {
    throw ConfigError("schedule must be cosine or constant, got '" + s.schedule + "'");
  }
  if (s.views < 1) throw ConfigError("views must be >= 1");
  return s;
}

KeyValueConfig SclConfig::to_config() const {
  KeyValueConfig c;
  auto num = [](double v) {
    std::ostringstream o;
    o.precision(17);
    o << v;
    return o.str();
  };
  c.set("epochs", std::to_string(epochs));
  c.set("tau", num(tau));
  c.set("batch_size", std::to_string(batch_size));
  c.set("lr", num(lr));
  c.set("weight_decay", num(weight_decay));
  c.set("train_fraction", num(train_fraction));
  c.set("max_steps", std::to_string(max_steps));
  c.set("schedule", schedule);
  c.set("views", std::to_string(views));
  c.set("seed", std::to_string(seed));
  return c;
}

BalancedBatchSampler::BalancedBatchSampler(const std::vector<int>& categories, int batch_size, std::uint64_t seed)
    : pairs_(batch_size / 2), rng_(seed) {
  if (batch_size < 2) throw ConfigError("contrastive batch size must be >= 2");
  std::map<int, std::vector<std::size_t>> by_cat;
  for (std::size_t i = 0; i < categories.size(); ++i) by_cat[categories[i]].push_back(i);
  for (auto& [c, m] : by_cat) {
    if (m.size() < 2) {
      excluded_.push_back(c);
      continue;
    }
    cats_.push_back(c);
    members_.push_back(m);
  }
  if (cats_.empty()) throw InsufficientDataError("no category has two or more images; positives impossible");
  cursor_.assign(cats_.size(), 0);
  for (auto& m : members_) std::shuffle(m.begin(), m.end(), rng_);
  std::size_t used = 0;
  for (auto& m : members_) used += m.size();
  steps_ = static_cast<int>((used + static_cast<std::size_t>(2 * pairs_) - 1) / static_cast<std::size_t>(2 * pairs_));
}

std::vector<std::size_t> BalancedBatchSampler::next() {
  std::vector<std::size_t> out;
  std::set<std::size_t> in_batch;
  for (int p = 0; p < pairs_; ++p) {
    if (cat_pos_ >= cat_queue_.size()) {
      cat_queue_.resize(cats_.size());
      std::iota(cat_queue_.begin(), cat_queue_.end(), 0);
      std::shuffle(cat_queue_.begin(), cat_queue_.end(), rng_);
      cat_pos_ = 0;
    }
    const std::size_t c = cat_queue_[cat_pos_++];
    auto& m = members_[c];
    for (int k = 0; k < 2; ++k) {
      // Skip members already drawn into this batch when a category repeats.
      for (std::size_t tries = 0; tries < m.size(); ++tries) {
        if (cursor_[c] >= m.size()) {
          std::shuffle(m.begin(), m.end(), rng_);
          cursor_[c] = 0;
        }
        const std::size_t idx = m[cursor_[c]++];
        if (in_batch.insert(idx).second) {
          out.push_back(idx);
          break;
        }
      }
    }
  }
  return out;
}

PretrainResult pretrain(const CorpusManifest& corpus, const ModelPreset& preset, const SclConfig& cfg,
                        const std::vector<std::string>& reference_subset, const ProgressFn& progress) {
  corpus.validate();
  const std::set<std::string> allowed(reference_subset.begin(), reference_subset.end());

  std::vector<IqaSample> samples;
  for (const auto& r : corpus.records) {
    if (!allowed.empty() && !allowed.count(r.reference_id)) continue;
    IqaSample s;
    s.path = corpus.resolve(r);
    s.image_id = r.path;
    s.reference_id = r.reference_id;
    s.family = r.label.family;
    s.level = r.label.level;
    s.category = r.label.category;
    samples.push_back(std::move(s));
  }
  const auto [train, test] = split_by_reference(samples, {cfg.train_fraction, cfg.seed});

  PretrainResult res;
  std::set<std::string> tr, te;
  for (const auto& s : train) tr.insert(*s.reference_id);
  for (const auto& s : test) te.insert(*s.reference_id);
  res.train_refs.assign(tr.begin(), tr.end());
  res.test_refs.assign(te.begin(), te.end());

  std::vector<RgbImage> images;
  std::vector<int> cats;
  for (const auto& s : train) {
    images.push_back(load_image(s.path));
    cats.push_back(s.category);
  }
  BalancedBatchSampler sampler(cats, cfg.batch_size, synth::derive_seed(cfg.seed, 0x5a));
  res.excluded_categories = sampler.excluded();
  if (progress) {
    for (int c : res.excluded_categories)
      progress("warning: category " + std::to_string(c) + " has a single image and is excluded");
  }

  res.model = std::make_unique<SclModel>(preset, cfg.seed);
  SclModel& model = *res.model;
  optim::AdamW opt(model.parameters(), {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  const int S = preset.input_size;
  int total_steps = sampler.steps_per_epoch() * cfg.epochs;
  if (cfg.max_steps > 0) total_steps = std::min(total_steps, cfg.max_steps);
  int global = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double sum = 0.0;
    int n = 0;
    for (int step = 0; step < sampler.steps_per_epoch(); ++step) {
      if (cfg.max_steps > 0 && global >= cfg.max_steps) break;
      const auto batch = sampler.next();
      Graph g;
      std::vector<Var> xs;
      std::vector<int> bc;
      for (std::size_t k = 0; k < batch.size(); ++k) {
        for (int v = 0; v < cfg.views; ++v) {
          const auto seed = synth::derive_seed(cfg.seed, static_cast<std::uint64_t>(global), k, 17 + v);
          xs.push_back(g.constant(to_model_input(contrastive_view(images[batch[k]], S, seed))));
          bc.push_back(cats[batch[k]]);
        }
      }
      Var loss = nt_xent_loss(model.embed_batch(g, xs, true), bc, cfg.tau);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) {
        throw NumericError("non-finite contrastive loss at epoch " + std::to_string(epoch + 1) + " batch " +
                           std::to_string(step + 1));
      }
      if (cfg.schedule == "cosine") {
        opt.set_lr(optim::cosine_annealing_lr(cfg.lr, 0.0, total_steps, global));
      }
      opt.zero_grad();
      g.backward(loss);
      g.accumulate();
      opt.step();
      res.log.push_back({epoch + 1, global + 1, lv});
      sum += lv;
      ++n;
      ++global;
      if (progress && (global % 10 == 0)) {
        progress("scl epoch " + std::to_string(epoch + 1) + " step " + std::to_string(global) + " loss " +
                 std::to_string(lv));
      }
    }
    if (n > 0) res.epoch_mean_loss.push_back(sum / n);
  }

  const KeyValueConfig cfg_kv = cfg.to_config();
  res.header = {{"kind", "scl_encoder"},
                {"format_version", kCheckpointFormatVersion},
                {"config_hash", hex64(cfg_kv.hash())},
                {"tau", cfg.tau},
                {"proj_dim", preset.proj_dim},
                {"corpus_hash", hex64(corpus.hash())},
                {"preset", preset.to_config().values()},
                {"scl_config", cfg_kv.values()},
                {"train_refs", res.train_refs},
                {"test_refs", res.test_refs},
                {"epoch_mean_loss", res.epoch_mean_loss},
                {"excluded_categories", res.excluded_categories},
                {"steps", global}};
  return res;
}

void save_encoder(const std::filesystem::path& path, SclModel& model, const nlohmann::json& header) {
  Checkpoint c;
  c.header = header;
  c.header["encoder_checksum"] = hex64(module_checksum(model));
  c.add_module("scl.", model);
  c.save(path);
}

namespace {

ModelPreset preset_from_header(const nlohmann::json& h, const std::filesystem::path& path) {
  if (!h.contains("preset")) throw ConfigError("checkpoint " + path.string() + " carries no preset");
  KeyValueConfig kv;
  for (auto& [k, v] : h["preset"].items()) kv.set(k, v.get<std::string>());
  return ModelPreset::from_config(kv);
}

}  // namespace

LoadedEncoder load_encoder(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("encoder checkpoint not found: " + path.string());
  Checkpoint c = Checkpoint::load(path);
  if (c.header.value("kind", "") != "scl_encoder") throw ConfigError(path.string() + " is not an encoder checkpoint");
  LoadedEncoder out;
  out.header = c.header;
  out.model = encoder_from_checkpoint(c, "scl.", preset_from_header(c.header, path));
  return out;
}

std::unique_ptr<SclModel> encoder_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix,
                                                  const ModelPreset& preset) {
  auto m = std::make_unique<SclModel>(preset, 0);
  ckpt.load_module(prefix, *m);
  return m;
}

ClusterStats cluster_stats(const Tensor& train_emb, const std::vector<int>& train_family, const Tensor& test_emb,
                           const std::vector<int>& test_family, const std::vector<int>& test_category) {
  const int d = test_emb.dim(1);
  auto dot = [d](const Tensor& a, int i, const Tensor& b, int j) {
    double s = 0.0;
    for (int c = 0; c < d; ++c) s += a.at(i, c) * b.at(j, c);
    return s;
  };
  ClusterStats st;
  const int n = test_emb.dim(0);
  st.n_test = n;
  double same = 0.0, cross = 0.0;
  long ns = 0, nc = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double c = dot(test_emb, i, test_emb, j);
      if (test_category[static_cast<std::size_t>(i)] == test_category[static_cast<std::size_t>(j)]) {
        same += c;
        ++ns;
      } else {
        cross += c;
        ++nc;
      }
    }
  st.same_category_cos = ns ? same / static_cast<double>(ns) : 0.0;
  st.cross_category_cos = nc ? cross / static_cast<double>(nc) : 0.0;

  std::map<int, std::vector<double>> centroid;
  std::map<int, int> count;
  for (int i = 0; i < train_emb.dim(0); ++i) {
    const int f = train_family[static_cast<std::size_t>(i)];
    if (f == 0) continue;
    auto& c = centroid[f];
    c.resize(static_cast<std::size_t>(d), 0.0);
    for (int k = 0; k < d; ++k) c[static_cast<std::size_t>(k)] += train_emb.at(i, k);
    ++count[f];
  }
  for (auto& [f, c] : centroid) {
    double nn = 0.0;
    for (double v : c) nn += v * v;
    nn = std::sqrt(std::max(nn, 1e-24));
    for (double& v : c) v /= nn;
  }
  int correct = 0, total = 0;
  for (int i = 0; i < n; ++i) {
    if (test_family[static_cast<std::size_t>(i)] == 0) continue;
    int best = -1;
    double bs = -INFINITY;
    for (auto& [f, c] : centroid) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) s += c[static_cast<std::size_t>(k)] * test_emb.at(i, k);
      if (s > bs) {
        bs = s;
        best = f;
      }
    }
    correct += best == test_family[static_cast<std::size_t>(i)];
    ++total;
  }
  st.family_accuracy = total ? static_cast<double>(correct) / total : 0.0;
  return st;
}

ClusterStats held_out_clusters(SclModel& model, const CorpusManifest& corpus, const std::vector<std::string>& train_refs,
                               const std::vector<std::string>& test_refs) {
  const std::set<std::string> tr(train_refs.begin(), train_refs.end());
  const std::set<std::string> te(test_refs.begin(), test_refs.end());
  const int S = model.preset().input_size;
  std::vector<Tensor> tre, tee;
  std::vector<int> trf, tef, tec;
  for (const auto& r : corpus.records) {
    const bool in_tr = tr.count(r.reference_id) != 0;
    if (!in_tr && !te.count(r.reference_id)) continue;
    Tensor z = project_embedding(model, evaluation_input(load_image(corpus.resolve(r)), S), r.path);
    if (in_tr) {
      tre.push_back(std::move(z));
      trf.push_back(r.label.family);
    } else {
      tee.push_back(std::move(z));
      tef.push_back(r.label.family);
      tec.push_back(r.label.category);
    }
  }
  if (tre.empty() || tee.size() < 2) throw InsufficientDataError("cluster statistics need train and test embeddings");
  auto stack = [](const std::vector<Tensor>& rows) {
    const int d = static_cast<int>(rows.front().size());
    Tensor t({static_cast<int>(rows.size()), d});
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (int c = 0; c < d; ++c) t.at(static_cast<int>(i), c) = rows[i][static_cast<std::size_t>(c)];
    return t;
  };
  return cluster_stats(stack(tre), trf, stack(tee), tef, tec);
}

}  // namespace satqa
