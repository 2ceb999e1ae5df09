#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "satqa/corpus.hpp"
#include "satqa/errors.hpp"
#include "satqa/fusion.hpp"
#include "tmpdir.hpp"

using namespace satqa;
using namespace satqa::testing;

namespace {

void set_identity(nn::Linear& l) {
  Tensor& w = *l.weight().value;
  w.fill(0.0);
  for (int i = 0; i < w.dim(0); ++i) w.at(i, i) = 1.0;
  l.bias()->value->fill(0.0);
}

Tensor run_pab(PatchAttention& pab, const Tensor& P, const Tensor& R, std::vector<Tensor>* attn = nullptr) {
  ag::Graph g(false);
  return pab.forward(g, g.constant(P), g.constant(R), attn).value();
}

TEST(PatchAttention, TwoTokenHandCase) {
  nn::Initializer init(1);
  PatchAttention pab(2, 1, init);
  for (auto* l : {&pab.query(), &pab.key(), &pab.value(), &pab.output()}) set_identity(*l);
  const Tensor I({2, 2}, {1, 0, 0, 1});
  const Tensor S = run_pab(pab, I, I);
  // softmax of [1, 0] / sqrt(2) per row, times V = I.
  const double e1 = std::exp(1.0 / std::sqrt(2.0)), e0 = 1.0;
  const double hi = e1 / (e1 + e0), lo = e0 / (e1 + e0);
  EXPECT_NEAR(S.at(0, 0), hi, 1e-12);
  EXPECT_NEAR(S.at(0, 1), lo, 1e-12);
  EXPECT_NEAR(S.at(1, 0), lo, 1e-12);
  EXPECT_NEAR(S.at(1, 1), hi, 1e-12);
}

TEST(PatchAttention, SingleTokenReturnsValue) {
  nn::Initializer init(2);
  PatchAttention pab(6, 1, init);
  set_identity(pab.output());
  std::mt19937_64 rng(1);
  const Tensor P = random_tensor({1, 6}, rng), R = random_tensor({1, 6}, rng);
  ag::Graph g(false);
  const Tensor V = pab.value().forward(g, g.constant(R)).value();
  const Tensor S = run_pab(pab, P, R);
  for (std::size_t i = 0; i < S.size(); ++i) EXPECT_NEAR(S[i], V[i], 1e-12);
}

TEST(PatchAttention, ZeroQueriesAverageValues) {
  nn::Initializer init(3);
  PatchAttention pab(8, 2, init);
  set_identity(pab.output());
  pab.query().weight().value->fill(0.0);
  pab.query().bias()->value->fill(0.0);
  std::mt19937_64 rng(2);
  const Tensor P = random_tensor({5, 8}, rng), R = random_tensor({5, 8}, rng);
  ag::Graph g(false);
  const Tensor V = pab.value().forward(g, g.constant(R)).value();
  const Tensor S = run_pab(pab, P, R);
  for (int c = 0; c < 8; ++c) {
    double mean = 0;
    for (int r = 0; r < 5; ++r) mean += V.at(r, c) / 5;
    for (int r = 0; r < 5; ++r) EXPECT_NEAR(S.at(r, c), mean, 1e-12);
  }
}

TEST(PatchAttention, RowsSumToOneAndShapesChecked) {
  nn::Initializer init(4);
  PatchAttention pab(12, 3, init);
  std::mt19937_64 rng(3);
  for (int t = 0; t < 10; ++t) {
    std::vector<Tensor> attn;
    const Tensor S = run_pab(pab, random_tensor({4, 12}, rng, 3.0), random_tensor({4, 12}, rng, 3.0), &attn);
    EXPECT_EQ(S.shape(), (Shape{4, 12}));
    ASSERT_EQ(attn.size(), 3u);
    for (const auto& a : attn)
      for (int r = 0; r < a.dim(0); ++r) {
        double s = 0;
        for (int c = 0; c < a.dim(1); ++c) s += a.at(r, c);
        ASSERT_NEAR(s, 1.0, 1e-6);
      }
  }
  EXPECT_THROW(run_pab(pab, random_tensor({4, 12}, rng), random_tensor({2, 12}, rng)), ContractError);
  EXPECT_THROW(PatchAttention(10, 3, init), ConfigError);
}

TEST(PredictScore, PoolingContract) {
  nn::Initializer init(5);
  nn::Linear head(4, 1, init);
  std::mt19937_64 rng(4);
  const Tensor token = random_tensor({1, 4}, rng);
  Tensor constant({3, 4});
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) constant.at(r, c) = token.at(0, c);
  ag::Graph g(false);
  EXPECT_NEAR(predict_score(g, head, g.constant(constant)).value()[0],
              head.forward(g, g.constant(token)).value()[0], 1e-12);

  head.bias()->value->fill(0.0);
  EXPECT_EQ(predict_score(g, head, g.constant(Tensor::zeros({3, 4}))).value()[0], 0.0);

  const Tensor S = random_tensor({3, 4}, rng);
  Tensor perm({3, 4});
  const int order[] = {2, 0, 1};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) perm.at(r, c) = S.at(order[r], c);
  EXPECT_NEAR(predict_score(g, head, g.constant(S)).value()[0], predict_score(g, head, g.constant(perm)).value()[0],
              1e-12);

  Tensor bad = S;
  bad[5] = std::nan("");
  EXPECT_THROW(predict_score(g, head, g.constant(bad)), NumericError);
}

TEST(L1Loss, CasesAndOracle) {
  ag::Graph g(false);
  auto loss = [&](const std::vector<double>& p, const std::vector<double>& t) {
    return ag::l1_loss(g.constant(Tensor({static_cast<int>(p.size())}, p)), t).value()[0];
  };
  EXPECT_EQ(loss({0.5, 2.0}, {0.5, 2.0}), 0.0);
  EXPECT_DOUBLE_EQ(loss({1, 3}, {2, 1}), 1.5);
  EXPECT_DOUBLE_EQ(loss({0, 0}, {2, -4}), 2 * loss({0, 0}, {1, -2}));
  EXPECT_THROW(loss({1, 2}, {1}), ContractError);

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int t = 0; t < 200; ++t) {
    const int n = 1 + t % 17;
    std::vector<double> p(n), y(n);
    double want = 0;
    for (int i = 0; i < n; ++i) {
      p[i] = u(rng);
      y[i] = u(rng);
      want += std::abs(p[i] - y[i]);
    }
    ASSERT_NEAR(loss(p, y), want / n, 1e-9);
  }
}

TEST(L1Loss, TieSubgradientIsZero) {
  ag::Graph g;
  const auto p = g.input(Tensor({3}, {1.0, 2.0, 3.0}), true);
  g.backward(ag::l1_loss(p, {1.0, 0.0, 5.0}));
  EXPECT_EQ(g.grad(p)[0], 0.0);
  EXPECT_DOUBLE_EQ(g.grad(p)[1], 1.0 / 3);
  EXPECT_DOUBLE_EQ(g.grad(p)[2], -1.0 / 3);
}

TEST(ModelOptions, LabelsAndDependency) {
  EXPECT_EQ(ModelOptions::parse("baseline").label(), "baseline");
  const auto full = ModelOptions::parse("+scl+msb+pab");
  EXPECT_TRUE(full.scl && full.msb && full.pab);
  const auto scl = ModelOptions::parse("+scl");
  EXPECT_TRUE(scl.scl && !scl.msb && !scl.pab);
  EXPECT_THROW(ModelOptions::parse("+msb+pab").validate(), ConfigError);
  EXPECT_THROW(ModelOptions::parse("+gan"), ConfigError);
}

TEST(QualityModel, EndToEndParameterGradients) {
  const auto preset = desk_preset();
  QualityModel model(preset, ModelOptions{}, 21);
  std::mt19937_64 rng(8);
  std::vector<std::pair<std::string, ag::Parameter*>> pool;
  for (auto& [name, p] : model.named_parameters()) {
    if (name.find("deform.offset.weight") != std::string::npos) *p->value = random_tensor(p->value->shape(), rng, 0.05);
    if (!p->trainable) continue;
    if (name.rfind("pab.", 0) == 0 || name.rfind("head.", 0) == 0 || name.find(".msb") != std::string::npos)
      pool.emplace_back(name, p);
  }
  ASSERT_FALSE(pool.empty());
  const Tensor x = random_image_input(64, 3);
  const Tensor P = random_tensor({4, 96}, rng);
  auto loss_value = [&](ag::Graph& g) { return ag::l1_loss(model.forward(g, g.constant(x), &P), {50.0}); };

  model.zero_grad();
  {
    ag::Graph g;
    g.backward(loss_value(g));
    g.accumulate();
  }
  int checked = 0, seen_pab = 0, seen_head = 0, seen_msb = 0;
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  while (checked < 20) {
    auto& [name, p] = pool[pick(rng)];
    std::uniform_int_distribution<std::size_t> el(0, p->value->size() - 1);
    const std::size_t i = el(rng);
    const double orig = (*p->value)[i];
    const double h = 1e-5;
    (*p->value)[i] = orig + h;
    double up, down;
    {
      ag::Graph g(false);
      up = loss_value(g).value()[0];
    }
    (*p->value)[i] = orig - h;
    {
      ag::Graph g(false);
      down = loss_value(g).value()[0];
    }
    (*p->value)[i] = orig;
    const double num = (up - down) / (2 * h);
    const double a = p->grad[i];
    EXPECT_LE(std::abs(a - num), 1e-3 * std::max({std::abs(a), std::abs(num), 1e-6})) << name << "[" << i << "]";
    seen_pab += name.rfind("pab.", 0) == 0;
    seen_head += name.rfind("head.", 0) == 0;
    seen_msb += name.find(".msb") != std::string::npos;
    ++checked;
  }
  EXPECT_GT(seen_msb, 0);
}

TEST(QualityModel, AblationWiring) {
  const auto preset = desk_preset();
  std::mt19937_64 rng(9);
  const Tensor x = random_image_input(64, 4);
  const Tensor P = random_tensor({4, 96}, rng);
  for (const char* label : {"baseline", "+scl", "+scl+msb", "+scl+msb+pab", "+msb"}) {
    QualityModel m(preset, ModelOptions::parse(label), 1);
    ag::Graph g(false);
    EXPECT_EQ(m.forward(g, g.constant(x), &P).shape(), (Shape{1, 1})) << label;
    EXPECT_EQ(m.backbone() == nullptr, std::string(label) == "baseline") << label;
    EXPECT_EQ(m.pab() != nullptr, std::string(label) == "+scl+msb+pab") << label;
  }
  QualityModel needs_p(preset, ModelOptions::parse("+scl"), 1);
  ag::Graph g(false);
  EXPECT_THROW(needs_p.forward(g, g.constant(x), nullptr), ConfigError);
  ModelOptions none = ModelOptions::parse("+scl+msb");
  none.no_pab_fusion = "none";
  EXPECT_FALSE(QualityModel(preset, none, 1).uses_degradation());
}

TEST(TrainConfig, ShippedFullConfigValues) {
  const auto t = TrainConfig::from_config(load_shipped_config("full.train"));
  EXPECT_DOUBLE_EQ(t.lr, 2e-5);
  EXPECT_DOUBLE_EQ(t.weight_decay, 1e-2);
  EXPECT_EQ(t.schedule, "cosine");
  EXPECT_EQ(t.t_max, 50);
  EXPECT_EQ(t.epochs, 150);
  EXPECT_EQ(t.batch_size, 4);
  EXPECT_EQ(t.n_crops, 8);
  EXPECT_EQ(t.crop_size, 224);
  EXPECT_EQ(TrainConfig::from_config(t.to_config()).to_config().canonical(), t.to_config().canonical());
  KeyValueConfig bad;
  bad.set("schedule", "step");
  EXPECT_THROW(TrainConfig::from_config(bad), ConfigError);
}

class TrainingFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("fusion_train");
    const auto refs = write_procedural_references(dir_->path() / "refs", 3, 80, 4);
    build_synthetic_corpus(refs, synth::parse_family_list("awgn,gaussian_blur"), 5, dir_->path() / "c", 2);
    data_ = new Dataset(load_dataset(dir_->path() / "c" / "manifest.jsonl", Schema::Synthetic));
  }
  static void TearDownTestSuite() {
    delete data_;
    delete dir_;
  }
  static TrainConfig quick() {
    TrainConfig t = TrainConfig::from_config(load_shipped_config("desk.train"));
    t.epochs = 1;
    t.max_steps = 3;
    t.val_every = 0;
    return t;
  }
  static TempDir* dir_;
  static Dataset* data_;
};
TempDir* TrainingFixture::dir_ = nullptr;
Dataset* TrainingFixture::data_ = nullptr;

TEST_F(TrainingFixture, EncoderUntouchedByQualityTraining) {
  const auto preset = desk_preset();
  SclModel enc(preset, 3);
  QualityModel model(preset, ModelOptions{}, 4);
  const auto before_model = module_checksum(model);
  const auto before_enc = module_checksum(enc);
  const auto norm = ScoreNormalizer::fit(data_->samples);
  const auto log = train_quality(model, &enc, data_->samples, norm, quick());
  EXPECT_EQ(module_checksum(enc), before_enc);
  EXPECT_EQ(log.encoder_checksum_before, log.encoder_checksum_after);
  EXPECT_NE(module_checksum(model), before_model);
  EXPECT_EQ(log.step_loss.size(), 3u);
  EXPECT_THROW(train_quality(model, nullptr, data_->samples, norm, quick()), ConfigError);
}

TEST_F(TrainingFixture, FrozenExtractorKeepsTransformerWeights) {
  const auto preset = desk_preset();
  SclModel enc(preset, 3);
  QualityModel model(preset, ModelOptions{}, 4);
  const auto vit_before = module_checksum(model.vit());
  auto cfg = quick();
  cfg.freeze_extractor = true;
  train_quality(model, &enc, data_->samples, ScoreNormalizer::fit(data_->samples), cfg);
  EXPECT_EQ(module_checksum(model.vit()), vit_before);
}

TEST_F(TrainingFixture, PredictionIsPatchMeanAndDeterministic) {
  const auto preset = desk_preset();
  SclModel enc(preset, 3);
  QualityModel model(preset, ModelOptions{}, 4);
  const auto norm = ScoreNormalizer::fit(data_->samples);
  const auto img = load_image(data_->samples[5].path);
  const auto a = predict_image(model, &enc, img, 8, 17, norm);
  ASSERT_EQ(a.patch_scores.size(), 8u);
  double mean = 0;
  for (double s : a.patch_scores) mean += s;
  mean /= 8;
  EXPECT_EQ(a.score, mean);
  const auto b = predict_image(model, &enc, img, 8, 17, norm);
  EXPECT_EQ(a.patch_scores, b.patch_scores);
  const auto one = predict_image(model, &enc, img, 1, 17, norm);
  EXPECT_EQ(one.score, one.patch_scores[0]);
}

TEST_F(TrainingFixture, CheckpointRoundTripPredictsIdentically) {
  const auto preset = desk_preset();
  SclModel enc(preset, 3);
  QualityModel model(preset, ModelOptions{}, 4);
  const auto norm = ScoreNormalizer::fit(data_->samples);
  const auto path = dir_->path() / "q.ckpt";
  save_quality_model(path, model, &enc, norm, {{"note", "unit"}});
  const auto back = load_quality_model(path);
  EXPECT_EQ(module_checksum(*back.model), module_checksum(model));
  EXPECT_EQ(module_checksum(*back.encoder), module_checksum(enc));
  EXPECT_EQ(back.norm.lo, norm.lo);
  const std::vector<IqaSample> few(data_->samples.begin(), data_->samples.begin() + 4);
  EXPECT_EQ(predict_samples(*back.model, back.encoder.get(), few, 2, 5, back.norm),
            predict_samples(model, &enc, few, 2, 5, norm));
}

}  // namespace
