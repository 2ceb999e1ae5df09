#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "satqa/corpus.hpp"
#include "satqa/distortion.hpp"
#include "satqa/errors.hpp"
#include "tmpdir.hpp"

using namespace satqa;
using namespace satqa::synth;

namespace {

// Independent PSNR: explicit double loop over every channel sample.
double oracle_psnr(const RgbImage& a, const RgbImage& b) {
  double s = 0.0;
  long n = 0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        const double d = static_cast<double>(a.at(y, x, c)) - static_cast<double>(b.at(y, x, c));
        s += d * d;
        ++n;
      }
  const double m = s / static_cast<double>(n);
  return m == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / m);
}

std::vector<RgbImage> calibration_set(int count, int size) {
  std::vector<RgbImage> out;
  for (int i = 0; i < count; ++i) out.push_back(quantize8(generate_reference(size, size, 500 + i)));
  return out;
}

TEST(Distortion, CategoryIndexing) {
  EXPECT_EQ(category_index(true, 0, 0, 5), 0);
  EXPECT_EQ(category_index(false, 1, 1, 5), 1);
  EXPECT_EQ(category_index(false, 25, 5, 5), 125);
  EXPECT_EQ(category_count(25, 5), 126);
  EXPECT_THROW(category_index(false, 1, 6, 5), DomainError);
  EXPECT_THROW(category_index(false, 1, 0, 5), DomainError);
  EXPECT_THROW(category_index(false, 0, 1, 5), DomainError);
}

TEST(Distortion, BankIsCalibratedAndMonotone) {
  const auto bank = default_bank();
  ASSERT_EQ(bank.size(), 6u);
  for (const auto& f : bank) {
    EXPECT_EQ(f.levels(), 5) << f.name;
    EXPECT_NO_THROW(f.validate()) << f.name;
  }
  DistortionSpec bad = find_family("gaussian_blur");
  bad.params = {1.0, 0.5, 2.0};
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(find_family("motion_blur"), ConfigError);
  EXPECT_THROW(parse_family_list("awgn,awgn"), ConfigError);
}

TEST(Distortion, PsnrStrictlyDecreasesWithLevel) {
  const auto refs = calibration_set(10, 64);
  for (const auto& f : default_bank()) {
    double prev = std::numeric_limits<double>::infinity();
    for (int v = 1; v <= f.levels(); ++v) {
      double mean = 0.0;
      for (std::size_t i = 0; i < refs.size(); ++i) {
        mean += oracle_psnr(refs[i], apply_distortion(refs[i], f, v, derive_seed(7, i, v))) / refs.size();
      }
      EXPECT_LT(mean, prev) << f.name << " level " << v;
      prev = mean;
    }
  }
}

TEST(Distortion, PsnrHelperMatchesOracle) {
  const auto refs = calibration_set(2, 48);
  const auto d = apply_distortion(refs[0], find_family("awgn"), 3, 11);
  EXPECT_NEAR(psnr(refs[0], d), oracle_psnr(refs[0], d), 1e-9);
}

TEST(Distortion, ZeroWidthBlurIsIdentity) {
  const auto img = generate_reference(32, 40, 3);
  DistortionSpec blur = find_family("gaussian_blur");
  blur.params = {0.0};
  EXPECT_EQ(apply_distortion(img, blur, 1, 0), img);
}

TEST(Distortion, ShapeClampAndDeterminism) {
  const auto img = generate_reference(33, 47, 9);
  for (const auto& f : default_bank()) {
    const auto a = apply_distortion(img, f, 5, 42);
    const auto b = apply_distortion(img, f, 5, 42);
    EXPECT_EQ(a.height(), img.height());
    EXPECT_EQ(a.width(), img.width());
    EXPECT_EQ(a, b) << f.name;
    for (float p : a.pixels()) {
      ASSERT_GE(p, 0.0f);
      ASSERT_LE(p, 1.0f);
    }
  }
  const auto n1 = apply_distortion(img, find_family("awgn"), 2, 1);
  const auto n2 = apply_distortion(img, find_family("awgn"), 2, 2);
  EXPECT_NE(n1, n2);
}

TEST(Distortion, LevelOutOfRange) {
  const auto img = generate_reference(16, 16, 1);
  EXPECT_THROW(apply_distortion(img, find_family("jpeg"), 0, 0), DomainError);
  EXPECT_THROW(apply_distortion(img, find_family("jpeg"), 6, 0), DomainError);
}

TEST(Distortion, ResampledTableKeepsRangeAndOrder) {
  for (const auto& f : default_bank()) {
    const auto r = f.resampled(9);
    EXPECT_EQ(r.levels(), 9);
    EXPECT_NO_THROW(r.validate()) << f.name;
    EXPECT_DOUBLE_EQ(r.params.front(), f.params.front());
    EXPECT_DOUBLE_EQ(r.params.back(), f.params.back());
  }
}

TEST(Corpus, TwentyFiveFamiliesGiveEveryCategory) {
  TempDir dir("corpus25");
  const auto refs = write_procedural_references(dir.path() / "refs", 2, 24, 5);
  std::vector<DistortionSpec> fams;
  const auto bank = default_bank();
  for (int u = 0; u < 25; ++u) {
    DistortionSpec s = bank[static_cast<std::size_t>(u) % bank.size()];
    s.name += "_" + std::to_string(u);
    fams.push_back(s);
  }
  const auto m = build_synthetic_corpus(refs, fams, 5, dir.path() / "out", 1);
  ASSERT_EQ(m.records.size(), 2u * 126u);
  std::set<int> cats;
  for (const auto& r : m.records) cats.insert(r.label.category);
  EXPECT_EQ(cats.size(), 126u);
  EXPECT_EQ(*cats.begin(), 0);
  EXPECT_EQ(*cats.rbegin(), 125);
}

TEST(Corpus, DeskCorpusCountsAndRoundTrip) {
  TempDir dir("corpus_desk");
  const auto refs = write_procedural_references(dir.path() / "refs", 3, 32, 2);
  const auto m = build_synthetic_corpus(refs, default_bank(), 5, dir.path() / "out", 4);
  EXPECT_EQ(m.records.size(), 3u * (6u * 5u + 1u));
  EXPECT_NO_THROW(m.validate());
  const auto back = CorpusManifest::load(dir.path() / "out" / "manifest.jsonl");
  EXPECT_EQ(back.records.size(), m.records.size());
  EXPECT_EQ(back.hash(), m.hash());
  for (const auto& r : back.records) {
    EXPECT_TRUE(std::filesystem::exists(back.resolve(r))) << r.path;
    if (!r.label.is_reference()) {
      ASSERT_TRUE(r.psnr.has_value());
      EXPECT_NEAR(r.score, pseudo_mos_from_psnr(*r.psnr), 1e-12);
    }
  }
  EXPECT_THROW(build_synthetic_corpus(refs, default_bank(), 5, dir.path() / "out", 4), IoError);
  EXPECT_NO_THROW(build_synthetic_corpus(refs, default_bank(), 5, dir.path() / "out", 4, true));
}

TEST(Corpus, RebuildIsBitIdentical) {
  TempDir dir("corpus_rebuild");
  const auto refs = write_procedural_references(dir.path() / "refs", 2, 24, 8);
  const auto a = build_synthetic_corpus(refs, default_bank(), 5, dir.path() / "a", 3);
  const auto b = build_synthetic_corpus(refs, default_bank(), 5, dir.path() / "b", 3);
  EXPECT_EQ(a.to_jsonl(), b.to_jsonl());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(load_image(a.resolve(a.records[i])), load_image(b.resolve(b.records[i])));
  }
}

TEST(Corpus, ManifestErrorsNameTheLine) {
  const std::string header =
      R"({"type":"header","U":1,"V":5,"generator_version":"satqa-synth/1","families":["awgn"],"seed":0,"records":1})";
  try {
    CorpusManifest::parse(header + "\n{\"path\": 3}\n", "/tmp", "m.jsonl");
    FAIL() << "expected a configuration error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("m.jsonl:2"), std::string::npos) << e.what();
  }
}

}  // namespace
