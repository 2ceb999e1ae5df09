#include "satqa/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "satqa/config.hpp"
#include "satqa/corpus.hpp"
#include "satqa/errors.hpp"

namespace satqa {

Schema parse_schema(const std::string& s) {
  if (s == "synthetic") return Schema::Synthetic;
  if (s == "csv") return Schema::Csv;
  throw ConfigError("unknown dataset schema '" + s + "' (expected synthetic or csv)");
}

std::string schema_name(Schema s) { return s == Schema::Synthetic ? "synthetic" : "csv"; }

std::string polarity_name(Polarity p) { return p == Polarity::HigherIsBetter ? "higher_is_better" : "lower_is_better"; }

Polarity parse_polarity(const std::string& s) {
  if (s == "higher_is_better" || s == "mos") return Polarity::HigherIsBetter;
  if (s == "lower_is_better" || s == "dmos") return Polarity::LowerIsBetter;
  throw ConfigError("unknown score polarity '" + s + "' (expected higher_is_better or lower_is_better)");
}

namespace {

void check_files(const std::vector<IqaSample>& samples, const std::filesystem::path& manifest) {
  std::vector<std::string> missing;
  for (const auto& s : samples)
    if (!std::filesystem::is_regular_file(s.path)) missing.push_back(s.path.string());
  if (missing.empty()) return;
  std::string msg = std::to_string(missing.size()) + " image(s) listed in " + manifest.string() + " are missing:";
  for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += "\n  " + missing[i];
  if (missing.size() > 20) msg += "\n  ...";
  throw IoError(msg);
}

Dataset load_synthetic(const std::filesystem::path& path, Polarity polarity) {
  const auto m = CorpusManifest::load(path);
  Dataset d;
  d.schema = Schema::Synthetic;
  d.polarity = polarity;
  d.root = m.root;
  for (const auto& r : m.records) {
    IqaSample s;
    s.path = m.resolve(r);
    s.image_id = r.path;
    s.score = r.score;
    s.polarity = polarity;
    s.reference_id = r.reference_id;
    s.family = r.label.family;
    s.level = r.label.level;
    s.category = r.label.category;
    s.family_name = r.family_name;
    d.samples.push_back(std::move(s));
  }
  return d;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, ',')) {
    const auto a = cur.find_first_not_of(" \t\r");
    const auto b = cur.find_last_not_of(" \t\r");
    out.push_back(a == std::string::npos ? "" : cur.substr(a, b - a + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

Dataset load_csv(const std::filesystem::path& path, Polarity polarity) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read dataset: " + path.string());
  Dataset d;
  d.schema = Schema::Csv;
  d.polarity = polarity;
  d.root = path.parent_path();
  std::string line;
  int lineno = 0;
  int col_path = -1, col_score = -1, col_ref = -1;
  std::size_t ncols = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (col_path < 0) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i] == "path") col_path = static_cast<int>(i);
        if (cells[i] == "score") col_score = static_cast<int>(i);
        if (cells[i] == "reference_id") col_ref = static_cast<int>(i);
      }
      if (col_path < 0 || col_score < 0) throw ConfigError(where + ": header must contain path and score columns");
      ncols = cells.size();
      continue;
    }
    if (cells.size() != ncols) {
      throw ConfigError(where + ": expected " + std::to_string(ncols) + " columns, found " + std::to_string(cells.size()));
    }
    IqaSample s;
    s.image_id = cells[static_cast<std::size_t>(col_path)];
    if (s.image_id.empty()) throw ConfigError(where + ": empty path");
    s.path = d.root / s.image_id;
    const std::string& sc = cells[static_cast<std::size_t>(col_score)];
    char* end = nullptr;
    s.score = std::strtod(sc.c_str(), &end);
    if (sc.empty() || end != sc.c_str() + sc.size() || !std::isfinite(s.score)) {
      throw ConfigError(where + ": score '" + sc + "' is not a finite number");
    }
    s.polarity = polarity;
    if (col_ref >= 0 && !cells[static_cast<std::size_t>(col_ref)].empty())
      s.reference_id = cells[static_cast<std::size_t>(col_ref)];
    d.samples.push_back(std::move(s));
  }
  if (col_path < 0) throw ConfigError(path.string() + ": empty dataset file");
  return d;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& manifest, Schema schema, Polarity polarity) {
  Dataset d = schema == Schema::Synthetic ? load_synthetic(manifest, polarity) : load_csv(manifest, polarity);
  d.name = manifest.parent_path().filename().string();
  if (d.name.empty()) d.name = manifest.stem().string();
  if (d.samples.empty()) throw InsufficientDataError("dataset " + manifest.string() + " has no samples");
  check_files(d.samples, manifest);
  return d;
}

void write_dataset_csv(const std::vector<IqaSample>& samples, const std::filesystem::path& root,
                       const std::filesystem::path& out) {
  std::ofstream f(out);
  if (!f) throw IoError("cannot write " + out.string());
  f << "path,score,reference_id\n";
  f.precision(17);
  for (const auto& s : samples) {
    const auto rel = std::filesystem::relative(s.path, root).generic_string();
    if (rel.find(',') != std::string::npos) throw ConfigError("path contains a comma: " + rel);
    f << rel << ',' << s.score << ',' << (s.reference_id ? *s.reference_id : "") << '\n';
  }
}

namespace {

std::vector<std::string> unique_keys(const std::vector<IqaSample>& samples) {
  std::set<std::string> keys;
  for (const auto& s : samples) keys.insert(s.split_key());
  return {keys.begin(), keys.end()};
}

std::vector<std::string> permuted(std::vector<std::string> keys, std::uint64_t seed) {
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle.
  for (std::size_t i = keys.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(keys[i - 1], keys[pick(rng)]);
  }
  return keys;
}

}  // namespace

std::pair<std::vector<IqaSample>, std::vector<IqaSample>> split_by_reference(const std::vector<IqaSample>& samples,
                                                                             const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw DomainError("train fraction must lie in (0, 1), got " + std::to_string(spec.train_fraction));
  }
  const auto keys = permuted(unique_keys(samples), spec.seed);
  const int groups = static_cast<int>(keys.size());
  int n_train = static_cast<int>(std::lround(spec.train_fraction * groups));
  if (groups >= 2) n_train = std::clamp(n_train, 1, groups - 1);
  const std::set<std::string> train_keys(keys.begin(), keys.begin() + n_train);
  std::pair<std::vector<IqaSample>, std::vector<IqaSample>> out;
  for (const auto& s : samples) (train_keys.count(s.split_key()) ? out.first : out.second).push_back(s);
  return out;
}

std::vector<std::string> nested_key_subset(const std::vector<std::string>& keys, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw DomainError("data fraction must lie in (0, 1]");
  auto order = permuted(keys, seed);
  const auto n = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(order.size()) - 1e-9));
  order.resize(std::max<std::size_t>(1, n));
  return order;
}

RgbImage ensure_min_side(const RgbImage& image, int size) {
  const int s = std::min(image.height(), image.width());
  if (s >= size) return image;
  const double f = static_cast<double>(size) / s;
  const int h = std::max(size, static_cast<int>(std::lround(image.height() * f)));
  const int w = std::max(size, static_cast<int>(std::lround(image.width() * f)));
  return resize_bicubic(image, h, w);
}

PatchBatch sample_patches(const RgbImage& image, int n, int size, std::uint64_t seed, bool flip, double score,
                          const std::string& source_id) {
  if (n < 1) throw DomainError("patch count must be >= 1");
  if (size < 1) throw DomainError("patch size must be >= 1");
  if (image.empty()) throw DomainError("cannot crop an empty image");
  const RgbImage src = ensure_min_side(image, size);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> top(0, src.height() - size), left(0, src.width() - size);
  std::bernoulli_distribution coin(0.5);
  PatchBatch b;
  b.size = size;
  for (int i = 0; i < n; ++i) {
    CropBox box;
    box.top = top(rng);
    box.left = left(rng);
    box.flipped = flip && coin(rng);
    RgbImage p = crop(src, box.top, box.left, size, size);
    if (box.flipped) p = flip_horizontal(p);
    b.patches.push_back(std::move(p));
    b.scores.push_back(score);
    b.source_ids.push_back(source_id);
    b.boxes.push_back(box);
  }
  return b;
}

RgbImage contrastive_view(const RgbImage& image, int size, std::uint64_t seed) {
  const RgbImage src = ensure_min_side(image, size);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> top(0, src.height() - size), left(0, src.width() - size);
  std::bernoulli_distribution coin(0.5);
  const int t = top(rng), l = left(rng);
  RgbImage p = crop(src, t, l, size, size);
  if (coin(rng)) p = flip_horizontal(p);
  if (coin(rng)) p = flip_vertical(p);
  return p;
}

ScoreNormalizer ScoreNormalizer::fit(const std::vector<IqaSample>& samples) {
  if (samples.empty()) throw InsufficientDataError("cannot fit a score range on zero samples");
  ScoreNormalizer n{samples.front().score, samples.front().score};
  for (const auto& s : samples) {
    n.lo = std::min(n.lo, s.score);
    n.hi = std::max(n.hi, s.score);
  }
  if (n.hi - n.lo < 1e-12) n.hi = n.lo + 1.0;
  return n;
}

}  // namespace satqa
