#include "satqa/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "satqa/errors.hpp"
#include "satqa/image.hpp"
#include "satqa/tensor.hpp"

namespace satqa {

using nlohmann::json;

double pseudo_mos_from_psnr(double psnr) {
  if (std::isinf(psnr)) return 100.0;
  return 100.0 * std::clamp((psnr - 15.0) / 30.0, 0.0, 1.0);
}

void CorpusManifest::validate() const {
  if (U < 1 || V < 1) throw ConfigError("manifest header needs U >= 1 and V >= 1");
  if (static_cast<int>(families.size()) != U) {
    throw ConfigError("manifest lists " + std::to_string(families.size()) + " families but U = " + std::to_string(U));
  }
  std::set<std::string> refs;
  for (const auto& r : records)
    if (r.label.is_reference()) {
      if (!refs.insert(r.reference_id).second) throw ConfigError("duplicate reference record '" + r.reference_id + "'");
    }
  std::set<std::tuple<std::string, int, int>> seen;
  for (const auto& r : records) {
    if (r.label.is_reference()) {
      if (r.label.family != 0 || r.label.level != 0)
        throw ConfigError("reference record '" + r.path + "' carries a family/level");
      continue;
    }
    if (!refs.count(r.reference_id))
      throw ConfigError("record '" + r.path + "' references unknown reference id '" + r.reference_id + "'");
    if (r.label.family > U) throw ConfigError("record '" + r.path + "' family exceeds U");
    if (r.label.category != synth::category_index(false, r.label.family, r.label.level, V))
      throw ConfigError("record '" + r.path + "' has inconsistent category " + std::to_string(r.label.category));
    if (!seen.emplace(r.reference_id, r.label.family, r.label.level).second)
      throw ConfigError("duplicate (reference, family, level) for '" + r.path + "'");
  }
}

std::string CorpusManifest::to_jsonl() const {
  std::ostringstream out;
  json h = {{"type", "header"}, {"U", U}, {"V", V}, {"generator_version", generator_version},
            {"families", families}, {"seed", seed}, {"records", records.size()}};
  out << h.dump() << '\n';
  for (const auto& r : records) {
    json j = {{"path", r.path},
              {"family", r.label.family},
              {"level", r.label.level},
              {"category", r.label.category},
              {"reference_id", r.reference_id},
              {"seed", r.seed},
              {"family_name", r.family_name},
              {"score", r.score}};
    j["psnr"] = r.psnr ? json(*r.psnr) : json(nullptr);
    out << j.dump() << '\n';
  }
  return out.str();
}

CorpusManifest CorpusManifest::parse(const std::string& text, const std::filesystem::path& root,
                                     const std::string& origin) {
  CorpusManifest m;
  m.root = root;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ConfigError(where + ": malformed JSON (" + e.what() + ")");
    }
    try {
      if (j.value("type", "") == "header") {
        m.U = j.at("U").get<int>();
        m.V = j.at("V").get<int>();
        m.generator_version = j.at("generator_version").get<std::string>();
        m.families = j.value("families", std::vector<std::string>{});
        m.seed = j.value("seed", std::uint64_t{0});
        have_header = true;
        continue;
      }
      CorpusRecord r;
      r.path = j.at("path").get<std::string>();
      r.label.family = j.at("family").get<int>();
      r.label.level = j.at("level").get<int>();
      r.label.category = j.at("category").get<int>();
      r.reference_id = j.at("reference_id").get<std::string>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.family_name = j.value("family_name", "");
      if (j.contains("score")) {
        if (!j["score"].is_number()) throw ConfigError(where + ": score is not numeric");
        r.score = j["score"].get<double>();
      }
      if (j.contains("psnr") && j["psnr"].is_number()) r.psnr = j["psnr"].get<double>();
      m.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  if (!have_header) throw ConfigError(origin + ": manifest has no header record");
  m.validate();
  return m;
}

CorpusManifest CorpusManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.parent_path(), path.string());
}

void CorpusManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  out << to_jsonl();
  if (!out) throw IoError("failed writing manifest: " + path.string());
}

std::uint64_t CorpusManifest::hash() const {
  const std::string s = to_jsonl();
  return fnv1a(s.data(), s.size());
}

std::vector<std::string> CorpusManifest::reference_ids() const {
  std::vector<std::string> out;
  for (const auto& r : records)
    if (r.label.is_reference()) out.push_back(r.reference_id);
  return out;
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".ppm") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::filesystem::path> write_procedural_references(const std::filesystem::path& dir, int count, int size,
                                                               std::uint64_t seed) {
  if (count < 1 || size < 8) throw DomainError("reference count must be >= 1 and size >= 8");
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> out;
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "ref_%04d.png", i);
    const auto p = dir / name;
    save_png(synth::generate_reference(size, size, synth::derive_seed(seed, static_cast<std::uint64_t>(i))), p);
    out.push_back(p);
  }
  return out;
}

CorpusManifest build_synthetic_corpus(const std::vector<std::filesystem::path>& references,
                                      const std::vector<synth::DistortionSpec>& families, int levels,
                                      const std::filesystem::path& out_dir, std::uint64_t seed, bool force) {
  if (references.size() < 2) throw DomainError("corpus needs at least 2 reference images");
  if (families.empty()) throw DomainError("corpus needs at least 1 distortion family");
  if (levels < 1) throw DomainError("number of levels must be >= 1");

  const auto manifest_path = out_dir / "manifest.jsonl";
  if (std::filesystem::exists(manifest_path) && !force) {
    throw IoError("refusing to overwrite existing corpus at " + manifest_path.string() + " (use force)");
  }
  const auto image_dir = out_dir / "images";
  std::filesystem::create_directories(image_dir);

  std::vector<synth::DistortionSpec> bank;
  for (const auto& f : families) bank.push_back(f.levels() == levels ? f : f.resampled(levels));

  CorpusManifest m;
  m.root = out_dir;
  m.U = static_cast<int>(bank.size());
  m.V = levels;
  m.seed = seed;
  for (const auto& f : bank) m.families.push_back(f.name);

  for (std::size_t i = 0; i < references.size(); ++i) {
    // Decode through the 8-bit grid so that the stored reference is exactly
    // what the distortions were applied to.
    const RgbImage ref = quantize8(load_image(references[i]));
    char id[32];
    std::snprintf(id, sizeof id, "ref_%04zu", i);
    const std::string ref_name = std::string(id) + ".png";
    save_png(ref, image_dir / ref_name);
    CorpusRecord rr;
    rr.path = "images/" + ref_name;
    rr.reference_id = id;
    rr.seed = synth::derive_seed(seed, i);
    m.records.push_back(rr);

    for (int u = 1; u <= m.U; ++u) {
      const auto& spec = bank[static_cast<std::size_t>(u - 1)];
      for (int v = 1; v <= levels; ++v) {
        const std::uint64_t s = synth::derive_seed(seed, i, static_cast<std::uint64_t>(u), static_cast<std::uint64_t>(v));
        RgbImage d = synth::apply_distortion(ref, spec, v, s);
        const bool lossy = spec.kind == synth::DistortionKind::Jpeg;
        const std::string name = std::string(id) + "_" + spec.name + "_" + std::to_string(v) + (lossy ? ".jpg" : ".png");
        const auto path = image_dir / name;
        if (lossy) {
          // The distortion already produced the decoded JPEG; store the exact
          // lossy artifact rather than re-encoding.
          save_bytes(encode_jpeg(ref, static_cast<int>(spec.params[static_cast<std::size_t>(v - 1)])), path);
          d = load_image(path);
        } else {
          d = quantize8(d);
          save_png(d, path);
        }
        CorpusRecord r;
        r.path = "images/" + name;
        r.label = synth::DistortionLabel::distorted(u, v, levels);
        r.reference_id = id;
        r.seed = s;
        r.family_name = spec.name;
        r.psnr = psnr(ref, d);
        r.score = pseudo_mos_from_psnr(*r.psnr);
        m.records.push_back(std::move(r));
      }
    }
  }
  m.validate();
  m.save(manifest_path);
  return m;
}

}  // namespace satqa
