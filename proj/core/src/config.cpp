#include "satqa/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "satqa/errors.hpp"
#include "satqa/tensor.hpp"

namespace satqa {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> split_trim(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

int parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return static_cast<int>(v);
  } catch (const std::exception&) {
    throw ConfigError(what + ": expected an integer, got '" + s + "'");
  }
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(what + ": expected a number, got '" + s + "'");
  }
}

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (cfg.has(key)) throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    cfg.values_[key] = trim(line.substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void KeyValueConfig::merge(const KeyValueConfig& overrides) {
  for (const auto& [k, v] : overrides.values_) values_[k] = v;
}

std::string KeyValueConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(origin_ + ": missing key '" + key + "'");
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int KeyValueConfig::get_int(const std::string& key) const { return parse_int(get_string(key), origin_ + ": " + key); }

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  return has(key) ? get_int(key) : fallback;
}

double KeyValueConfig::get_double(const std::string& key) const {
  return parse_double(get_string(key), origin_ + ": " + key);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  std::string v = get_string(key);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError(origin_ + ": " + key + ": expected a boolean, got '" + v + "'");
}

std::vector<int> KeyValueConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  for (const auto& piece : split_trim(get_string(key), ',')) out.push_back(parse_int(piece, origin_ + ": " + key));
  return out;
}

std::vector<double> KeyValueConfig::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& piece : split_trim(get_string(key), ',')) out.push_back(parse_double(piece, origin_ + ": " + key));
  return out;
}

std::vector<std::string> KeyValueConfig::get_list(const std::string& key) const {
  return split_trim(get_string(key), ',');
}

std::string KeyValueConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t KeyValueConfig::hash() const {
  const std::string c = canonical();
  return fnv1a(c.data(), c.size());
}

// ---- branches ------------------------------------------------------------------

BranchSet BranchSet::parse(const std::string& text) {
  BranchSet b{false, false, false};
  const char sep = text.find('+') != std::string::npos ? '+' : ',';
  for (std::string tok : split_trim(text, sep)) {
    std::transform(tok.begin(), tok.end(), tok.begin(), [](unsigned char c) { return std::tolower(c); });
    if (tok == "df" || tok == "deform")
      b.deform = true;
    else if (tok == "dw" || tok == "depthwise")
      b.depthwise = true;
    else if (tok == "ma" || tok == "attention" || tok == "mhsa")
      b.attention = true;
    else
      throw ConfigError("unknown Multi-Stream Block branch '" + tok + "'");
  }
  if (b.count() == 0) throw ConfigError("at least one Multi-Stream Block branch must be enabled");
  return b;
}

std::string BranchSet::label() const {
  std::vector<std::string> parts;
  if (attention) parts.emplace_back("MA");
  if (deform) parts.emplace_back("DF");
  if (depthwise) parts.emplace_back("DW");
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "+" : "") + parts[i];
  return out;
}

// ---- presets ---------------------------------------------------------------------

namespace {

template <std::size_t N>
std::array<int, N> fixed_list(const KeyValueConfig& cfg, const std::string& key) {
  const auto v = cfg.get_int_list(key);
  if (v.size() != N) throw ConfigError("preset key '" + key + "' needs " + std::to_string(N) + " entries");
  std::array<int, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

}  // namespace

ModelPreset ModelPreset::from_config(const KeyValueConfig& cfg) {
  ModelPreset p;
  p.name = cfg.get_string("name", "custom");
  p.input_size = cfg.get_int("input_size");
  p.patch_size = cfg.get_int("patch_size");
  p.vit_width = cfg.get_int("vit_width");
  p.vit_depth = cfg.get_int("vit_depth");
  p.vit_heads = cfg.get_int("vit_heads", 4);
  p.mlp_ratio = cfg.get_int("mlp_ratio", 4);
  p.tap_layers = cfg.get_int_list("tap_layers");
  p.D = cfg.get_int("D");
  const auto stages = split_trim(cfg.get_string("stage_splits"), ';');
  if (stages.size() != 3) throw ConfigError("stage_splits needs three ';'-separated stages");
  for (std::size_t s = 0; s < 3; ++s) {
    KeyValueConfig one;
    one.set("stage", stages[s]);
    p.stage_splits[s] = fixed_list<3>(one, "stage");
  }
  p.heads = cfg.get_int("heads");
  p.branches = BranchSet::parse(cfg.get_string("branches", "deform,depthwise,attention"));
  p.cbam_reduction = cfg.get_int("cbam_reduction", 16);
  p.pab_heads = cfg.get_int("pab_heads", 1);
  p.encoder_stem = cfg.get_int("encoder_stem", 32);
  p.encoder_stem_stride = cfg.get_int("encoder_stem_stride", 2);
  p.encoder_widths = fixed_list<4>(cfg, "encoder_widths");
  p.encoder_blocks = fixed_list<4>(cfg, "encoder_blocks");
  p.proj_dim = cfg.get_int("proj_dim", 128);
  p.proj_hidden = cfg.get_int("proj_hidden", 0);
  p.validate();
  return p;
}

ModelPreset ModelPreset::load(const std::filesystem::path& path) { return from_config(KeyValueConfig::load(path)); }

KeyValueConfig ModelPreset::to_config() const {
  KeyValueConfig c;
  c.set("name", name);
  c.set("input_size", std::to_string(input_size));
  c.set("patch_size", std::to_string(patch_size));
  c.set("vit_width", std::to_string(vit_width));
  c.set("vit_depth", std::to_string(vit_depth));
  c.set("vit_heads", std::to_string(vit_heads));
  c.set("mlp_ratio", std::to_string(mlp_ratio));
  c.set("tap_layers", join(tap_layers));
  c.set("D", std::to_string(D));
  std::string splits;
  for (std::size_t s = 0; s < 3; ++s)
    splits += (s ? "; " : "") + join({stage_splits[s][0], stage_splits[s][1], stage_splits[s][2]});
  c.set("stage_splits", splits);
  c.set("heads", std::to_string(heads));
  c.set("branches", branches.label());
  c.set("cbam_reduction", std::to_string(cbam_reduction));
  c.set("pab_heads", std::to_string(pab_heads));
  c.set("encoder_stem", std::to_string(encoder_stem));
  c.set("encoder_stem_stride", std::to_string(encoder_stem_stride));
  c.set("encoder_widths", join({encoder_widths.begin(), encoder_widths.end()}));
  c.set("encoder_blocks", join({encoder_blocks.begin(), encoder_blocks.end()}));
  c.set("proj_dim", std::to_string(proj_dim));
  c.set("proj_hidden", std::to_string(proj_hidden));
  return c;
}

int ModelPreset::max_tap() const { return *std::max_element(tap_layers.begin(), tap_layers.end()); }

void ModelPreset::validate() const {
  auto fail = [&](const std::string& why) { throw ConfigError("preset '" + name + "': " + why); };
  if (patch_size <= 0 || input_size <= 0) fail("input_size and patch_size must be positive");
  if (input_size % patch_size != 0) {
    fail("input size " + std::to_string(input_size) + " is not a multiple of patch size " + std::to_string(patch_size));
  }
  const int g = grid();
  if (g % 2 != 0 || (g / 2) % 2 != 0) {
    fail("token grid " + std::to_string(g) + " must stay even through two halvings");
  }
  if (tap_layers.empty()) fail("tap_layers is empty");
  for (int t : tap_layers)
    if (t < 1 || t > vit_depth) fail("tap layer " + std::to_string(t) + " outside 1.." + std::to_string(vit_depth));
  if (vit_heads <= 0 || vit_width % vit_heads != 0) fail("vit_width must be divisible by vit_heads");
  if (D <= 0 || D % 4 != 0) fail("D must be a positive multiple of 4 (four encoder stages share it)");
  for (std::size_t s = 0; s < 3; ++s) {
    const auto& sp = stage_splits[s];
    if (sp[0] + sp[1] + sp[2] != D) {
      fail("stage " + std::to_string(s + 1) + " split " + std::to_string(sp[0]) + "+" + std::to_string(sp[1]) + "+" +
           std::to_string(sp[2]) + " does not sum to D=" + std::to_string(D));
    }
    if (sp[2] % heads != 0) fail("attention width of stage " + std::to_string(s + 1) + " not divisible by heads");
  }
  if (heads <= 0 || D % heads != 0) fail("D must be divisible by the attention heads");
  if (pab_heads <= 0 || D % pab_heads != 0) fail("D must be divisible by pab_heads");
  if (branches.count() == 0) fail("no Multi-Stream Block branch enabled");
  for (int w : encoder_widths)
    if (w <= 0) fail("encoder widths must be positive");
  for (int b : encoder_blocks)
    if (b <= 0) fail("encoder blocks must be positive");
  if (encoder_stem <= 0) fail("encoder_stem must be positive");
  if (encoder_stem_stride != 1 && encoder_stem_stride != 2) fail("encoder_stem_stride must be 1 or 2");
  // Stem (stride 2 plus a 2x2 pool, or stride 1 alone) and three stride-2
  // stages; the last stage must still cover the final token grid.
  if (input_size / (encoder_stem_stride == 2 ? 32 : 8) < final_grid())
    fail("encoder output grid smaller than the final token grid");
  if (proj_dim <= 0) fail("proj_dim must be positive");
}

std::filesystem::path resolve_preset(const std::string& name_or_path) {
  std::filesystem::path p(name_or_path);
  if (std::filesystem::is_regular_file(p)) return p;
  std::vector<std::filesystem::path> roots;
  if (const char* env = std::getenv("SATQA_PRESET_DIR")) roots.emplace_back(env);
#ifdef SATQA_DEFAULT_PRESET_DIR
  roots.emplace_back(SATQA_DEFAULT_PRESET_DIR);
#endif
  roots.emplace_back("presets");
  for (const auto& r : roots) {
    auto candidate = r / (name_or_path + ".preset");
    if (std::filesystem::is_regular_file(candidate)) return candidate;
  }
  throw ConfigError("preset '" + name_or_path + "' not found (set SATQA_PRESET_DIR or pass a path)");
}

}  // namespace satqa
