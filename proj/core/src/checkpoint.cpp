#include "satqa/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "satqa/errors.hpp"

namespace satqa {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'T', 'Q', 'A', 'C', 'K', 'P'};

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated checkpoint: " + path.string());
  return v;
}

nlohmann::json read_header(std::istream& in, const std::filesystem::path& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw IoError("not a checkpoint file: " + path.string());
  const auto version = get<std::uint32_t>(in, path);
  if (version != static_cast<std::uint32_t>(kCheckpointFormatVersion)) {
    throw ConfigError("checkpoint format version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kCheckpointFormatVersion) + "): " + path.string());
  }
  const auto len = get<std::uint64_t>(in, path);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated checkpoint header: " + path.string());
  return nlohmann::json::parse(text);
}

}  // namespace

void Checkpoint::add_module(const std::string& prefix, nn::Module& module) {
  for (auto& [name, p] : module.named_parameters()) tensors[prefix + name] = *p->value;
}

void Checkpoint::load_module(const std::string& prefix, nn::Module& module) const {
  for (auto& [name, p] : module.named_parameters()) {
    auto it = tensors.find(prefix + name);
    if (it == tensors.end()) throw ConfigError("checkpoint lacks tensor '" + prefix + name + "'");
    if (it->second.shape() != p->value->shape()) {
      throw ConfigError("checkpoint tensor '" + prefix + name + "' has shape " + shape_str(it->second.shape()) +
                        ", model expects " + shape_str(p->value->shape()));
    }
    *p->value = it->second;
  }
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
  auto it = tensors.lower_bound(prefix);
  return it != tensors.end() && it->first.compare(0, prefix.size(), prefix) == 0;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  nlohmann::json h = header;
  h["format_version"] = kCheckpointFormatVersion;
  const std::string text = h.dump();
  out.write(kMagic, 8);
  put(out, static_cast<std::uint32_t>(kCheckpointFormatVersion));
  put(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put(out, static_cast<std::uint64_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put(out, static_cast<std::int32_t>(d));
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  Checkpoint ck;
  ck.header = read_header(in, path);
  const auto count = get<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto nlen = get<std::uint32_t>(in, path);
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    const auto rank = get<std::uint32_t>(in, path);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(get<std::int32_t>(in, path));
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw IoError("truncated tensor '" + name + "' in " + path.string());
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  return ck;
}

nlohmann::json Checkpoint::peek_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  return read_header(in, path);
}

std::uint64_t module_checksum(nn::Module& module) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto& [name, p] : module.named_parameters()) {
    h = fnv1a(name.data(), name.size(), h);
    h = tensor_hash(*p->value, h);
  }
  return h;
}

std::uint64_t file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[65536];
  while (in) {
    in.read(buf, sizeof buf);
    h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
  }
  return h;
}

}  // namespace satqa
