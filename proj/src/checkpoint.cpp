#include "bret/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace bret {

namespace {

constexpr const char* kMagic = "bretckpt\t1";

static_assert(sizeof(float) == 4, "float must be 32-bit");

void write_f32_le(std::ofstream& out, const std::vector<float>& data) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * 4));
  } else {
    for (float v : data) {
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      char b[4] = {static_cast<char>(bits), static_cast<char>(bits >> 8),
                   static_cast<char>(bits >> 16), static_cast<char>(bits >> 24)};
      out.write(b, 4);
    }
  }
}

void read_f32_le(std::ifstream& in, std::vector<float>& data) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * 4));
  } else {
    for (auto& v : data) {
      unsigned char b[4];
      in.read(reinterpret_cast<char*>(b), 4);
      const uint32_t bits = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                            (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
      std::memcpy(&v, &bits, 4);
    }
  }
}

}  // namespace

const NamedTensor* ModelCheckpoint::find(const std::string& name) const {
  for (const auto& t : params)
    if (t.name == name) return &t;
  return nullptr;
}

long long ModelCheckpoint::total_values() const {
  long long n = 0;
  for (const auto& t : params) n += numel(t.shape);
  return n;
}

void save_checkpoint(const std::string& path, const ModelCheckpoint& ckpt) {
  nlohmann::json manifest;
  manifest["config"] = ckpt.config;
  manifest["seed"] = ckpt.seed;
  auto& plist = manifest["params"] = nlohmann::json::array();
  for (const auto& t : ckpt.params) {
    if (static_cast<long long>(t.data.size()) != numel(t.shape))
      throw std::runtime_error("checkpoint: parameter '" + t.name + "' data length " +
                               std::to_string(t.data.size()) + " does not match shape " +
                               shape_str(t.shape));
    plist.push_back({{"name", t.name}, {"shape", t.shape}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << kMagic << '\n' << manifest.dump() << '\n';
  for (const auto& t : ckpt.params) write_f32_le(out, t.data);
  if (!out) throw std::runtime_error(path + ": write failed");
}

ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  std::string magic, manifest_line;
  if (!std::getline(in, magic) || magic != kMagic)
    throw std::runtime_error(path + ": not a checkpoint or unsupported version (expected '" +
                             std::string(kMagic) + "')");
  if (!std::getline(in, manifest_line)) throw std::runtime_error(path + ": missing manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": manifest parse error: " + e.what());
  }
  if (!manifest.contains("config") || !manifest.contains("params") || !manifest.contains("seed"))
    throw std::runtime_error(path + ": manifest missing config/params/seed");
  ModelCheckpoint ckpt;
  ckpt.config = manifest["config"];
  ckpt.seed = manifest["seed"].get<uint64_t>();
  for (const auto& entry : manifest["params"]) {
    NamedTensor t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<Shape>();
    const long long count = numel(t.shape);
    if (count <= 0) throw std::runtime_error(path + ": invalid shape for '" + t.name + "'");
    t.data.resize(static_cast<size_t>(count));
    read_f32_le(in, t.data);
    if (!in)
      throw std::runtime_error(path + ": truncated blob while reading parameter '" + t.name + "'");
    ckpt.params.push_back(std::move(t));
  }
  in.peek();
  if (!in.eof()) throw std::runtime_error(path + ": trailing bytes after parameter blob");
  return ckpt;
}

}  // namespace bret
