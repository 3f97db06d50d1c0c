#include "colorcount/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace colorcount::pipeline {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {
constexpr char kMagic[8] = {'C', 'C', 'K', 'P', 'T', '\0', '\0', '\1'};
}

int Checkpoint::stage() const { return manifest.value("stage", 0); }

const nn::Parameter* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const nn::Parameter& Checkpoint::at(const std::string& name) const {
  const auto* p = find(name);
  if (p == nullptr) throw std::out_of_range("checkpoint has no tensor named " + name);
  return *p;
}

std::vector<nn::Parameter> Checkpoint::with_prefix(const std::string& prefix) const {
  std::vector<nn::Parameter> out;
  for (const auto& t : tensors) {
    if (t.name.rfind(prefix, 0) == 0) out.push_back(t);
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json manifest = ckpt.manifest;
  json table = json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    table.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.value.size();
  }
  manifest["tensors"] = std::move(table);
  const std::string text = manifest.dump(1);
  const std::uint64_t len = text.size();

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : ckpt.tensors) {
      out.write(reinterpret_cast<const char*>(t.value.data()), static_cast<std::streamsize>(t.value.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error(path.string() + ": not a colorcount checkpoint");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error(path.string() + ": truncated manifest");

  Checkpoint ckpt;
  ckpt.manifest = json::parse(text);
  std::uint64_t expected = 0;
  for (const auto& entry : ckpt.manifest.at("tensors")) {
    nn::Parameter p(entry.at("name").get<std::string>(), entry.at("shape").get<std::vector<int>>());
    if (entry.at("offset").get<std::uint64_t>() != expected) {
      throw std::runtime_error(path.string() + ": tensor table offsets are inconsistent at " + p.name);
    }
    in.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(float)));
    if (!in) throw std::runtime_error(path.string() + ": data section too short for " + p.name);
    expected += p.value.size();
    ckpt.tensors.push_back(std::move(p));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error(path.string() + ": trailing bytes after tensors");
  ckpt.manifest.erase("tensors");
  return ckpt;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace colorcount::pipeline
