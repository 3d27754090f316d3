#include "affseq/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace affseq {

namespace {

constexpr char kMagic[4] = {'S', 'Q', 'A', 'F'};

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
  uint32_t u;
  static_assert(sizeof(u) == sizeof(v));
  std::memcpy(&u, &v, 4);
  put_u32(os, u);
}

float get_f32(std::istream& is) {
  uint32_t u = get_u32(is);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ad::ParamStore& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, 4);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<uint32_t>(store.all().size()));
  for (const auto& [name, v] : store.all()) {
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.put(static_cast<char>(0));  // dtype: f32
    const auto& shape = v->value.shape();
    os.put(static_cast<char>(shape.size()));
    for (int64_t d : shape) put_u32(os, static_cast<uint32_t>(d));
    for (int64_t i = 0; i < v->value.size(); ++i)
      put_f32(os, static_cast<float>(v->value[i]));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::map<std::string, ad::Array> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint32_t version = get_u32(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const uint32_t count = get_u32(is);
  std::map<std::string, ad::Array> out;
  for (uint32_t e = 0; e < count; ++e) {
    const uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const int dtype = is.get();
    if (dtype != 0) throw std::runtime_error("checkpoint: unsupported dtype code " + std::to_string(dtype));
    const int rank = is.get();
    std::vector<int64_t> shape(static_cast<size_t>(rank));
    int64_t n = 1;
    for (auto& d : shape) {
      d = get_u32(is);
      n *= d;
    }
    ad::Array a(shape);
    for (int64_t i = 0; i < n; ++i) a[i] = static_cast<double>(get_f32(is));
    if (!is) throw std::runtime_error("checkpoint: truncated file " + path);
    out.emplace(std::move(name), std::move(a));
  }
  return out;
}

void load_checkpoint(const std::string& path, ad::ParamStore& store) {
  auto entries = read_checkpoint(path);
  for (const auto& [name, v] : store.all()) {
    auto it = entries.find(name);
    if (it == entries.end())
      throw std::runtime_error("checkpoint: missing parameter " + name + " in " + path);
    if (!(it->second.shape() == v->value.shape()))
      throw std::runtime_error("checkpoint: shape mismatch for " + name + ": file " +
                               it->second.shape_str() + " vs model " + v->value.shape_str());
    v->value = it->second;
  }
  if (entries.size() != store.all().size())
    throw std::runtime_error("checkpoint: file " + path + " carries " +
                             std::to_string(entries.size()) + " entries, model expects " +
                             std::to_string(store.all().size()));
}

}  // namespace affseq
