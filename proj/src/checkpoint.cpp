#include "uet/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace uet {

namespace {

constexpr char kMagic[4] = {'U', 'E', 'T', 'C'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double d) {
  uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(os, v);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) {
  uint64_t v = get_u64(is);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

}  // namespace

void save_container(const std::string& path, const Container& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open for writing: " + path);
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<uint32_t>(c.meta.size()));
  os.write(c.meta.data(), static_cast<std::streamsize>(c.meta.size()));
  put_u64(os, c.tensors.size());
  for (const auto& [name, t] : c.tensors) {
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<uint32_t>(t.shape().size()));
    for (int d : t.shape()) put_u64(os, static_cast<uint64_t>(d));
    for (double v : t.data()) put_f64(os, v);
  }
  if (!os) throw ConfigError("write failed: " + path);
}

Container load_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw ConfigError("not a tensor container: " + path);
  const uint32_t version = get_u32(is);
  if (version != kVersion)
    throw ConfigError("unsupported container version " + std::to_string(version));
  Container c;
  const uint32_t meta_len = get_u32(is);
  c.meta.resize(meta_len);
  is.read(c.meta.data(), meta_len);
  const uint64_t count = get_u64(is);
  for (uint64_t i = 0; i < count; ++i) {
    const uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t rank = get_u32(is);
    Shape shape(rank);
    for (uint32_t r = 0; r < rank; ++r) shape[r] = static_cast<int>(get_u64(is));
    const int64_t n = shape_numel(shape);
    std::vector<double> data(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) data[static_cast<size_t>(j)] = get_f64(is);
    if (!is) throw ConfigError("truncated container: " + path);
    c.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return c;
}

std::string param_digest(const std::vector<const Tensor*>& params) {
  uint64_t h = 0xcbf29ce484222325ull;
  auto eat = [&h](const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const Tensor* t : params)
    eat(t->data().data(), t->data().size() * sizeof(double));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace uet
