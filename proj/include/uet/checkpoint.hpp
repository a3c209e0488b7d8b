#pragma once

#include <string>
#include <utility>
#include <vector>

#include "uet/tensor.hpp"

namespace uet {

// Versioned little-endian tensor container. Header: magic "UETC", u32 version,
// u32 metadata length + UTF-8 metadata, u64 tensor count. Record: u32 name
// length + UTF-8 name, u32 rank, u64 dims..., f64 payload. Round-trips are
// bit-exact.
struct Container {
  std::string meta;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_container(const std::string& path, const Container& c);
Container load_container(const std::string& path);

// FNV-1a over the raw f64 bytes of all tensors in order, as a hex string
std::string param_digest(const std::vector<const Tensor*>& params);

}  // namespace uet
