#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "trinet/tensor.hpp"

namespace trinet {

using TensorMap = std::map<std::string, ad::Tensor>;

// Named, tracking model parameters. Iteration order is lexicographic by
// name, which fixes the checkpoint layout and optimizer update order.
class ParameterStore {
 public:
  ad::Tensor& add(const std::string& name, ad::Tensor value);
  ad::Tensor& get(const std::string& name);
  const ad::Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const TensorMap& items() const { return params_; }
  std::size_t size() const { return params_.size(); }

  void zero_grad();
  // Copies values for every name present in `values` whose shape matches.
  // Names in `values` without a counterpart are reported back.
  std::vector<std::string> assign(const TensorMap& values, bool require_all);
  // Deep copy of all parameter values (not tracking).
  TensorMap snapshot() const;

 private:
  TensorMap params_;
};

// FNV-1a over names, shapes and raw value bytes of the entries whose name
// starts with `prefix` (all entries when empty).
std::uint64_t checksum(const TensorMap& tensors, std::string_view prefix = {});

namespace checkpoint {

inline constexpr std::string_view kMagic = "TRIKIT01";

// Layout after the 8-byte magic, repeated until end of data, all integers
// little-endian: u32 name length, name bytes, u32 rank, rank x u64 dims,
// product(dims) x f64 values.
std::string encode(const TensorMap& tensors);
TensorMap decode(std::string_view bytes);

void save(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load(const std::filesystem::path& path);

}  // namespace checkpoint

}  // namespace trinet
