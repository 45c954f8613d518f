#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "trinet/rng.hpp"
#include "trinet/tensor.hpp"

namespace trinet::test {

inline ad::Tensor randn(Rng& rng, const ad::Shape& shape, double sd = 1.0) {
  std::vector<double> v(ad::shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, sd);
  return ad::Tensor::from_vector(shape, std::move(v));
}

inline ad::Tensor uniform(Rng& rng, const ad::Shape& shape, double lo, double hi) {
  std::vector<double> v(ad::shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return ad::Tensor::from_vector(shape, std::move(v));
}

inline double max_abs_diff(const ad::Tensor& a, const ad::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("trinet_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace trinet::test
