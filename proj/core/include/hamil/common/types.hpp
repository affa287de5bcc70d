#pragma once

#include <Eigen/Core>

#include <cstdint>

namespace hamil {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Spatial extent (depth, height, width). 2D data uses depth 1.
struct Dims3 {
  int d = 1;
  int h = 1;
  int w = 1;

  std::int64_t volume() const { return std::int64_t{d} * h * w; }
  friend bool operator==(const Dims3&, const Dims3&) = default;
};

}  // namespace hamil
