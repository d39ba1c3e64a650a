#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace proprio {

/// Dense row-major matrix, minimal surface.
template <class T>
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<T> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, T init = T{}) : rows(r), cols(c), data(r * c, init) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::size_t size() const { return data.size(); }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

}  // namespace proprio
