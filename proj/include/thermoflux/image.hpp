#pragma once

#include <array>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace thermoflux {

// Dense row-major image with C interleaved channels. Values are plain
// doubles; the meaning (intensity in [0,1], meters, pixels) is set by the
// producing operation.
template <int C>
struct ImageGrid {
  static_assert(C >= 1 && C <= 3, "1 to 3 channels supported");
  static constexpr int channels = C;

  int width = 0;
  int height = 0;
  std::vector<double> data;

  ImageGrid() = default;
  ImageGrid(int w, int h, double fill = 0.0) : width(w), height(h) {
    if (w < 0 || h < 0) throw std::invalid_argument("image size must be non-negative");
    data.assign(static_cast<size_t>(w) * h * C, fill);
  }

  bool empty() const { return width == 0 || height == 0; }
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }

  size_t index(int x, int y, int c = 0) const {
    assert(x >= 0 && x < width && y >= 0 && y < height && c >= 0 && c < C);
    return (static_cast<size_t>(y) * width + x) * C + c;
  }

  double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

  std::array<double, C> pixel(int x, int y) const {
    std::array<double, C> v{};
    const size_t i = index(x, y, 0);
    for (int c = 0; c < C; ++c) v[c] = data[i + c];
    return v;
  }

  void set_pixel(int x, int y, const std::array<double, C>& v) {
    const size_t i = index(x, y, 0);
    for (int c = 0; c < C; ++c) data[i + c] = v[c];
  }

  void fill(double v) { data.assign(data.size(), v); }

  template <int D>
  bool same_shape(const ImageGrid<D>& o) const {
    return width == o.width && height == o.height;
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

using DepthMap = ImageGrid<1>;

// Throws unless every depth value is strictly positive and finite.
inline void require_positive_depth(const DepthMap& d, const char* what) {
  for (double v : d.data)
    if (!(v > 0.0) || !std::isfinite(v))
      throw std::domain_error(std::string(what) + ": depth must be positive and finite");
}

}  // namespace thermoflux
