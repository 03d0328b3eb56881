#pragma once

#include <cmath>

#include "thermoflux/image.hpp"

namespace thermoflux {

// Bilinear footprint at a continuous location. Computed once and reused by
// the forward sample, the backward splat, and the spatial derivative so all
// three stay consistent, including the edge handling: the cell origin is
// clamped to [0, n-2] and the fraction recomputed against it, which keeps
// samples exact on the last row/column. Out-of-bounds locations are flagged
// via `inside`; the sampled value for them is defined as zero.
struct BilinearCoeffs {
  int x0 = 0, y0 = 0;    // cell origin
  double fx = 0.0, fy = 0.0;  // fractions within the cell
  bool inside = false;

  double w00() const { return (1.0 - fx) * (1.0 - fy); }
  double w10() const { return fx * (1.0 - fy); }
  double w01() const { return (1.0 - fx) * fy; }
  double w11() const { return fx * fy; }
};

inline BilinearCoeffs bilinear_coeffs(double x, double y, int width, int height) {
  BilinearCoeffs c;
  c.inside = x >= 0.0 && x <= width - 1.0 && y >= 0.0 && y <= height - 1.0;
  if (!c.inside) return c;
  if (width == 1) {
    c.x0 = 0;
    c.fx = 0.0;
  } else {
    c.x0 = std::min(static_cast<int>(std::floor(x)), width - 2);
    c.fx = x - c.x0;
  }
  if (height == 1) {
    c.y0 = 0;
    c.fy = 0.0;
  } else {
    c.y0 = std::min(static_cast<int>(std::floor(y)), height - 2);
    c.fy = y - c.y0;
  }
  return c;
}

template <int C>
inline double bilinear_apply(const ImageGrid<C>& img, const BilinearCoeffs& c, int channel) {
  if (!c.inside) return 0.0;
  const int x1 = std::min(c.x0 + 1, img.width - 1);
  const int y1 = std::min(c.y0 + 1, img.height - 1);
  return c.w00() * img.at(c.x0, c.y0, channel) + c.w10() * img.at(x1, c.y0, channel) +
         c.w01() * img.at(c.x0, y1, channel) + c.w11() * img.at(x1, y1, channel);
}

template <int C>
inline double bilinear_sample(const ImageGrid<C>& img, double x, double y, int channel,
                              bool* inside = nullptr) {
  const BilinearCoeffs c = bilinear_coeffs(x, y, img.width, img.height);
  if (inside) *inside = c.inside;
  return bilinear_apply(img, c, channel);
}

// d(sample)/dx and d(sample)/dy of the bilinear interpolant at the footprint.
// Piecewise constant in each cell; zero outside the image.
template <int C>
inline void bilinear_spatial_gradient(const ImageGrid<C>& img, const BilinearCoeffs& c,
                                      int channel, double* gx, double* gy) {
  *gx = 0.0;
  *gy = 0.0;
  if (!c.inside) return;
  const int x1 = std::min(c.x0 + 1, img.width - 1);
  const int y1 = std::min(c.y0 + 1, img.height - 1);
  const double v00 = img.at(c.x0, c.y0, channel);
  const double v10 = img.at(x1, c.y0, channel);
  const double v01 = img.at(c.x0, y1, channel);
  const double v11 = img.at(x1, y1, channel);
  *gx = (1.0 - c.fy) * (v10 - v00) + c.fy * (v11 - v01);
  *gy = (1.0 - c.fx) * (v01 - v00) + c.fx * (v11 - v10);
}

// Scatter an adjoint back through the footprint: the reverse of
// bilinear_apply. The caller guarantees single-threaded use or disjoint
// target regions; accumulation order is fixed by the call order.
template <int C>
inline void bilinear_splat(ImageGrid<C>& grad, const BilinearCoeffs& c, int channel,
                           double adjoint) {
  if (!c.inside) return;
  const int x1 = std::min(c.x0 + 1, grad.width - 1);
  const int y1 = std::min(c.y0 + 1, grad.height - 1);
  grad.data[grad.index(c.x0, c.y0, channel)] += c.w00() * adjoint;
  grad.data[grad.index(x1, c.y0, channel)] += c.w10() * adjoint;
  grad.data[grad.index(c.x0, y1, channel)] += c.w01() * adjoint;
  grad.data[grad.index(x1, y1, channel)] += c.w11() * adjoint;
}

}  // namespace thermoflux
