#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "thermoflux/image.hpp"

namespace thermoflux {

inline constexpr int kThermalMaxCount = 16383;  // 14-bit sensor
inline constexpr double kThermalMinCelsius = -30.0;
inline constexpr double kThermalMaxCelsius = 150.0;

// Raw radiometric frame straight off the (synthetic) sensor.
struct RawThermalImage {
  int width = 0;
  int height = 0;
  std::vector<uint16_t> data;  // row-major counts in [0, 16383]

  RawThermalImage() = default;
  RawThermalImage(int w, int h, uint16_t fill = 0) : width(w), height(h) {
    if (w < 0 || h < 0) throw std::invalid_argument("image size must be non-negative");
    data.assign(static_cast<size_t>(w) * h, fill);
  }

  size_t index(int x, int y) const { return static_cast<size_t>(y) * width + x; }
  uint16_t at(int x, int y) const { return data[index(x, y)]; }
  uint16_t& at(int x, int y) { return data[index(x, y)]; }
};

enum class ThermalStrategy { WHOLE, MINMAX, WIDE_CLIP, NARROW_CLIP, CLIP_COLORIZE };

ThermalStrategy thermal_strategy_from_string(const std::string& name);
std::string to_string(ThermalStrategy s);

struct ColormapStop {
  double position;  // in [0, 1], strictly increasing across the map
  double rgb[3];    // each channel in [0, 1]
};

struct ThermalRepresentationConfig {
  ThermalStrategy strategy = ThermalStrategy::CLIP_COLORIZE;
  double clip_lo = 10.0;  // °C; defaults are the narrow window
  double clip_hi = 40.0;
  std::vector<ColormapStop> colormap = default_colormap();

  static std::vector<ColormapStop> default_colormap();
  static ThermalRepresentationConfig for_strategy(ThermalStrategy s);
  void validate() const;
};

// Linear radiometric model over the low-gain range [-30, 150] °C.
double raw_to_celsius(int count);
// Nearest representable count for a temperature; clamps to the sensor range.
uint16_t celsius_to_raw(double celsius);

// One of the five representation strategies, producing a single channel in
// [0, 1]. CLIP_COLORIZE here yields its narrow-clip stage; the 3-channel
// image comes from colorize() or represent().
ImageGrid<1> normalize(const RawThermalImage& raw, const ThermalRepresentationConfig& cfg);

// Piecewise-linear color lookup, applied per pixel.
ImageGrid<3> colorize(const ImageGrid<1>& v, const std::vector<ColormapStop>& colormap);

// d(colorize)/dv per channel at each pixel; knots take the right-hand slope.
ImageGrid<3> colorize_slope(const ImageGrid<1>& v, const std::vector<ColormapStop>& colormap);

// The image the loss consumes: 3 channels. CLIP_COLORIZE colorizes its
// normalized stage; every other strategy replicates the single channel so
// snippet math is uniform across strategies.
ImageGrid<3> represent(const RawThermalImage& raw, const ThermalRepresentationConfig& cfg);

}  // namespace thermoflux
