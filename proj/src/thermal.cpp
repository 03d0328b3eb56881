#include "thermoflux/thermal.hpp"

#include <algorithm>
#include <cmath>

namespace thermoflux {

ThermalStrategy thermal_strategy_from_string(const std::string& name) {
  if (name == "whole") return ThermalStrategy::WHOLE;
  if (name == "minmax") return ThermalStrategy::MINMAX;
  if (name == "wide_clip") return ThermalStrategy::WIDE_CLIP;
  if (name == "narrow_clip") return ThermalStrategy::NARROW_CLIP;
  if (name == "clip_colorize") return ThermalStrategy::CLIP_COLORIZE;
  throw std::invalid_argument("unknown thermal strategy: " + name);
}

std::string to_string(ThermalStrategy s) {
  switch (s) {
    case ThermalStrategy::WHOLE: return "whole";
    case ThermalStrategy::MINMAX: return "minmax";
    case ThermalStrategy::WIDE_CLIP: return "wide_clip";
    case ThermalStrategy::NARROW_CLIP: return "narrow_clip";
    case ThermalStrategy::CLIP_COLORIZE: return "clip_colorize";
  }
  throw std::logic_error("bad strategy value");
}

std::vector<ColormapStop> ThermalRepresentationConfig::default_colormap() {
  // Iron-style ramp: black, purple, orange, yellow-orange, white.
  return {{0.00, {0.0, 0.0, 0.0}},
          {0.25, {0.5, 0.0, 0.5}},
          {0.50, {1.0, 0.25, 0.0}},
          {0.75, {1.0, 0.75, 0.0}},
          {1.00, {1.0, 1.0, 1.0}}};
}

ThermalRepresentationConfig ThermalRepresentationConfig::for_strategy(ThermalStrategy s) {
  ThermalRepresentationConfig cfg;
  cfg.strategy = s;
  if (s == ThermalStrategy::WIDE_CLIP) {
    cfg.clip_lo = 0.0;
    cfg.clip_hi = 50.0;
  }
  return cfg;
}

void ThermalRepresentationConfig::validate() const {
  if (!(clip_lo < clip_hi)) throw std::invalid_argument("clip_lo must be below clip_hi");
  if (colormap.size() < 2) throw std::invalid_argument("colormap needs at least two stops");
  if (colormap.front().position != 0.0 || colormap.back().position != 1.0)
    throw std::invalid_argument("colormap must start at 0 and end at 1");
  for (size_t i = 1; i < colormap.size(); ++i)
    if (!(colormap[i - 1].position < colormap[i].position))
      throw std::invalid_argument("colormap positions must be strictly increasing");
  for (const ColormapStop& s : colormap)
    for (double c : s.rgb)
      if (c < 0.0 || c > 1.0) throw std::invalid_argument("colormap colors must lie in [0,1]");
}

double raw_to_celsius(int count) {
  if (count < 0 || count > kThermalMaxCount)
    throw std::domain_error("raw count outside [0, 16383]");
  return kThermalMinCelsius +
         (kThermalMaxCelsius - kThermalMinCelsius) * count / double(kThermalMaxCount);
}

uint16_t celsius_to_raw(double celsius) {
  const double r = (celsius - kThermalMinCelsius) / (kThermalMaxCelsius - kThermalMinCelsius) *
                   double(kThermalMaxCount);
  const double clamped = std::clamp(std::round(r), 0.0, double(kThermalMaxCount));
  return static_cast<uint16_t>(clamped);
}

ImageGrid<1> normalize(const RawThermalImage& raw, const ThermalRepresentationConfig& cfg) {
  cfg.validate();
  ImageGrid<1> out(raw.width, raw.height);
  switch (cfg.strategy) {
    case ThermalStrategy::WHOLE: {
      for (size_t i = 0; i < raw.data.size(); ++i)
        out.data[i] = raw.data[i] / double(kThermalMaxCount);
      break;
    }
    case ThermalStrategy::MINMAX: {
      if (raw.data.empty()) break;
      const auto [lo, hi] = std::minmax_element(raw.data.begin(), raw.data.end());
      if (*lo == *hi) break;  // degenerate image: all zeros
      const double span = double(*hi) - double(*lo);
      for (size_t i = 0; i < raw.data.size(); ++i) out.data[i] = (raw.data[i] - double(*lo)) / span;
      break;
    }
    case ThermalStrategy::WIDE_CLIP:
    case ThermalStrategy::NARROW_CLIP:
    case ThermalStrategy::CLIP_COLORIZE: {
      const double span = cfg.clip_hi - cfg.clip_lo;
      for (size_t i = 0; i < raw.data.size(); ++i) {
        const double t = std::clamp(raw_to_celsius(raw.data[i]), cfg.clip_lo, cfg.clip_hi);
        out.data[i] = (t - cfg.clip_lo) / span;
      }
      break;
    }
  }
  return out;
}

namespace {

// Locates the segment for v and returns its endpoints. v is clamped to
// [0, 1] upstream by normalize; defensive clamp here keeps lookups total.
void locate(const std::vector<ColormapStop>& map, double v, const ColormapStop** a,
            const ColormapStop** b, double* s) {
  const double x = std::clamp(v, 0.0, 1.0);
  size_t hi = 1;
  while (hi + 1 < map.size() && map[hi].position <= x) ++hi;
  *a = &map[hi - 1];
  *b = &map[hi];
  *s = (x - (*a)->position) / ((*b)->position - (*a)->position);
}

}  // namespace

ImageGrid<3> colorize(const ImageGrid<1>& v, const std::vector<ColormapStop>& colormap) {
  ImageGrid<3> out(v.width, v.height);
  for (size_t i = 0; i < v.data.size(); ++i) {
    const ColormapStop *a, *b;
    double s;
    locate(colormap, v.data[i], &a, &b, &s);
    for (int c = 0; c < 3; ++c) out.data[3 * i + c] = a->rgb[c] + s * (b->rgb[c] - a->rgb[c]);
  }
  return out;
}

ImageGrid<3> colorize_slope(const ImageGrid<1>& v, const std::vector<ColormapStop>& colormap) {
  ImageGrid<3> out(v.width, v.height);
  for (size_t i = 0; i < v.data.size(); ++i) {
    const ColormapStop *a, *b;
    double s;
    locate(colormap, v.data[i], &a, &b, &s);
    // At a knot, locate() already selects the right-hand segment, so the
    // slope below is the right-hand slope by construction.
    const double inv = 1.0 / (b->position - a->position);
    for (int c = 0; c < 3; ++c) out.data[3 * i + c] = (b->rgb[c] - a->rgb[c]) * inv;
  }
  return out;
}

ImageGrid<3> represent(const RawThermalImage& raw, const ThermalRepresentationConfig& cfg) {
  const ImageGrid<1> n = normalize(raw, cfg);
  if (cfg.strategy == ThermalStrategy::CLIP_COLORIZE) return colorize(n, cfg.colormap);
  ImageGrid<3> out(n.width, n.height);
  for (size_t i = 0; i < n.data.size(); ++i)
    for (int c = 0; c < 3; ++c) out.data[3 * i + c] = n.data[i];
  return out;
}

}  // namespace thermoflux
