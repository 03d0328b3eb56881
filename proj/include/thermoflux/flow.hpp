#pragma once

#include "thermoflux/image.hpp"

namespace thermoflux {

// Dense pixel correspondence field: delta holds (dx, dy) in pixels, mask is
// 1 where the flow is defined and 0 on holes/invalid pixels. Values under
// mask 0 carry no meaning but stay finite.
struct FlowField {
  ImageGrid<2> delta;
  ImageGrid<1> mask;

  FlowField() = default;
  FlowField(int w, int h) : delta(w, h), mask(w, h, 1.0) {}

  int width() const { return delta.width; }
  int height() const { return delta.height; }
};

// Packs a flow field into the 3-channel (dx, dy, mask) layout used by the
// PFM on-disk format, and back.
inline ImageGrid<3> flow_to_packed(const FlowField& f) {
  ImageGrid<3> out(f.delta.width, f.delta.height);
  for (size_t i = 0; i < f.mask.data.size(); ++i) {
    out.data[3 * i + 0] = f.delta.data[2 * i + 0];
    out.data[3 * i + 1] = f.delta.data[2 * i + 1];
    out.data[3 * i + 2] = f.mask.data[i];
  }
  return out;
}

inline FlowField flow_from_packed(const ImageGrid<3>& p) {
  FlowField f(p.width, p.height);
  for (size_t i = 0; i < f.mask.data.size(); ++i) {
    f.delta.data[2 * i + 0] = p.data[3 * i + 0];
    f.delta.data[2 * i + 1] = p.data[3 * i + 1];
    f.mask.data[i] = p.data[3 * i + 2] >= 0.5 ? 1.0 : 0.0;
  }
  return f;
}

}  // namespace thermoflux
