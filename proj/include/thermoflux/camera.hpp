#pragma once

#include <Eigen/Core>
#include <stdexcept>

namespace thermoflux {

// Pinhole model. Pixel (i, j) sits at continuous coordinate (i, j); the
// image domain is [0, width-1] x [0, height-1]. No distortion.
struct CameraIntrinsics {
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("focal lengths must be positive");
    if (width <= 0 || height <= 0) throw std::invalid_argument("image size must be positive");
    if (cx < 0.0 || cx >= width) throw std::invalid_argument("cx outside [0, width)");
    if (cy < 0.0 || cy >= height) throw std::invalid_argument("cy outside [0, height)");
  }
};

struct Projection {
  double x = 0.0;
  double y = 0.0;
  double depth = 0.0;
  bool valid = false;  // depth > kMinProjectionDepth and pixel inside the image domain
};

inline constexpr double kMinProjectionDepth = 1e-6;

// Pixel + depth -> camera-frame 3D point. Throws on non-positive depth.
inline Eigen::Vector3d backproject(double px, double py, double depth, const CameraIntrinsics& K) {
  if (!(depth > 0.0)) throw std::domain_error("backproject: depth must be positive");
  return {(px - K.cx) * depth / K.fx, (py - K.cy) * depth / K.fy, depth};
}

// Camera-frame point -> pixel. Invalidity is a flag, not a failure: points
// behind the camera or landing outside the image keep their coordinates but
// are excluded from the valid set downstream.
inline Projection project(const Eigen::Vector3d& X, const CameraIntrinsics& K) {
  Projection p;
  p.depth = X.z();
  if (X.z() <= kMinProjectionDepth) return p;
  p.x = K.fx * X.x() / X.z() + K.cx;
  p.y = K.fy * X.y() / X.z() + K.cy;
  p.valid = p.x >= 0.0 && p.x <= K.width - 1 && p.y >= 0.0 && p.y <= K.height - 1;
  return p;
}

}  // namespace thermoflux
