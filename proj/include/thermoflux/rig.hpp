#pragma once

#include "thermoflux/camera.hpp"
#include "thermoflux/pose.hpp"

namespace thermoflux {

// Calibrated thermal + RGB camera pair. The extrinsic maps thermal-camera
// points into the RGB camera frame (T_rgb_thermal in the T_a_b convention).
struct StereoRig {
  CameraIntrinsics thermal;
  CameraIntrinsics rgb;
  RigidPose t_rgb_thermal;

  void validate() const {
    thermal.validate();
    rgb.validate();
  }
};

}  // namespace thermoflux
