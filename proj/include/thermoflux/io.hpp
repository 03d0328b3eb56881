#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "thermoflux/image.hpp"
#include "thermoflux/pose.hpp"
#include "thermoflux/rig.hpp"
#include "thermoflux/thermal.hpp"

namespace thermoflux {

// Raw thermal frames travel as binary PGM (P5) with maxval 16383,
// big-endian 16-bit samples.
void write_pgm16(const std::filesystem::path& path, const RawThermalImage& img);
RawThermalImage read_pgm16(const std::filesystem::path& path);

// RGB frames travel as binary PPM (P6), maxval 255; values in [0,1] are
// quantized by rounding on write and divided by 255 on read.
void write_ppm8(const std::filesystem::path& path, const ImageGrid<3>& img);
ImageGrid<3> read_ppm8(const std::filesystem::path& path);

// Depth and flow travel as PFM: little-endian float32 (scale header -1.0),
// rows stored bottom-up. 1-channel "Pf" for depth, 3-channel "PF" for flow
// packed as (dx, dy, mask).
void write_pfm(const std::filesystem::path& path, const ImageGrid<1>& img);
void write_pfm(const std::filesystem::path& path, const ImageGrid<3>& img);
ImageGrid<1> read_pfm1(const std::filesystem::path& path);
ImageGrid<3> read_pfm3(const std::filesystem::path& path);

// Trajectories: JSON list of 4x4 row-major matrices (camera-to-world).
void save_poses_json(const std::filesystem::path& path, const std::vector<RigidPose>& poses);
std::vector<RigidPose> load_poses_json(const std::filesystem::path& path);

// Rig calibration: both intrinsics plus the 4x4 extrinsic T_rgb_thermal.
void save_rig_json(const std::filesystem::path& path, const StereoRig& rig);
StereoRig load_rig_json(const std::filesystem::path& path);

// Zero-padded 6-digit frame file name, e.g. frame_name(3, ".ppm") = "000003.ppm".
std::string frame_name(int index, const std::string& ext);

}  // namespace thermoflux
