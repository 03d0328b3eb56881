#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "thermoflux/io.hpp"

using namespace thermoflux;
namespace fs = std::filesystem;

namespace {

// Fresh scratch directory per test binary run.
fs::path scratch() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "tf_io_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("pgm16 round trip and header") {
  RawThermalImage img(7, 5);
  std::mt19937 rng(51);
  std::uniform_int_distribution<int> u(0, 16383);
  for (auto& v : img.data) v = static_cast<uint16_t>(u(rng));
  img.at(0, 0) = 0;
  img.at(6, 4) = 16383;

  const fs::path p = scratch() / "a.pgm";
  write_pgm16(p, img);
  const std::string bytes = slurp(p);
  CHECK(bytes.rfind("P5\n7 5\n16383\n", 0) == 0);
  CHECK(bytes.size() == std::string("P5\n7 5\n16383\n").size() + 7 * 5 * 2);
  // Big-endian sample order: 16383 = 0x3FFF.
  CHECK(static_cast<unsigned char>(bytes[bytes.size() - 2]) == 0x3f);
  CHECK(static_cast<unsigned char>(bytes[bytes.size() - 1]) == 0xff);

  const RawThermalImage back = read_pgm16(p);
  REQUIRE(back.width == 7);
  REQUIRE(back.height == 5);
  CHECK(back.data == img.data);

  // Counts above 14 bits are rejected on both paths.
  RawThermalImage bad(1, 1, 16384);
  CHECK_THROWS_AS(write_pgm16(scratch() / "bad.pgm", bad), std::domain_error);
  CHECK_THROWS_AS(read_pgm16(scratch() / "no_such.pgm"), std::runtime_error);
}

TEST_CASE("pgm16 reader handles comments and rejects 8-bit files") {
  const fs::path p = scratch() / "c.pgm";
  {
    std::ofstream f(p, std::ios::binary);
    f << "P5\n# a comment\n2 1\n16383\n";
    const unsigned char raw[4] = {0x01, 0x00, 0x00, 0x02};
    f.write(reinterpret_cast<const char*>(raw), 4);
  }
  const RawThermalImage img = read_pgm16(p);
  CHECK(img.at(0, 0) == 256);
  CHECK(img.at(1, 0) == 2);

  const fs::path p8 = scratch() / "8bit.pgm";
  {
    std::ofstream f(p8, std::ios::binary);
    f << "P5\n2 1\n255\n";
    f.write("ab", 2);
  }
  CHECK_THROWS_AS(read_pgm16(p8), std::runtime_error);
}

TEST_CASE("ppm8 round trip with quantization") {
  ImageGrid<3> img(4, 3);
  std::mt19937 rng(53);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : img.data) v = u(rng);
  img.at(0, 0, 0) = 0.0;
  img.at(3, 2, 2) = 1.0;
  img.at(1, 1, 1) = 1.7;   // clamps to 255
  img.at(2, 1, 0) = -0.3;  // clamps to 0

  const fs::path p = scratch() / "a.ppm";
  write_ppm8(p, img);
  CHECK(slurp(p).rfind("P6\n4 3\n255\n", 0) == 0);
  const ImageGrid<3> back = read_ppm8(p);
  REQUIRE(back.same_shape(img));
  CHECK(back.at(0, 0, 0) == 0.0);
  CHECK(back.at(3, 2, 2) == 1.0);
  CHECK(back.at(1, 1, 1) == 1.0);
  CHECK(back.at(2, 1, 0) == 0.0);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) {
        const double expect = std::clamp(img.at(x, y, c), 0.0, 1.0);
        CHECK(std::abs(back.at(x, y, c) - expect) <= 0.5 / 255.0 + 1e-12);
      }
}

TEST_CASE("pfm round trips preserve float32 payloads") {
  std::mt19937 rng(57);
  std::uniform_real_distribution<double> u(-5.0, 5.0);

  ImageGrid<1> depth(6, 4);
  for (auto& v : depth.data) v = static_cast<float>(u(rng));  // representable exactly
  const fs::path p1 = scratch() / "d.pfm";
  write_pfm(p1, depth);
  const ImageGrid<1> back1 = read_pfm1(p1);
  REQUIRE(back1.same_shape(depth));
  for (size_t i = 0; i < depth.data.size(); ++i) CHECK(back1.data[i] == depth.data[i]);

  ImageGrid<3> flow(5, 3);
  for (auto& v : flow.data) v = static_cast<float>(u(rng));
  const fs::path p3 = scratch() / "f.pfm";
  write_pfm(p3, flow);
  const ImageGrid<3> back3 = read_pfm3(p3);
  REQUIRE(back3.same_shape(flow));
  for (size_t i = 0; i < flow.data.size(); ++i) CHECK(back3.data[i] == flow.data[i]);

  // Header sanity: negative scale marks little-endian, rows bottom-up.
  const std::string bytes = slurp(p1);
  CHECK(bytes.rfind("Pf\n6 4\n-1.0\n", 0) == 0);
  // First stored row is the bottom image row: check one value.
  float first;
  std::memcpy(&first, bytes.data() + std::string("Pf\n6 4\n-1.0\n").size(), 4);
  CHECK(double(first) == depth.at(0, 3));

  CHECK_THROWS_AS(read_pfm3(p1), std::runtime_error);  // channel mismatch
}

TEST_CASE("poses json round trip, both matrix shapes") {
  std::mt19937 rng(59);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<RigidPose> poses;
  for (int i = 0; i < 4; ++i) {
    Twist xi;
    for (int k = 0; k < 6; ++k) xi[k] = u(rng);
    poses.push_back(se3_exp(xi));
  }
  const fs::path p = scratch() / "poses.json";
  save_poses_json(p, poses);
  const std::vector<RigidPose> back = load_poses_json(p);
  REQUIRE(back.size() == poses.size());
  for (size_t i = 0; i < poses.size(); ++i)
    CHECK((back[i].matrix() - poses[i].matrix()).cwiseAbs().maxCoeff() < 1e-15);

  // Flat 16-element row-major lists are accepted too.
  const fs::path pf = scratch() / "poses_flat.json";
  {
    std::ofstream f(pf);
    f << "[[1,0,0,0.5, 0,1,0,-1.25, 0,0,1,2, 0,0,0,1]]";
  }
  const std::vector<RigidPose> flat = load_poses_json(pf);
  REQUIRE(flat.size() == 1);
  CHECK(flat[0].translation.isApprox(Eigen::Vector3d(0.5, -1.25, 2.0)));

  const fs::path bad = scratch() / "bad_poses.json";
  {
    std::ofstream f(bad);
    f << "{\"not\": \"a list\"}";
  }
  CHECK_THROWS_AS(load_poses_json(bad), std::runtime_error);
}

TEST_CASE("rig json round trip validates intrinsics") {
  StereoRig rig;
  rig.thermal = {100.0, 101.0, 31.5, 23.5, 64, 48};
  rig.rgb = {210.0, 211.0, 63.5, 47.5, 128, 96};
  Twist xi;
  xi << 0.01, -0.02, 0.03, 0.1, 0.0, -0.05;
  rig.t_rgb_thermal = se3_exp(xi);

  const fs::path p = scratch() / "rig.json";
  save_rig_json(p, rig);
  const StereoRig back = load_rig_json(p);
  CHECK(back.thermal.fx == rig.thermal.fx);
  CHECK(back.rgb.height == rig.rgb.height);
  CHECK((back.t_rgb_thermal.matrix() - rig.t_rgb_thermal.matrix()).cwiseAbs().maxCoeff() < 1e-15);

  // Loader runs validation: corrupt fx must be rejected.
  const fs::path bad = scratch() / "bad_rig.json";
  {
    std::ofstream f(bad);
    f << R"({"thermal":{"fx":-1,"fy":1,"cx":0,"cy":0,"width":2,"height":2},
           "rgb":{"fx":1,"fy":1,"cx":0,"cy":0,"width":2,"height":2},
           "extrinsic":[[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]})";
  }
  CHECK_THROWS_AS(load_rig_json(bad), std::invalid_argument);
}

TEST_CASE("frame_name zero pads") {
  CHECK(frame_name(0, ".ppm") == "000000.ppm");
  CHECK(frame_name(3, ".pgm") == "000003.pgm");
  CHECK(frame_name(123456, ".pfm") == "123456.pfm");
}
