#include "thermoflux/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace thermoflux {

namespace {

using nlohmann::json;

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  return f;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for reading: " + path.string());
  return f;
}

// Reads one whitespace-delimited PNM header token, skipping '#' comments.
std::string pnm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw std::runtime_error("truncated PNM header");
  return tok;
}

int pnm_int(std::istream& in, const char* what) {
  const std::string tok = pnm_token(in);
  try {
    size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(std::string("bad PNM ") + what + ": " + tok);
  }
}

json json_from_file(const std::filesystem::path& path) {
  std::ifstream f = open_in(path);
  json j;
  try {
    f >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("malformed JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

void json_to_file(const std::filesystem::path& path, const json& j) {
  std::ofstream f = open_out(path);
  f << j.dump(2) << '\n';
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

json matrix_to_json(const Eigen::Matrix4d& m) {
  json rows = json::array();
  for (int i = 0; i < 4; ++i) {
    json row = json::array();
    for (int j = 0; j < 4; ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

Eigen::Matrix4d matrix_from_json(const json& j) {
  Eigen::Matrix4d m;
  if (j.is_array() && j.size() == 16) {  // flat row-major variant
    for (int i = 0; i < 16; ++i) m(i / 4, i % 4) = j.at(i).get<double>();
    return m;
  }
  if (!j.is_array() || j.size() != 4) throw std::runtime_error("pose matrix must be 4x4");
  for (int i = 0; i < 4; ++i) {
    const json& row = j.at(i);
    if (!row.is_array() || row.size() != 4) throw std::runtime_error("pose matrix must be 4x4");
    for (int k = 0; k < 4; ++k) m(i, k) = row.at(k).get<double>();
  }
  return m;
}

json intrinsics_to_json(const CameraIntrinsics& K) {
  return {{"fx", K.fx},       {"fy", K.fy},           {"cx", K.cx},
          {"cy", K.cy},       {"width", K.width},     {"height", K.height}};
}

CameraIntrinsics intrinsics_from_json(const json& j) {
  CameraIntrinsics K;
  K.fx = j.at("fx").get<double>();
  K.fy = j.at("fy").get<double>();
  K.cx = j.at("cx").get<double>();
  K.cy = j.at("cy").get<double>();
  K.width = j.at("width").get<int>();
  K.height = j.at("height").get<int>();
  K.validate();
  return K;
}

}  // namespace

void write_pgm16(const std::filesystem::path& path, const RawThermalImage& img) {
  for (uint16_t v : img.data)
    if (v > kThermalMaxCount) throw std::domain_error("raw count outside [0, 16383]");
  std::ofstream f = open_out(path);
  f << "P5\n" << img.width << ' ' << img.height << '\n' << kThermalMaxCount << '\n';
  std::vector<unsigned char> buf(img.data.size() * 2);
  for (size_t i = 0; i < img.data.size(); ++i) {
    buf[2 * i] = static_cast<unsigned char>(img.data[i] >> 8);  // big-endian
    buf[2 * i + 1] = static_cast<unsigned char>(img.data[i] & 0xff);
  }
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

RawThermalImage read_pgm16(const std::filesystem::path& path) {
  std::ifstream f = open_in(path);
  if (pnm_token(f) != "P5") throw std::runtime_error("not a binary PGM: " + path.string());
  const int w = pnm_int(f, "width");
  const int h = pnm_int(f, "height");
  const int maxval = pnm_int(f, "maxval");
  if (w <= 0 || h <= 0) throw std::runtime_error("bad PGM size in " + path.string());
  if (maxval < 256 || maxval > 65535)
    throw std::runtime_error("expected 16-bit PGM: " + path.string());
  RawThermalImage img(w, h);
  std::vector<unsigned char> buf(img.data.size() * 2);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (f.gcount() != static_cast<std::streamsize>(buf.size()))
    throw std::runtime_error("truncated PGM data in " + path.string());
  for (size_t i = 0; i < img.data.size(); ++i) {
    const uint16_t v = static_cast<uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
    if (v > kThermalMaxCount)
      throw std::runtime_error("count above 16383 in " + path.string());
    img.data[i] = v;
  }
  return img;
}

void write_ppm8(const std::filesystem::path& path, const ImageGrid<3>& img) {
  std::ofstream f = open_out(path);
  f << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> buf(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i)
    buf[i] = static_cast<unsigned char>(std::clamp(std::round(img.data[i] * 255.0), 0.0, 255.0));
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

ImageGrid<3> read_ppm8(const std::filesystem::path& path) {
  std::ifstream f = open_in(path);
  if (pnm_token(f) != "P6") throw std::runtime_error("not a binary PPM: " + path.string());
  const int w = pnm_int(f, "width");
  const int h = pnm_int(f, "height");
  const int maxval = pnm_int(f, "maxval");
  if (w <= 0 || h <= 0) throw std::runtime_error("bad PPM size in " + path.string());
  if (maxval != 255) throw std::runtime_error("expected 8-bit PPM: " + path.string());
  ImageGrid<3> img(w, h);
  std::vector<unsigned char> buf(img.data.size());
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (f.gcount() != static_cast<std::streamsize>(buf.size()))
    throw std::runtime_error("truncated PPM data in " + path.string());
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = buf[i] / 255.0;
  return img;
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "PFM writer assumes a little-endian host");

template <int C>
void write_pfm_impl(const std::filesystem::path& path, const ImageGrid<C>& img) {
  static_assert(C == 1 || C == 3, "PFM supports 1 or 3 channels");
  std::ofstream f = open_out(path);
  f << (C == 1 ? "Pf" : "PF") << '\n' << img.width << ' ' << img.height << '\n' << "-1.0\n";
  std::vector<float> row(static_cast<size_t>(img.width) * C);
  for (int y = img.height - 1; y >= 0; --y) {  // bottom-up row order
    const double* src = &img.data[static_cast<size_t>(y) * img.width * C];
    for (size_t i = 0; i < row.size(); ++i) row[i] = static_cast<float>(src[i]);
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

template <int C>
ImageGrid<C> read_pfm_impl(const std::filesystem::path& path) {
  std::ifstream f = open_in(path);
  const std::string magic = pnm_token(f);
  if (magic != (C == 1 ? "Pf" : "PF"))
    throw std::runtime_error("unexpected PFM channel count in " + path.string());
  const int w = pnm_int(f, "width");
  const int h = pnm_int(f, "height");
  const double scale = std::stod(pnm_token(f));
  if (scale >= 0.0) throw std::runtime_error("big-endian PFM unsupported: " + path.string());
  if (w <= 0 || h <= 0) throw std::runtime_error("bad PFM size in " + path.string());
  ImageGrid<C> img(w, h);
  std::vector<float> row(static_cast<size_t>(w) * C);
  for (int y = h - 1; y >= 0; --y) {
    f.read(reinterpret_cast<char*>(row.data()),
           static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (f.gcount() != static_cast<std::streamsize>(row.size() * sizeof(float)))
      throw std::runtime_error("truncated PFM data in " + path.string());
    double* dst = &img.data[static_cast<size_t>(y) * w * C];
    for (size_t i = 0; i < row.size(); ++i) dst[i] = row[i];
  }
  return img;
}

}  // namespace

void write_pfm(const std::filesystem::path& path, const ImageGrid<1>& img) {
  write_pfm_impl(path, img);
}
void write_pfm(const std::filesystem::path& path, const ImageGrid<3>& img) {
  write_pfm_impl(path, img);
}
ImageGrid<1> read_pfm1(const std::filesystem::path& path) { return read_pfm_impl<1>(path); }
ImageGrid<3> read_pfm3(const std::filesystem::path& path) { return read_pfm_impl<3>(path); }

void save_poses_json(const std::filesystem::path& path, const std::vector<RigidPose>& poses) {
  json list = json::array();
  for (const RigidPose& p : poses) list.push_back(matrix_to_json(p.matrix()));
  json_to_file(path, list);
}

std::vector<RigidPose> load_poses_json(const std::filesystem::path& path) {
  const json j = json_from_file(path);
  if (!j.is_array()) throw std::runtime_error("pose file must hold a JSON list: " + path.string());
  std::vector<RigidPose> poses;
  poses.reserve(j.size());
  for (const json& e : j) poses.push_back(RigidPose::from_matrix(matrix_from_json(e)));
  return poses;
}

void save_rig_json(const std::filesystem::path& path, const StereoRig& rig) {
  json j;
  j["thermal"] = intrinsics_to_json(rig.thermal);
  j["rgb"] = intrinsics_to_json(rig.rgb);
  j["extrinsic"] = matrix_to_json(rig.t_rgb_thermal.matrix());
  json_to_file(path, j);
}

StereoRig load_rig_json(const std::filesystem::path& path) {
  const json j = json_from_file(path);
  StereoRig rig;
  rig.thermal = intrinsics_from_json(j.at("thermal"));
  rig.rgb = intrinsics_from_json(j.at("rgb"));
  rig.t_rgb_thermal = RigidPose::from_matrix(matrix_from_json(j.at("extrinsic")));
  return rig;
}

std::string frame_name(int index, const std::string& ext) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", index);
  return std::string(buf) + ext;
}

}  // namespace thermoflux
