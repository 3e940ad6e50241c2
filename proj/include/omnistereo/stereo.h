#pragma once

// Vertical block matching between rectified cylinder images and
// triangulation into metric point clouds.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <vector>

#include "json.hpp"
#include "omnistereo/image.h"
#include "omnistereo/rectify.h"

namespace omni {

struct MatchConfig {
  int block_w = 15;
  int block_h = 15;
  int min_disp = 0;
  int max_disp = 64;
  double uniqueness_ratio = 1.1;
  double texture_threshold = 10.0;  // minimum block variance, gray levels^2
  bool left_right_check = false;    // re-match lower -> upper and compare
  double left_right_tolerance = 1.0;

  void Validate() const;
};

inline constexpr float kInvalidDisparity = std::numeric_limits<float>::quiet_NaN();

struct DisparityImage {
  int width = 0;
  int height = 0;
  std::vector<float> values;  // NaN where invalid
  MatchConfig config;

  bool Valid(int x, int y) const { return !std::isnan(at(x, y)); }
  float at(int x, int y) const { return values[static_cast<size_t>(y) * width + x]; }
  float& at(int x, int y) { return values[static_cast<size_t>(y) * width + x]; }
  size_t CountValid() const;
};

// Upper pixel (u, v) is compared with lower pixel (u, v + d).  Throws
// kDimensionMismatch when the images differ in size.
DisparityImage BlockMatch(const Image& upper, const Image& lower, const MatchConfig& config);

// 16-bit PGM with disparity * 16 and 65535 for invalid pixels, plus a JSON
// sidecar (path + ".json") recording scale and matcher settings.
inline constexpr double kDisparityScale = 1.0 / 16.0;
inline constexpr uint16_t kDisparityInvalid = 65535;
void SaveDisparity(const DisparityImage& disp, const std::filesystem::path& path);
DisparityImage LoadDisparity(const std::filesystem::path& path);

struct CloudPoint {
  float x = 0, y = 0, z = 0;
  uint8_t r = 0, g = 0, b = 0;
};

// Common cylinder frame turned z-up: x along theta = 0, z up, origin at the
// upper viewpoint.
struct PointCloud {
  std::vector<CloudPoint> points;
  bool has_color = false;
};

// rho = fcyl * baseline / d, theta from the column, height -rho * t.  The
// optional color source is an image of the upper cylinder's size.
PointCloud DisparityToCloud(const DisparityImage& disp, const CylinderSpec& spec,
                            const RigGeometry& rig, const Image* color = nullptr);

void SavePly(const PointCloud& cloud, const std::filesystem::path& path, bool binary);
PointCloud LoadPly(const std::filesystem::path& path);

nlohmann::json MatchConfigToJson(const MatchConfig& c);
MatchConfig MatchConfigFromJson(const nlohmann::json& j);

}  // namespace omni
