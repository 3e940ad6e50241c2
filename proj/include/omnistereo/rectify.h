#pragma once

// Rig estimation from shared boards, the common cylinder, and resampling of
// sensor images onto it.
//
// Cylinder frame: z runs along the baseline from the upper to the lower
// viewpoint (downwards).  A cylinder pixel (u, v) looks along
// (cos th, sin th, t) with th = theta0 + u * dtheta and t = (v0 - v) / fcyl,
// so a point that is lower in the scene appears at a smaller row, and the
// lower view sees every finite point at a larger row than the upper view.

#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "omnistereo/calibrate.h"
#include "omnistereo/fov.h"
#include "omnistereo/image.h"
#include "omnistereo/model.h"

namespace omni {

struct CylinderSpec {
  double theta0 = 0.0;
  double dtheta = 1e-3;
  double fcyl = 1000.0;
  double v0 = 0.0;
  int width = 1;
  int height = 1;

  void Validate() const;
  double Theta(double u) const { return theta0 + u * dtheta; }
  double Slope(double v) const { return (v0 - v) / fcyl; }
  // Direction in the cylinder frame, unit horizontal component.
  Eigen::Vector3d Ray(double u, double v) const;
  // Cylinder pixel of a cylinder-frame point; false on the axis.
  bool Project(const Eigen::Vector3d& p, double* u, double* v) const;
  bool operator==(const CylinderSpec&) const = default;
};

struct RigGeometry {
  Pose pose_rel;  // upper view coordinates -> lower view coordinates
  double baseline_m = 0.0;
  Eigen::Matrix3d rot_upper = Eigen::Matrix3d::Identity();  // view -> cylinder
  Eigen::Matrix3d rot_lower = Eigen::Matrix3d::Identity();
  double scatter_rot_rad = 0.0;
  double scatter_trans_m = 0.0;

  // Lower viewpoint in upper view coordinates.
  Eigen::Vector3d LowerCentre() const;
};

// Fills baseline and the two alignment rotations from pose_rel.  Throws
// kInconsistentRig unless the lower viewpoint lies on the +z side.
RigGeometry RigFromRelativePose(const Pose& pose_rel);

// Averages pose_lower(b) o pose_upper(b)^-1 over shared boards and fills the
// scatter fields.  Throws kInsufficientShared (< 2 boards with both poses).
RigGeometry AverageRig(const CalibrationResult& upper, const CalibrationResult& lower,
                       const std::vector<std::string>& shared_ids);

// AverageRig, then throws kInconsistentRig when rotation scatter > 0.05 rad
// or translation scatter > 5% of baseline.
RigGeometry EstimateRig(const CalibrationResult& upper, const CalibrationResult& lower,
                        const std::vector<std::string>& shared_ids);

struct CylinderOptions {
  ViewFov fov_upper = UpperViewFov();
  ViewFov fov_lower = LowerViewFov();
  double fcyl = 714.0;
};

struct CylinderPair {
  CylinderSpec upper;
  CylinderSpec lower;
};

// Both specs are identical: same columns, v0 and height covering the union
// of the two elevation ranges.
CylinderPair BuildCylinders(const RigGeometry& rig, const CylinderOptions& options);

// Sensor coordinates for every cylinder pixel; NaN where the ray is outside
// the view's FoV, not projectable, or off the sensor.
struct RemapTable {
  int width = 0;
  int height = 0;
  std::vector<float> uv;  // interleaved (u, v), row-major

  bool Valid(int x, int y) const { return !std::isnan(uv[2 * (static_cast<size_t>(y) * width + x)]); }
  // Bitwise, so NaN entries compare equal.
  bool operator==(const RemapTable& o) const {
    return width == o.width && height == o.height && uv.size() == o.uv.size() &&
           std::memcmp(uv.data(), o.uv.data(), uv.size() * sizeof(float)) == 0;
  }
};

RemapTable BuildRemap(const ViewModelParams& params, const Eigen::Matrix3d& rot,
                      const CylinderSpec& spec, const ViewFov& fov, int sensor_width,
                      int sensor_height);
// Little-endian: "OSCREMAP", u32 width, u32 height, then float32 pairs.
void SaveRemap(const RemapTable& table, const std::filesystem::path& path);
RemapTable LoadRemap(const std::filesystem::path& path);

Image ExpandImage(const Image& sensor, const RemapTable& table);
Image ExpandImage(const Image& sensor, const ViewModelParams& params,
                  const Eigen::Matrix3d& rot, const CylinderSpec& spec, const ViewFov& fov);

nlohmann::json CylinderToJson(const CylinderSpec& spec);
CylinderSpec CylinderFromJson(const nlohmann::json& j);
nlohmann::json RigToJson(const RigGeometry& rig);
RigGeometry RigFromJson(const nlohmann::json& j);

}  // namespace omni
