#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Core>

namespace omni {

// Angular field of view of one view.  Frames are "z down": the z axis runs
// along the mirror axis from the upper towards the lower viewpoint, azimuth
// is measured in the x-y plane from +x towards +y, and elevation is positive
// above the horizontal plane.
struct ViewFov {
  double az_start = 0.0;
  double az_span = 2.0 * std::numbers::pi;
  double elev_min = -std::numbers::pi / 4.0;
  double elev_max = 0.0;

  bool ContainsElevation(double elev) const {
    return elev >= elev_min && elev <= elev_max;
  }
  bool ContainsAzimuth(double az) const {
    double rel = std::fmod(az - az_start, 2.0 * std::numbers::pi);
    if (rel < 0.0) rel += 2.0 * std::numbers::pi;
    return rel <= az_span;
  }
};

inline double Deg2Rad(double deg) { return deg * std::numbers::pi / 180.0; }

// 270 degrees of azimuth; the blind quarter is centred on +y, the short side
// of the off-axis sensor.
inline ViewFov UpperViewFov() {
  return {Deg2Rad(135.0), Deg2Rad(270.0), Deg2Rad(-50.0), Deg2Rad(10.0)};
}
inline ViewFov LowerViewFov() {
  return {Deg2Rad(135.0), Deg2Rad(270.0), Deg2Rad(-20.0), Deg2Rad(10.0)};
}

inline Eigen::Vector3d RayFromAngles(double az, double elev) {
  return {std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az),
          -std::sin(elev)};
}

inline double AzimuthOf(const Eigen::Vector3d& ray) {
  return std::atan2(ray.y(), ray.x());
}
inline double ElevationOf(const Eigen::Vector3d& ray) {
  return std::atan2(-ray.z(), std::hypot(ray.x(), ray.y()));
}

}  // namespace omni
