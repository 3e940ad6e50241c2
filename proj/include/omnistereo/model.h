#pragma once

// Extended unified-sphere optical model for one view of the omnidirectional
// stereo camera: sphere projection with mirror offset xi, lens/mirror axis
// offset, 16th-order radial, radially modulated tangential and thin prism
// distortion, a tilted sensor homography and the camera matrix.

#include <array>
#include <span>
#include <string_view>

#include <Eigen/Core>

#include "omnistereo/error.h"

namespace omni {

inline constexpr int kNumModelParams = 27;

// Index of each entry in the flattened parameter vector.
enum ParamIndex : int {
  kFx = 0,
  kFy,
  kCx,
  kCy,
  kSkew,
  kXi,
  kK1,
  kK2,
  kK3,
  kK4,
  kK5,
  kK6,
  kK7,
  kK8,
  kP1,
  kP2,
  kQ1,
  kQ2,
  kQ3,
  kS1,
  kS2,
  kS3,
  kS4,
  kDxn,
  kDyn,
  kTaux,
  kTauy,
};

// Key names used in JSON, in flattened order.
extern const std::array<std::string_view, kNumModelParams> kParamNames;

struct ViewModelParams {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double skew = 0.0;
  double xi = 0.0;
  std::array<double, 8> k{};  // radial, r^2 .. r^16
  double p1 = 0.0;
  double p2 = 0.0;
  std::array<double, 3> q{};  // radial modulation of the tangential term
  std::array<double, 4> s{};  // thin prism
  double dxn = 0.0;           // lens-mirror offset on the normalized plane
  double dyn = 0.0;
  double taux = 0.0;  // sensor tilt, radians
  double tauy = 0.0;

  std::array<double, kNumModelParams> Flatten() const;
  static ViewModelParams Unflatten(std::span<const double, kNumModelParams> v);

  // Throws kInvariantViolation when fx, fy <= 0, xi < 0 or any entry is not
  // finite.
  void Validate() const;

  bool operator==(const ViewModelParams&) const = default;
};

// Rigid transform x_cam = rotation * x + translation.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose FromAngleAxis(const Eigen::Vector3d& aa,
                            const Eigen::Vector3d& t);
  Eigen::Vector3d AngleAxis() const;

  Eigen::Vector3d Apply(const Eigen::Vector3d& x) const {
    return rotation * x + translation;
  }
  Pose Inverse() const;
  // (*this) after `other`: x -> this(other(x)).
  Pose Compose(const Pose& other) const;

  // Throws kInvariantViolation unless the rotation is orthonormal with
  // det = +1 to `tol`.
  void Validate(double tol = 1e-12) const;
};

struct NormalizedPoint {
  double x = 0.0;
  double y = 0.0;
};

struct PixelPoint {
  double u = 0.0;
  double v = 0.0;
};

struct InversionOptions {
  double tol = 1e-12;
  int max_iter = 50;
};

struct InversionReport {
  NormalizedPoint point;
  int iterations = 0;
  double residual = 0.0;
  bool used_newton = false;
};

// Unit-sphere projection followed by the xi shift and division onto the
// normalized plane.  Throws kDegeneratePoint for a zero vector or a ray at
// or behind the xi horizon.
NormalizedPoint SphereProject(const Eigen::Vector3d& pcam, double xi);

// Inverse of SphereProject; returns a unit vector.  Throws
// kOutsideModelDomain when the point has no preimage.
Eigen::Vector3d SphereLift(const NormalizedPoint& n, double xi);

// Offset, radial, tangential and thin prism distortion.  All three terms
// are evaluated at the offset point with a shared radius.
NormalizedPoint ApplyDistortion(const NormalizedPoint& n,
                                const ViewModelParams& params);

// Throws kNoConvergence when the iteration budget is exhausted or the
// solution lands on a fold of the distortion map.
InversionReport InvertDistortionReport(const NormalizedPoint& d,
                                       const ViewModelParams& params,
                                       const InversionOptions& options = {});
NormalizedPoint InvertDistortion(const NormalizedPoint& d,
                                 const ViewModelParams& params,
                                 const InversionOptions& options = {});

// 3x3 homography of the tilted sensor plane.  Identity at zero tilt.
Eigen::Matrix3d TiltHomography(double taux, double tauy);
NormalizedPoint TiltTransform(const NormalizedPoint& d, double taux,
                              double tauy);
NormalizedPoint InverseTiltTransform(const NormalizedPoint& t, double taux,
                                     double tauy);

PixelPoint ToPixels(const NormalizedPoint& t, const ViewModelParams& params);
NormalizedPoint FromPixels(const PixelPoint& px, const ViewModelParams& params);

// rigid -> sphere -> xi divide -> offset + distortion -> tilt -> intrinsics
PixelPoint ProjectPoint(const Eigen::Vector3d& pworld, const Pose& pose,
                        const ViewModelParams& params);

// Unit ray in the view frame whose projection lands on `px`.
Eigen::Vector3d UnprojectPixel(const PixelPoint& px,
                               const ViewModelParams& params,
                               const InversionOptions& options = {});

}  // namespace omni
