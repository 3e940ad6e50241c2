#include "omnistereo/model.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <ceres/jet.h>

#include "omnistereo/model_kernels.h"

namespace omni {

const char* ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDegeneratePoint: return "DegeneratePoint";
    case ErrorCode::kOutsideModelDomain: return "OutsideModelDomain";
    case ErrorCode::kNoConvergence: return "NoConvergence";
    case ErrorCode::kTiltHorizon: return "TiltHorizon";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kInvariantViolation: return "InvariantViolation";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kDegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::kInitFailure: return "InitFailure";
    case ErrorCode::kNonConvergence: return "NonConvergence";
    case ErrorCode::kInsufficientShared: return "InsufficientShared";
    case ErrorCode::kInconsistentRig: return "InconsistentRig";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kDegenerateCloud: return "DegenerateCloud";
    case ErrorCode::kExhaustedSampling: return "ExhaustedSampling";
    case ErrorCode::kDigestMismatch: return "DigestMismatch";
  }
  return "Unknown";
}

const std::array<std::string_view, kNumModelParams> kParamNames = {
    "fx", "fy", "cx", "cy", "skew", "xi", "k1", "k2", "k3",
    "k4", "k5", "k6", "k7", "k8",   "p1", "p2", "q1", "q2",
    "q3", "s1", "s2", "s3", "s4",   "dxn", "dyn", "taux", "tauy"};

std::array<double, kNumModelParams> ViewModelParams::Flatten() const {
  std::array<double, kNumModelParams> v{};
  v[kFx] = fx;
  v[kFy] = fy;
  v[kCx] = cx;
  v[kCy] = cy;
  v[kSkew] = skew;
  v[kXi] = xi;
  for (int i = 0; i < 8; ++i) v[kK1 + i] = k[i];
  v[kP1] = p1;
  v[kP2] = p2;
  for (int i = 0; i < 3; ++i) v[kQ1 + i] = q[i];
  for (int i = 0; i < 4; ++i) v[kS1 + i] = s[i];
  v[kDxn] = dxn;
  v[kDyn] = dyn;
  v[kTaux] = taux;
  v[kTauy] = tauy;
  return v;
}

ViewModelParams ViewModelParams::Unflatten(
    std::span<const double, kNumModelParams> v) {
  ViewModelParams p;
  p.fx = v[kFx];
  p.fy = v[kFy];
  p.cx = v[kCx];
  p.cy = v[kCy];
  p.skew = v[kSkew];
  p.xi = v[kXi];
  for (int i = 0; i < 8; ++i) p.k[i] = v[kK1 + i];
  p.p1 = v[kP1];
  p.p2 = v[kP2];
  for (int i = 0; i < 3; ++i) p.q[i] = v[kQ1 + i];
  for (int i = 0; i < 4; ++i) p.s[i] = v[kS1 + i];
  p.dxn = v[kDxn];
  p.dyn = v[kDyn];
  p.taux = v[kTaux];
  p.tauy = v[kTauy];
  return p;
}

void ViewModelParams::Validate() const {
  const auto v = Flatten();
  for (int i = 0; i < kNumModelParams; ++i) {
    if (!std::isfinite(v[i])) {
      throw Error(ErrorCode::kInvariantViolation,
                  "parameter " + std::string(kParamNames[i]) + " not finite");
    }
  }
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error(ErrorCode::kInvariantViolation, "focal lengths must be > 0");
  }
  if (xi < 0.0) throw Error(ErrorCode::kInvariantViolation, "xi must be >= 0");
}

Pose Pose::FromAngleAxis(const Eigen::Vector3d& aa, const Eigen::Vector3d& t) {
  Pose p;
  const double angle = aa.norm();
  if (angle > 0.0) {
    p.rotation = Eigen::AngleAxisd(angle, aa / angle).toRotationMatrix();
  }
  p.translation = t;
  return p;
}

Eigen::Vector3d Pose::AngleAxis() const {
  const Eigen::AngleAxisd aa(rotation);
  return aa.axis() * aa.angle();
}

Pose Pose::Inverse() const {
  Pose p;
  p.rotation = rotation.transpose();
  p.translation = -(p.rotation * translation);
  return p;
}

Pose Pose::Compose(const Pose& other) const {
  Pose p;
  p.rotation = rotation * other.rotation;
  p.translation = rotation * other.translation + translation;
  return p;
}

void Pose::Validate(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw Error(ErrorCode::kInvariantViolation, "pose not finite");
  }
  const double ortho =
      (rotation * rotation.transpose() - Eigen::Matrix3d::Identity())
          .cwiseAbs()
          .maxCoeff();
  if (ortho > tol || std::abs(rotation.determinant() - 1.0) > tol) {
    throw Error(ErrorCode::kInvariantViolation, "rotation not orthonormal");
  }
}

NormalizedPoint SphereProject(const Eigen::Vector3d& pcam, double xi) {
  double n[2];
  if (kernels::SphereProject(pcam.data(), xi, n) != kernels::Status::kOk) {
    std::ostringstream os;
    os << "ray (" << pcam.x() << ", " << pcam.y() << ", " << pcam.z()
       << ") at or behind the xi=" << xi << " horizon";
    throw Error(ErrorCode::kDegeneratePoint, os.str());
  }
  return {n[0], n[1]};
}

Eigen::Vector3d SphereLift(const NormalizedPoint& n, double xi) {
  const double r2 = n.x * n.x + n.y * n.y;
  const double disc = 1.0 + r2 * (1.0 - xi * xi);
  if (disc < 0.0) {
    throw Error(ErrorCode::kOutsideModelDomain,
                "normalized point has no preimage on the unit sphere");
  }
  const double w = (xi + std::sqrt(disc)) / (r2 + 1.0);
  if (!(w > 0.0)) {
    throw Error(ErrorCode::kOutsideModelDomain, "lifted ray behind horizon");
  }
  return Eigen::Vector3d(w * n.x, w * n.y, w - xi);
}

NormalizedPoint ApplyDistortion(const NormalizedPoint& n,
                                const ViewModelParams& params) {
  const auto c = params.Flatten();
  const double in[2] = {n.x, n.y};
  double out[2];
  kernels::ApplyDistortion(in, c.data(), out);
  return {out[0], out[1]};
}

namespace {

using Jet2 = ceres::Jet<double, 2>;

// Distortion value and its 2x2 Jacobian at x.
void DistortionWithJacobian(const std::array<double, kNumModelParams>& c,
                            const Eigen::Vector2d& x, Eigen::Vector2d* f,
                            Eigen::Matrix2d* jac) {
  std::array<Jet2, kNumModelParams> cj;
  for (int i = 0; i < kNumModelParams; ++i) cj[i] = Jet2(c[i]);
  const Jet2 in[2] = {Jet2(x.x(), 0), Jet2(x.y(), 1)};
  Jet2 out[2];
  kernels::ApplyDistortion(in, cj.data(), out);
  *f = Eigen::Vector2d(out[0].a, out[1].a);
  jac->row(0) = out[0].v.transpose();
  jac->row(1) = out[1].v.transpose();
}

Eigen::Vector2d Distort(const std::array<double, kNumModelParams>& c,
                        const Eigen::Vector2d& x) {
  double out[2];
  kernels::ApplyDistortion(x.data(), c.data(), out);
  return {out[0], out[1]};
}

// Starting point on the monotone branch of the radial-only map
// rho -> rho (1 + k1 rho^2 + ... + k8 rho^16), along the direction of the
// distorted point.  Keeps the iteration away from the far side of the fold.
Eigen::Vector2d RadialSeed(const std::array<double, kNumModelParams>& c,
                           const Eigen::Vector2d& distorted) {
  const double target = distorted.norm();
  if (target == 0.0) return distorted;
  auto g = [&c](double rho) {
    const double r2 = rho * rho;
    double radial = c[kK8];
    for (int i = kK7; i >= kK1; --i) radial = radial * r2 + c[i];
    return rho * (1.0 + radial * r2);
  };
  constexpr double kStep = 0.01;
  constexpr double kLimit = 20.0;
  double lo = 0.0, g_lo = 0.0;
  while (lo < kLimit) {
    const double hi = lo + kStep;
    const double g_hi = g(hi);
    if (!(g_hi > g_lo)) break;  // fold reached
    if (g_hi >= target) {
      double a = lo, b = hi;
      for (int i = 0; i < 60; ++i) {
        const double m = 0.5 * (a + b);
        (g(m) < target ? a : b) = m;
      }
      return distorted * (0.5 * (a + b) / target);
    }
    lo = hi;
    g_lo = g_hi;
  }
  return distorted * (lo / target);
}

}  // namespace

InversionReport InvertDistortionReport(const NormalizedPoint& d,
                                       const ViewModelParams& params,
                                       const InversionOptions& options) {
  const auto c = params.Flatten();
  const Eigen::Vector2d target(d.x, d.y);

  // Exact when every polynomial coefficient is zero.
  const Eigen::Vector2d delta(params.dxn, params.dyn);
  const bool has_radial =
      std::any_of(params.k.begin(), params.k.end(), [](double v) { return v != 0.0; });
  Eigen::Vector2d x = has_radial ? Eigen::Vector2d(RadialSeed(c, target) - delta)
                                 : Eigen::Vector2d(target - delta);
  Eigen::Vector2d err = Distort(c, x) - target;
  double res = err.norm();

  InversionReport report;
  int it = 1;
  double damping = 1.0;
  bool newton = false;
  int slow_steps = 0;

  while (res >= options.tol && it < options.max_iter) {
    ++it;
    Eigen::Vector2d step;
    if (!newton) {
      step = -damping * err;
    } else {
      Eigen::Vector2d f;
      Eigen::Matrix2d jac;
      DistortionWithJacobian(c, x, &f, &jac);
      const double det = jac.determinant();
      if (!std::isfinite(det) || std::abs(det) < 1e-14) break;
      step = -jac.inverse() * err;
    }

    // Backtrack until the residual decreases.
    Eigen::Vector2d x_new = x + step;
    Eigen::Vector2d err_new = Distort(c, x_new) - target;
    double res_new = err_new.norm();
    int halvings = 0;
    while (!(res_new < res) && halvings < 30) {
      step *= 0.5;
      x_new = x + step;
      err_new = Distort(c, x_new) - target;
      res_new = err_new.norm();
      ++halvings;
      if (!newton) damping *= 0.5;
    }
    if (!(res_new < res)) {
      if (newton) break;
      newton = true;
      continue;
    }

    if (!newton) {
      // Linear rate above one half counts as stagnation.
      slow_steps = (res_new > 0.5 * res) ? slow_steps + 1 : 0;
      if (slow_steps >= 2) newton = true;
    }
    x = x_new;
    err = err_new;
    res = res_new;
  }

  report.point = {x.x(), x.y()};
  report.iterations = it;
  report.residual = res;
  report.used_newton = newton;

  if (!(res < options.tol)) {
    std::ostringstream os;
    os << "distortion inversion stalled after " << it
       << " iterations, residual " << res;
    throw Error(ErrorCode::kNoConvergence, os.str());
  }
  // A root on the far side of a fold is not the physical preimage.
  Eigen::Vector2d f;
  Eigen::Matrix2d jac;
  DistortionWithJacobian(c, x, &f, &jac);
  if (!(jac.determinant() > 0.0)) {
    std::ostringstream os;
    os << "distortion inversion converged onto a fold (det "
       << jac.determinant() << ") after " << it << " iterations";
    throw Error(ErrorCode::kNoConvergence, os.str());
  }
  return report;
}

NormalizedPoint InvertDistortion(const NormalizedPoint& d,
                                 const ViewModelParams& params,
                                 const InversionOptions& options) {
  return InvertDistortionReport(d, params, options).point;
}

Eigen::Matrix3d TiltHomography(double taux, double tauy) {
  double h[9];
  kernels::TiltHomography(taux, tauy, h);
  Eigen::Matrix3d m;
  m << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8];
  return m;
}

namespace {

NormalizedPoint ApplyHomogeneous(const Eigen::Matrix3d& h,
                                 const NormalizedPoint& p) {
  const Eigen::Vector3d v = h * Eigen::Vector3d(p.x, p.y, 1.0);
  if (!(std::abs(v.z()) >= kernels::kTiltEps)) {
    throw Error(ErrorCode::kTiltHorizon, "tilt dehomogenization scale ~ 0");
  }
  return {v.x() / v.z(), v.y() / v.z()};
}

}  // namespace

NormalizedPoint TiltTransform(const NormalizedPoint& d, double taux,
                              double tauy) {
  if (taux == 0.0 && tauy == 0.0) return d;
  const double in[2] = {d.x, d.y};
  double out[2];
  if (kernels::TiltTransform(in, taux, tauy, out) != kernels::Status::kOk) {
    throw Error(ErrorCode::kTiltHorizon, "tilt dehomogenization scale ~ 0");
  }
  return {out[0], out[1]};
}

NormalizedPoint InverseTiltTransform(const NormalizedPoint& t, double taux,
                                     double tauy) {
  if (taux == 0.0 && tauy == 0.0) return t;
  return ApplyHomogeneous(TiltHomography(taux, tauy).inverse(), t);
}

PixelPoint ToPixels(const NormalizedPoint& t, const ViewModelParams& params) {
  return {params.fx * t.x + params.skew * t.y + params.cx,
          params.fy * t.y + params.cy};
}

NormalizedPoint FromPixels(const PixelPoint& px, const ViewModelParams& params) {
  const double y = (px.v - params.cy) / params.fy;
  const double x = (px.u - params.cx - params.skew * y) / params.fx;
  return {x, y};
}

PixelPoint ProjectPoint(const Eigen::Vector3d& pworld, const Pose& pose,
                        const ViewModelParams& params) {
  const Eigen::Vector3d pcam = pose.Apply(pworld);
  const NormalizedPoint n = SphereProject(pcam, params.xi);
  const NormalizedPoint d = ApplyDistortion(n, params);
  const NormalizedPoint t = TiltTransform(d, params.taux, params.tauy);
  return ToPixels(t, params);
}

Eigen::Vector3d UnprojectPixel(const PixelPoint& px,
                               const ViewModelParams& params,
                               const InversionOptions& options) {
  const NormalizedPoint t = FromPixels(px, params);
  const NormalizedPoint d = InverseTiltTransform(t, params.taux, params.tauy);
  const NormalizedPoint n = InvertDistortion(d, params, options);
  return SphereLift(n, params.xi);
}

}  // namespace omni
