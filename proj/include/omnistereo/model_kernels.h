#pragma once

// Scalar-generic projection kernels.  They are instantiated with double for
// the public API and with ceres::Jet for the calibration Jacobians, so the
// code path differentiated by the optimizer is the one used everywhere else.
// `c` always points at the 27 flattened parameters (see ParamIndex).

#include <cmath>

#include "omnistereo/model.h"

namespace omni::kernels {

enum class Status { kOk, kDegenerate, kTiltHorizon };

inline constexpr double kHorizonEps = 1e-9;
inline constexpr double kTiltEps = 1e-12;

template <typename T>
Status SphereProject(const T* pcam, const T& xi, T* n) {
  using std::sqrt;
  const T norm2 = pcam[0] * pcam[0] + pcam[1] * pcam[1] + pcam[2] * pcam[2];
  if (!(norm2 > T(0.0))) return Status::kDegenerate;
  const T norm = sqrt(norm2);
  const T denom = pcam[2] / norm + xi;
  if (!(denom > T(kHorizonEps))) return Status::kDegenerate;
  n[0] = (pcam[0] / norm) / denom;
  n[1] = (pcam[1] / norm) / denom;
  return Status::kOk;
}

template <typename T>
void ApplyDistortion(const T* n, const T* c, T* out) {
  const T x = n[0] + c[kDxn];
  const T y = n[1] + c[kDyn];
  const T r2 = x * x + y * y;

  // k1 r^2 + ... + k8 r^16 by Horner in r^2.
  T radial = c[kK8];
  for (int i = kK7; i >= kK1; --i) radial = radial * r2 + c[i];
  radial = radial * r2;

  const T modulation = T(1.0) + r2 * (c[kQ1] + r2 * (c[kQ2] + r2 * c[kQ3]));
  const T tx = T(2.0) * c[kP1] * x * y + c[kP2] * (r2 + T(2.0) * x * x);
  const T ty = c[kP1] * (r2 + T(2.0) * y * y) + T(2.0) * c[kP2] * x * y;

  const T r4 = r2 * r2;
  out[0] = x + x * radial + tx * modulation + c[kS1] * r2 + c[kS2] * r4;
  out[1] = y + y * radial + ty * modulation + c[kS3] * r2 + c[kS4] * r4;
}

// H = [[R22, 0, -R02], [0, R22, -R12], [0, 0, 1]] * R with
// R = Ry(tauy) * Rx(taux), row-major into h[9].
template <typename T>
void TiltHomography(const T& taux, const T& tauy, T* h) {
  using std::cos;
  using std::sin;
  const T cx = cos(taux), sx = sin(taux);
  const T cy = cos(tauy), sy = sin(tauy);
  // Rx = [[1,0,0],[0,cx,sx],[0,-sx,cx]], Ry = [[cy,0,-sy],[0,1,0],[sy,0,cy]]
  const T r[9] = {cy, sy * sx, -sy * cx,  //
                  T(0.0), cx, sx,         //
                  sy, -cy * sx, cy * cx};
  const T m00 = r[8], m02 = -r[2], m12 = -r[5];
  h[0] = m00 * r[0] + m02 * r[6];
  h[1] = m00 * r[1] + m02 * r[7];
  h[2] = m00 * r[2] + m02 * r[8];
  h[3] = m00 * r[3] + m12 * r[6];
  h[4] = m00 * r[4] + m12 * r[7];
  h[5] = m00 * r[5] + m12 * r[8];
  h[6] = r[6];
  h[7] = r[7];
  h[8] = r[8];
}

template <typename T>
Status TiltTransform(const T* d, const T& taux, const T& tauy, T* out) {
  using std::abs;
  T h[9];
  TiltHomography(taux, tauy, h);
  const T a = h[0] * d[0] + h[1] * d[1] + h[2];
  const T b = h[3] * d[0] + h[4] * d[1] + h[5];
  const T s = h[6] * d[0] + h[7] * d[1] + h[8];
  if (!(abs(s) >= T(kTiltEps))) return Status::kTiltHorizon;
  out[0] = a / s;
  out[1] = b / s;
  return Status::kOk;
}

template <typename T>
void ToPixels(const T* t, const T* c, T* px) {
  px[0] = c[kFx] * t[0] + c[kSkew] * t[1] + c[kCx];
  px[1] = c[kFy] * t[1] + c[kCy];
}

// Camera-frame point to pixel.
template <typename T>
Status ProjectCamera(const T* pcam, const T* c, T* px) {
  T n[2];
  if (Status st = SphereProject(pcam, c[kXi], n); st != Status::kOk) return st;
  T d[2];
  ApplyDistortion(n, c, d);
  T t[2];
  if (Status st = TiltTransform(d, c[kTaux], c[kTauy], t); st != Status::kOk)
    return st;
  ToPixels(t, c, px);
  return Status::kOk;
}

}  // namespace omni::kernels
