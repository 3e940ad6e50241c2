#pragma once

// Synthetic textured floor seen by both views, the oracle for ranging.
//
// The floor is the plane z = drop in the common cylinder frame (z down the
// baseline, origin at the upper viewpoint), i.e. z = -drop in the z-up cloud
// frame.  Its texture is a sum of sinusoids in (fcyl_ref * theta,
// fcyl_ref * drop / rho), which are upper-cylinder pixel units, so the
// rendered cylinder images are band-limited by construction.

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "omnistereo/image.h"
#include "omnistereo/rectify.h"
#include "omnistereo/stereo.h"
#include "omnistereo/synth.h"

namespace omni {

struct FloorOptions {
  double drop_m = 1.0;  // floor below the upper viewpoint
  uint64_t texture_seed = 7;
  int texture_terms = 24;
  double max_frequency = 0.15;  // cycles per cylinder pixel
  CylinderOptions cylinder;
  int maxval = 65535;

  void Validate(double baseline_m) const;
};

class FloorTexture {
 public:
  FloorTexture(const FloorOptions& options, double fcyl_ref);
  // Intensity in [0, 1] of the floor point at azimuth theta, range rho.
  double Value(double theta, double rho) const;

 private:
  struct Term {
    double fu, fv, phase, amp;
  };
  std::vector<Term> terms_;
  double fcyl_ref_;
  double drop_;
  double norm_;
};

struct FloorScene {
  RigGeometry rig;
  CylinderPair cylinders;
  Image upper;  // cylinder images; sentinel outside each view's coverage
  Image lower;
  std::vector<float> true_range;  // per upper-cylinder pixel, NaN off the floor
  double drop_m = 1.0;

  // n . x + d = 0 in the z-up cloud frame.
  Eigen::Vector4d CloudPlane() const { return {0.0, 0.0, 1.0, drop_m}; }
  float Range(int x, int y) const { return true_range[static_cast<size_t>(y) * upper.width + x]; }
};

// Renders directly on the cylinders with the true rig and models.
FloorScene GenFloorScene(const SynthScenario& scenario, const FloorOptions& options);

// Renders one view's sensor image.  Rays come from unprojecting a coarse
// pixel grid (every `grid_step` px) and interpolating.
Image RenderFloorSensor(const SynthScenario& scenario, const FloorOptions& options, View view,
                        int grid_step = 4);

// Adds N(0, sigma^2) to every valid disparity, in row-major order.
void AddDisparityNoise(DisparityImage* disp, double sigma, uint64_t seed);

nlohmann::json FloorOptionsToJson(const FloorOptions& o);
FloorOptions FloorOptionsFromJson(const nlohmann::json& j);

}  // namespace omni
