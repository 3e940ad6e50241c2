#include "omnistereo/floor.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "omnistereo/error.h"
#include "omnistereo/parallel.h"

namespace omni {

void FloorOptions::Validate(double baseline_m) const {
  if (!(drop_m > baseline_m)) {
    throw Error(ErrorCode::kInvariantViolation, "the floor must lie below both viewpoints");
  }
  if (texture_terms < 1 || !(max_frequency > 0.03 && max_frequency < 0.5)) {
    throw Error(ErrorCode::kInvariantViolation, "texture needs terms >= 1 and 0.03 < max_frequency < 0.5");
  }
  if (maxval < 16 || maxval > 65535) throw Error(ErrorCode::kInvariantViolation, "maxval out of range");
}

FloorTexture::FloorTexture(const FloorOptions& o, double fcyl_ref) : fcyl_ref_(fcyl_ref), drop_(o.drop_m) {
  SynthRng rng(o.texture_seed);
  double power = 0.0;
  for (int k = 0; k < o.texture_terms; ++k) {
    const double f = rng.Uniform(0.03, o.max_frequency);
    const double dir = rng.Uniform(0.0, 2.0 * std::numbers::pi);
    Term t{f * std::cos(dir), f * std::sin(dir), rng.Uniform(0.0, 2.0 * std::numbers::pi),
           rng.Uniform(0.5, 1.0)};
    power += 0.5 * t.amp * t.amp;
    terms_.push_back(t);
  }
  norm_ = std::sqrt(power);
}

double FloorTexture::Value(double theta, double rho) const {
  const double a = fcyl_ref_ * theta;
  const double b = fcyl_ref_ * drop_ / rho;
  double s = 0.0;
  for (const Term& t : terms_) s += t.amp * std::sin(2.0 * std::numbers::pi * (t.fu * a + t.fv * b) + t.phase);
  return std::clamp(0.5 + 0.12 * s / norm_, 0.02, 0.98);
}

namespace {

constexpr double kSky = 0.5;

uint16_t Level(double value, int maxval) { return ToPixelValue(value * (maxval - 2), maxval); }

}  // namespace

FloorScene GenFloorScene(const SynthScenario& s, const FloorOptions& o) {
  s.Validate();
  FloorScene scene;
  scene.rig = RigFromRelativePose(s.rig_truth);
  o.Validate(scene.rig.baseline_m);
  scene.drop_m = o.drop_m;
  scene.cylinders = BuildCylinders(scene.rig, o.cylinder);
  const CylinderSpec& spec = scene.cylinders.upper;
  const RemapTable map_u = BuildRemap(s.params_upper, scene.rig.rot_upper, spec, o.cylinder.fov_upper,
                                      s.sensor_width, s.sensor_height);
  const RemapTable map_l = BuildRemap(s.params_lower, scene.rig.rot_lower, scene.cylinders.lower,
                                      o.cylinder.fov_lower, s.sensor_width, s.sensor_height);
  const FloorTexture tex(o, spec.fcyl);
  scene.upper = Image(spec.width, spec.height, 1, o.maxval);
  scene.lower = Image(spec.width, spec.height, 1, o.maxval);
  scene.true_range.assign(static_cast<size_t>(spec.width) * spec.height, std::numeric_limits<float>::quiet_NaN());
  const double lower_drop = o.drop_m - scene.rig.baseline_m;
  ParallelFor(static_cast<size_t>(spec.height), [&](size_t begin, size_t end) {
    for (int y = static_cast<int>(begin); y < static_cast<int>(end); ++y) {
      const double t = spec.Slope(y);
      for (int x = 0; x < spec.width; ++x) {
        const double th = spec.Theta(x);
        if (map_u.Valid(x, y)) {
          double v = kSky;
          if (t > 0.0) {
            const double rho = o.drop_m / t;
            v = tex.Value(th, rho);
            scene.true_range[static_cast<size_t>(y) * spec.width + x] = static_cast<float>(rho);
          }
          scene.upper.at(x, y) = Level(v, o.maxval);
        } else {
          scene.upper.at(x, y) = scene.upper.Sentinel();
        }
        if (map_l.Valid(x, y)) {
          scene.lower.at(x, y) = Level(t > 0.0 ? tex.Value(th, lower_drop / t) : kSky, o.maxval);
        } else {
          scene.lower.at(x, y) = scene.lower.Sentinel();
        }
      }
    }
  });
  return scene;
}

Image RenderFloorSensor(const SynthScenario& s, const FloorOptions& o, View view, int grid_step) {
  s.Validate();
  if (grid_step < 1) throw Error(ErrorCode::kInvariantViolation, "grid_step must be positive");
  const RigGeometry rig = RigFromRelativePose(s.rig_truth);
  o.Validate(rig.baseline_m);
  const bool upper = view == View::kUpper;
  const ViewModelParams& params = upper ? s.params_upper : s.params_lower;
  const ViewFov& fov = upper ? o.cylinder.fov_upper : o.cylinder.fov_lower;
  const Eigen::Matrix3d rot = upper ? rig.rot_upper : rig.rot_lower;
  const double oz = upper ? 0.0 : rig.baseline_m;
  const FloorTexture tex(o, o.cylinder.fcyl);

  const int gw = (s.sensor_width - 1 + grid_step - 1) / grid_step + 1;
  const int gh = (s.sensor_height - 1 + grid_step - 1) / grid_step + 1;
  std::vector<Eigen::Vector3d> rays(static_cast<size_t>(gw) * gh);
  ParallelFor(static_cast<size_t>(gh), [&](size_t begin, size_t end) {
    for (size_t gy = begin; gy < end; ++gy) {
      for (int gx = 0; gx < gw; ++gx) {
        Eigen::Vector3d r = Eigen::Vector3d::Constant(std::numeric_limits<double>::quiet_NaN());
        try {
          r = UnprojectPixel({static_cast<double>(gx * grid_step), static_cast<double>(gy * grid_step)}, params);
        } catch (const Error&) {
        }
        rays[gy * gw + gx] = r;
      }
    }
  });

  Image img(s.sensor_width, s.sensor_height, 1, o.maxval);
  ParallelFor(static_cast<size_t>(s.sensor_height), [&](size_t begin, size_t end) {
    for (int y = static_cast<int>(begin); y < static_cast<int>(end); ++y) {
      const int gy = std::min(y / grid_step, gh - 2);
      const double fy = static_cast<double>(y - gy * grid_step) / grid_step;
      for (int x = 0; x < s.sensor_width; ++x) {
        const int gx = std::min(x / grid_step, gw - 2);
        const double fx = static_cast<double>(x - gx * grid_step) / grid_step;
        const Eigen::Vector3d& a = rays[static_cast<size_t>(gy) * gw + gx];
        const Eigen::Vector3d& b = rays[static_cast<size_t>(gy) * gw + gx + 1];
        const Eigen::Vector3d& c = rays[static_cast<size_t>(gy + 1) * gw + gx];
        const Eigen::Vector3d& d = rays[static_cast<size_t>(gy + 1) * gw + gx + 1];
        double v = 0.0;
        if (a.allFinite() && b.allFinite() && c.allFinite() && d.allFinite()) {
          const Eigen::Vector3d ray =
              ((1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d)).normalized();
          if (fov.ContainsElevation(ElevationOf(ray)) && fov.ContainsAzimuth(AzimuthOf(ray))) {
            const Eigen::Vector3d rc = rot * ray;
            v = kSky;
            if (rc.z() > 0.0) {
              const double k = (o.drop_m - oz) / rc.z();
              v = tex.Value(std::atan2(rc.y(), rc.x()), k * std::hypot(rc.x(), rc.y()));
            }
          }
        }
        img.at(x, y) = Level(v, o.maxval);
      }
    }
  });
  return img;
}

void AddDisparityNoise(DisparityImage* disp, double sigma, uint64_t seed) {
  SynthRng rng(seed);
  for (float& d : disp->values) {
    if (std::isnan(d)) continue;
    d = static_cast<float>(d + sigma * rng.Normal());
    if (!(d > 0.0f)) d = kInvalidDisparity;
  }
}

nlohmann::json FloorOptionsToJson(const FloorOptions& o) {
  return {{"drop_m", o.drop_m},
          {"texture_seed", o.texture_seed},
          {"texture_terms", o.texture_terms},
          {"max_frequency", o.max_frequency},
          {"fcyl", o.cylinder.fcyl},
          {"fov_upper", FovToJson(o.cylinder.fov_upper)},
          {"fov_lower", FovToJson(o.cylinder.fov_lower)},
          {"maxval", o.maxval}};
}

FloorOptions FloorOptionsFromJson(const nlohmann::json& j) {
  FloorOptions o;
  try {
    o.drop_m = j.value("drop_m", o.drop_m);
    o.texture_seed = j.value("texture_seed", o.texture_seed);
    o.texture_terms = j.value("texture_terms", o.texture_terms);
    o.max_frequency = j.value("max_frequency", o.max_frequency);
    o.cylinder.fcyl = j.value("fcyl", o.cylinder.fcyl);
    if (j.contains("fov_upper")) o.cylinder.fov_upper = FovFromJson(j.at("fov_upper"));
    if (j.contains("fov_lower")) o.cylinder.fov_lower = FovFromJson(j.at("fov_lower"));
    o.maxval = j.value("maxval", o.maxval);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("floor options: ") + e.what());
  }
  return o;
}

}  // namespace omni
