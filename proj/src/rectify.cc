#include "omnistereo/rectify.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include "omnistereo/error.h"
#include "omnistereo/model_io.h"
#include "omnistereo/model_kernels.h"
#include "omnistereo/parallel.h"

namespace omni {

void CylinderSpec::Validate() const {
  if (!(dtheta > 0.0) || !(fcyl > 0.0) || width < 1 || height < 1) {
    throw Error(ErrorCode::kInvariantViolation,
                "cylinder needs dtheta > 0, fcyl > 0 and a positive size");
  }
  if (width * dtheta > 2.0 * std::numbers::pi + 1e-9) {
    throw Error(ErrorCode::kInvariantViolation, "cylinder wider than a full turn");
  }
}

Eigen::Vector3d CylinderSpec::Ray(double u, double v) const {
  const double th = Theta(u);
  return {std::cos(th), std::sin(th), Slope(v)};
}

bool CylinderSpec::Project(const Eigen::Vector3d& p, double* u, double* v) const {
  const double rho = std::hypot(p.x(), p.y());
  if (!(rho > 0.0)) return false;
  double rel = std::atan2(p.y(), p.x()) - theta0;
  rel = std::fmod(rel, 2.0 * std::numbers::pi);
  if (rel < 0.0) rel += 2.0 * std::numbers::pi;
  *u = rel / dtheta;
  *v = v0 - fcyl * p.z() / rho;
  return true;
}

Eigen::Vector3d RigGeometry::LowerCentre() const {
  return -(pose_rel.rotation.transpose() * pose_rel.translation);
}

RigGeometry RigFromRelativePose(const Pose& pose_rel) {
  RigGeometry rig;
  rig.pose_rel = pose_rel;
  const Eigen::Vector3d c = rig.LowerCentre();
  rig.baseline_m = c.norm();
  if (!(rig.baseline_m > 0.0) || !(c.z() > 0.0)) {
    throw Error(ErrorCode::kInconsistentRig,
                "lower viewpoint must lie below the upper one (+z of the upper view)");
  }
  rig.rot_upper =
      Eigen::Quaterniond::FromTwoVectors(c / rig.baseline_m, Eigen::Vector3d::UnitZ())
          .toRotationMatrix();
  rig.rot_lower = rig.rot_upper * pose_rel.rotation.transpose();
  return rig;
}

RigGeometry AverageRig(const CalibrationResult& upper, const CalibrationResult& lower,
                       const std::vector<std::string>& shared_ids) {
  std::vector<Pose> rel;
  for (const auto& id : shared_ids) {
    auto u = upper.board_poses.find(id);
    auto l = lower.board_poses.find(id);
    if (u == upper.board_poses.end() || l == lower.board_poses.end()) continue;
    rel.push_back(l->second.Compose(u->second.Inverse()));
  }
  if (rel.size() < 2) {
    throw Error(ErrorCode::kInsufficientShared,
                std::to_string(rel.size()) + " shared board(s) with poses in both views; need 2");
  }
  const Eigen::Quaterniond q0(rel[0].rotation);
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  for (const Pose& p : rel) {
    Eigen::Vector4d q = Eigen::Quaterniond(p.rotation).coeffs();
    if (q.dot(q0.coeffs()) < 0.0) q = -q;
    m += q * q.transpose();
    t += p.translation;
  }
  t /= static_cast<double>(rel.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(m);
  Eigen::Vector4d qv = eig.eigenvectors().col(3);
  Eigen::Quaterniond qm(qv[3], qv[0], qv[1], qv[2]);
  qm.normalize();
  Pose mean;
  mean.rotation = qm.toRotationMatrix();
  mean.translation = t;

  RigGeometry rig = RigFromRelativePose(mean);
  for (const Pose& p : rel) {
    const Eigen::AngleAxisd d(p.rotation * mean.rotation.transpose());
    rig.scatter_rot_rad = std::max(rig.scatter_rot_rad, std::abs(d.angle()));
    rig.scatter_trans_m = std::max(rig.scatter_trans_m, (p.translation - t).norm());
  }
  return rig;
}

RigGeometry EstimateRig(const CalibrationResult& upper, const CalibrationResult& lower,
                        const std::vector<std::string>& shared_ids) {
  const RigGeometry rig = AverageRig(upper, lower, shared_ids);
  if (rig.scatter_rot_rad > 0.05 || rig.scatter_trans_m > 0.05 * rig.baseline_m) {
    throw Error(ErrorCode::kInconsistentRig,
                "shared boards disagree: rotation scatter " + std::to_string(rig.scatter_rot_rad) +
                    " rad, translation scatter " + std::to_string(rig.scatter_trans_m) + " m");
  }
  return rig;
}

CylinderPair BuildCylinders(const RigGeometry& rig, const CylinderOptions& opt) {
  (void)rig;  // the rig fixes the frames; the grid depends only on the options
  if (!(opt.fcyl > 0.0)) throw Error(ErrorCode::kInvariantViolation, "fcyl must be positive");
  CylinderSpec s;
  s.fcyl = opt.fcyl;
  s.dtheta = 1.0 / opt.fcyl;
  s.theta0 = opt.fov_upper.az_start;
  const double span = std::min(opt.fov_upper.az_span, 2.0 * std::numbers::pi);
  s.width = std::max(1, static_cast<int>(std::floor(span / s.dtheta + 1e-9)));
  // Slope t = z / rho = -tan(elevation).
  const double t_max = std::max(-std::tan(opt.fov_upper.elev_min), -std::tan(opt.fov_lower.elev_min));
  const double t_min = std::min(-std::tan(opt.fov_upper.elev_max), -std::tan(opt.fov_lower.elev_max));
  s.v0 = std::ceil(opt.fcyl * t_max);
  s.height = static_cast<int>(std::ceil(s.v0 - opt.fcyl * t_min)) + 1;
  s.Validate();
  return {s, s};
}

RemapTable BuildRemap(const ViewModelParams& params, const Eigen::Matrix3d& rot,
                      const CylinderSpec& spec, const ViewFov& fov, int sensor_width,
                      int sensor_height) {
  spec.Validate();
  RemapTable t;
  t.width = spec.width;
  t.height = spec.height;
  t.uv.assign(2 * static_cast<size_t>(t.width) * t.height, std::numeric_limits<float>::quiet_NaN());
  const auto c = params.Flatten();
  const Eigen::Matrix3d rt = rot.transpose();
  ParallelFor(static_cast<size_t>(t.height), [&](size_t begin, size_t end) {
    for (size_t y = begin; y < end; ++y) {
      for (int x = 0; x < t.width; ++x) {
        const Eigen::Vector3d ray = rt * spec.Ray(x, static_cast<double>(y));
        if (!fov.ContainsElevation(ElevationOf(ray)) || !fov.ContainsAzimuth(AzimuthOf(ray))) {
          continue;
        }
        double px[2];
        if (kernels::ProjectCamera(ray.data(), c.data(), px) != kernels::Status::kOk) continue;
        if (!(px[0] >= 0.0 && px[1] >= 0.0 && px[0] <= sensor_width - 1.0 &&
              px[1] <= sensor_height - 1.0)) {
          continue;
        }
        const size_t i = 2 * (y * t.width + x);
        t.uv[i] = static_cast<float>(px[0]);
        t.uv[i + 1] = static_cast<float>(px[1]);
      }
    }
  });
  return t;
}

namespace {

void PutU32(std::string* out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out->push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t GetU32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
         static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

}  // namespace

void SaveRemap(const RemapTable& t, const std::filesystem::path& path) {
  std::string buf = "OSCREMAP";
  PutU32(&buf, static_cast<uint32_t>(t.width));
  PutU32(&buf, static_cast<uint32_t>(t.height));
  buf.reserve(buf.size() + 4 * t.uv.size());
  for (float f : t.uv) PutU32(&buf, std::bit_cast<uint32_t>(f));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error(ErrorCode::kIoError, "short write to " + path.string());
}

RemapTable LoadRemap(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 16 || std::memcmp(buf.data(), "OSCREMAP", 8) != 0) {
    throw Error(ErrorCode::kParseError, path.string() + ": not a remap table");
  }
  RemapTable t;
  t.width = static_cast<int>(GetU32(buf.data() + 8));
  t.height = static_cast<int>(GetU32(buf.data() + 12));
  const size_t n = 2 * static_cast<size_t>(t.width) * t.height;
  if (buf.size() != 16 + 4 * n) {
    throw Error(ErrorCode::kParseError, path.string() + ": remap size does not match header");
  }
  t.uv.resize(n);
  for (size_t i = 0; i < n; ++i) t.uv[i] = std::bit_cast<float>(GetU32(buf.data() + 16 + 4 * i));
  return t;
}

Image ExpandImage(const Image& sensor, const RemapTable& t) {
  Image out(t.width, t.height, sensor.channels, sensor.maxval);
  ParallelFor(static_cast<size_t>(t.height), [&](size_t begin, size_t end) {
    for (size_t y = begin; y < end; ++y) {
      for (int x = 0; x < t.width; ++x) {
        const size_t i = 2 * (y * t.width + x);
        const int yi = static_cast<int>(y);
        bool ok = !std::isnan(t.uv[i]);
        for (int ch = 0; ch < sensor.channels; ++ch) {
          double value = 0.0;
          ok = ok && SampleBilinear(sensor, t.uv[i], t.uv[i + 1], ch, &value);
          out.at(x, yi, ch) = ok ? ToPixelValue(value, sensor.maxval) : out.Sentinel();
        }
        if (!ok) {
          for (int ch = 0; ch < sensor.channels; ++ch) out.at(x, yi, ch) = out.Sentinel();
        }
      }
    }
  });
  return out;
}

Image ExpandImage(const Image& sensor, const ViewModelParams& params,
                  const Eigen::Matrix3d& rot, const CylinderSpec& spec, const ViewFov& fov) {
  return ExpandImage(sensor, BuildRemap(params, rot, spec, fov, sensor.width, sensor.height));
}

nlohmann::json CylinderToJson(const CylinderSpec& s) {
  return {{"theta0", s.theta0}, {"dtheta", s.dtheta}, {"fcyl", s.fcyl},
          {"v0", s.v0},         {"width", s.width},   {"height", s.height}};
}

CylinderSpec CylinderFromJson(const nlohmann::json& j) {
  CylinderSpec s;
  try {
    s.theta0 = j.at("theta0").get<double>();
    s.dtheta = j.at("dtheta").get<double>();
    s.fcyl = j.at("fcyl").get<double>();
    s.v0 = j.at("v0").get<double>();
    s.width = j.at("width").get<int>();
    s.height = j.at("height").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("cylinder spec: ") + e.what());
  }
  s.Validate();
  return s;
}

namespace {

nlohmann::json MatrixToJson(const Eigen::Matrix3d& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2)});
  return rows;
}

Eigen::Matrix3d MatrixFromJson(const nlohmann::json& j) {
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m(r, c) = j.at(r).at(c).get<double>();
  }
  return m;
}

}  // namespace

nlohmann::json RigToJson(const RigGeometry& rig) {
  return {{"pose_rel", PoseToJson(rig.pose_rel)},
          {"baseline_m", rig.baseline_m},
          {"rot_upper", MatrixToJson(rig.rot_upper)},
          {"rot_lower", MatrixToJson(rig.rot_lower)},
          {"scatter_rot_rad", rig.scatter_rot_rad},
          {"scatter_trans_m", rig.scatter_trans_m}};
}

RigGeometry RigFromJson(const nlohmann::json& j) {
  RigGeometry rig;
  try {
    rig.pose_rel = PoseFromJson(j.at("pose_rel"));
    rig.baseline_m = j.at("baseline_m").get<double>();
    rig.rot_upper = MatrixFromJson(j.at("rot_upper"));
    rig.rot_lower = MatrixFromJson(j.at("rot_lower"));
    rig.scatter_rot_rad = j.at("scatter_rot_rad").get<double>();
    rig.scatter_trans_m = j.at("scatter_trans_m").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("rig: ") + e.what());
  }
  if (!(rig.baseline_m > 0.0)) throw Error(ErrorCode::kInvariantViolation, "rig baseline must be positive");
  return rig;
}

}  // namespace omni
