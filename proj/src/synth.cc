#include "omnistereo/synth.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "omnistereo/error.h"
#include "omnistereo/model_io.h"
#include "omnistereo/model_kernels.h"

namespace omni {

void PoseSampler::Validate() const {
  if (!(dist_min > 0.0) || !(dist_max >= dist_min)) {
    throw Error(ErrorCode::kInvariantViolation, "pose sampler distance range");
  }
  if (!(max_tilt >= 0.0) || max_tilt >= std::numbers::pi / 2.0) {
    throw Error(ErrorCode::kInvariantViolation, "pose sampler tilt must be in [0, 90) deg");
  }
}

SynthScenario SynthScenario::Default() {
  SynthScenario s;
  s.params_upper = LoadParams(std::filesystem::path(OMNI_DATA_DIR) / "table1_upper.json");
  s.params_lower = LoadParams(std::filesystem::path(OMNI_DATA_DIR) / "table2_lower.json");
  const Eigen::Vector3d lower_centre =
      0.1 * Eigen::Vector3d(0.005, -0.008, 1.0).normalized();
  const Pose rot = Pose::FromAngleAxis({0.003, -0.002, 0.004}, Eigen::Vector3d::Zero());
  s.rig_truth = rot;
  s.rig_truth.translation = -(rot.rotation * lower_centre);
  return s;
}

void SynthScenario::Validate() const {
  params_upper.Validate();
  params_lower.Validate();
  rig_truth.Validate(1e-9);
  board.Validate();
  pose_sampler.Validate();
  if (n_upper < 1 || n_lower < 0 || n_shared < 0 || n_shared > std::min(n_upper, n_lower)) {
    throw Error(ErrorCode::kInvariantViolation,
                "board counts: need n_upper >= 1 and 0 <= n_shared <= min(n_upper, n_lower)");
  }
  if (!(noise_px >= 0.0)) {
    throw Error(ErrorCode::kInvariantViolation, "noise_px must be >= 0");
  }
  if (sensor_width <= 0 || sensor_height <= 0) {
    throw Error(ErrorCode::kInvariantViolation, "sensor size must be positive");
  }
  if (n_lower > 0 && !(Baseline() > 0.0)) {
    throw Error(ErrorCode::kInvariantViolation, "rig baseline must be positive");
  }
}

SynthRng::SynthRng(uint64_t seed) : state_(seed) {}

uint64_t SynthRng::Next() {
  // splitmix64
  uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double SynthRng::Uniform() { return static_cast<double>(Next() >> 11) * 0x1.0p-53; }

double SynthRng::Normal() {
  const double u1 = 1.0 - Uniform();
  const double u2 = Uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

namespace {

Pose SampleBoardPose(const PoseSampler& sampler, const ViewFov& fov,
                     const BoardSpec& board, SynthRng& rng) {
  const double az = fov.az_start + rng.Uniform() * fov.az_span;
  const double el = rng.Uniform(fov.elev_min, fov.elev_max);
  const double dist = rng.Uniform(sampler.dist_min, sampler.dist_max);
  const Eigen::Vector3d dir = RayFromAngles(az, el);

  // Normal facing the viewpoint, tipped about a random in-plane axis.
  Eigen::Vector3d a = dir.cross(Eigen::Vector3d::UnitZ());
  if (a.norm() < 1e-6) a = dir.cross(Eigen::Vector3d::UnitX());
  a.normalize();
  const Eigen::Vector3d b = dir.cross(a);
  const double axis_angle = rng.Uniform(0.0, 2.0 * std::numbers::pi);
  const Eigen::Vector3d tilt_axis = std::cos(axis_angle) * a + std::sin(axis_angle) * b;
  const double tilt = rng.Uniform(0.0, sampler.max_tilt);
  const Eigen::Vector3d normal = Eigen::AngleAxisd(tilt, tilt_axis) * (-dir);

  Eigen::Vector3d x = a - a.dot(normal) * normal;
  x.normalize();
  const double spin = rng.Uniform(0.0, 2.0 * std::numbers::pi);
  x = Eigen::AngleAxisd(spin, normal) * x;

  Pose pose;
  pose.rotation.col(0) = x;
  pose.rotation.col(1) = normal.cross(x);
  pose.rotation.col(2) = normal;
  const Eigen::Vector3d centre((board.cols - 1) * board.pitch / 2.0,
                               (board.rows - 1) * board.pitch / 2.0, 0.0);
  pose.translation = dist * dir - pose.rotation * centre;
  return pose;
}

// Noise-free detections inside the view's FoV and on the sensor.
std::vector<ObservedPoint> VisiblePoints(const SynthScenario& s, const ViewFov& fov,
                                         const ViewModelParams& params, const Pose& pose) {
  const auto c = params.Flatten();
  std::vector<ObservedPoint> points;
  for (int r = 0; r < s.board.rows; ++r) {
    for (int col = 0; col < s.board.cols; ++col) {
      const GridIndex g{r, col};
      const Eigen::Vector3d p = pose.Apply(BoardPoint(s.board, g));
      const double el = ElevationOf(p);
      if (!fov.ContainsElevation(el) || !fov.ContainsAzimuth(AzimuthOf(p))) continue;
      double px[2];
      if (kernels::ProjectCamera(p.data(), c.data(), px) != kernels::Status::kOk) continue;
      if (!(px[0] >= 0.0 && px[0] <= s.sensor_width - 1.0 && px[1] >= 0.0 &&
            px[1] <= s.sensor_height - 1.0)) {
        continue;
      }
      points.push_back({g, {px[0], px[1]}});
    }
  }
  return points;
}

bool EnoughPoints(const SynthScenario& s, const std::vector<ObservedPoint>& pts) {
  return 5 * static_cast<int>(pts.size()) >= 4 * s.board.NumPoints();
}

// sigma is the RMS length of the 2-D displacement, the same measure as
// rms_px, so each axis gets sigma / sqrt(2).
void AddNoise(double sigma, SynthRng& rng, std::vector<ObservedPoint>* pts) {
  if (sigma <= 0.0) return;
  const double axis = sigma / std::numbers::sqrt2;
  for (auto& p : *pts) {
    p.pixel.u += axis * rng.Normal();
    p.pixel.v += axis * rng.Normal();
  }
}

std::string BoardId(int k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "b%04d", k);
  return buf;
}

ViewFov Intersect(const ViewFov& a, const ViewFov& b) {
  ViewFov f = a;
  f.elev_min = std::max(a.elev_min, b.elev_min);
  f.elev_max = std::min(a.elev_max, b.elev_max);
  return f;
}

}  // namespace

ObservationCorpus GenCorpus(const SynthScenario& s, SynthTruth* truth) {
  s.Validate();
  SynthRng rng(s.rng_seed);
  ObservationCorpus corpus;
  corpus.board = s.board;
  corpus.sensor_width = s.sensor_width;
  corpus.sensor_height = s.sensor_height;
  SynthTruth local;
  SynthTruth& t = truth ? *truth : local;
  t = SynthTruth{};
  int next_id = 0;

  // kind 0: shared, 1: upper only, 2: lower only
  const int wanted[3] = {s.n_shared, s.n_upper - s.n_shared, s.n_lower - s.n_shared};
  const ViewFov sample_fov[3] = {Intersect(s.fov_upper, s.fov_lower), s.fov_upper,
                                 s.fov_lower};
  for (int kind = 0; kind < 3; ++kind) {
    int made = 0;
    long attempts = 0;
    while (made < wanted[kind]) {
      if (++attempts > 100L * wanted[kind]) {
        throw Error(ErrorCode::kExhaustedSampling,
                    "only " + std::to_string(made) + " of " + std::to_string(wanted[kind]) +
                        " boards found after " + std::to_string(attempts - 1) + " draws");
      }
      Pose pose = SampleBoardPose(s.pose_sampler, sample_fov[kind], s.board, rng);
      std::vector<ObservedPoint> up, lo;
      Pose pose_lower;
      if (kind == 2) {
        pose_lower = pose;
      } else {
        pose_lower = s.rig_truth.Compose(pose);
        up = VisiblePoints(s, s.fov_upper, s.params_upper, pose);
        if (!EnoughPoints(s, up)) continue;
      }
      if (kind != 1) {
        lo = VisiblePoints(s, s.fov_lower, s.params_lower, pose_lower);
        if (!EnoughPoints(s, lo)) continue;
      }
      const std::string id = BoardId(next_id++);
      if (kind != 2) {
        AddNoise(s.noise_px, rng, &up);
        corpus.observations.push_back({id, View::kUpper, up});
        t.poses_upper[id] = pose;
      }
      if (kind != 1) {
        AddNoise(s.noise_px, rng, &lo);
        corpus.observations.push_back({id, View::kLower, lo});
        t.poses_lower[id] = pose_lower;
      }
      if (kind == 0) t.shared.push_back(id);
      ++made;
    }
  }
  corpus.Canonicalize();
  corpus.Validate();
  return corpus;
}

nlohmann::json FovToJson(const ViewFov& f) {
  const double k = 180.0 / std::numbers::pi;
  return {{"az_start_deg", f.az_start * k},
          {"az_span_deg", f.az_span * k},
          {"elev_min_deg", f.elev_min * k},
          {"elev_max_deg", f.elev_max * k}};
}

ViewFov FovFromJson(const nlohmann::json& j) {
  return {Deg2Rad(j.at("az_start_deg").get<double>()),
          Deg2Rad(j.at("az_span_deg").get<double>()),
          Deg2Rad(j.at("elev_min_deg").get<double>()),
          Deg2Rad(j.at("elev_max_deg").get<double>())};
}

nlohmann::json ScenarioToJson(const SynthScenario& s) {
  return {{"params_upper", ParamsToJson(s.params_upper)},
          {"params_lower", ParamsToJson(s.params_lower)},
          {"rig_truth", PoseToJson(s.rig_truth)},
          {"board", {{"rows", s.board.rows}, {"cols", s.board.cols}, {"pitch", s.board.pitch}}},
          {"n_upper", s.n_upper},
          {"n_lower", s.n_lower},
          {"n_shared", s.n_shared},
          {"pose_sampler",
           {{"dist_min", s.pose_sampler.dist_min},
            {"dist_max", s.pose_sampler.dist_max},
            {"max_tilt_deg", s.pose_sampler.max_tilt * 180.0 / std::numbers::pi}}},
          {"noise_px", s.noise_px},
          {"rng_seed", s.rng_seed},
          {"sensor", {{"width", s.sensor_width}, {"height", s.sensor_height}}},
          {"fov_upper", FovToJson(s.fov_upper)},
          {"fov_lower", FovToJson(s.fov_lower)}};
}

// Keys other than the two parameter sets fall back to Default().
SynthScenario ScenarioFromJson(const nlohmann::json& j) {
  SynthScenario s = SynthScenario::Default();
  try {
    s.params_upper = ParamsFromJson(j.at("params_upper"));
    s.params_lower = ParamsFromJson(j.at("params_lower"));
    if (j.contains("rig_truth")) s.rig_truth = PoseFromJson(j.at("rig_truth"));
    if (j.contains("board")) {
      const auto& b = j.at("board");
      s.board = {b.at("rows").get<int>(), b.at("cols").get<int>(), b.at("pitch").get<double>()};
    }
    s.n_upper = j.value("n_upper", s.n_upper);
    s.n_lower = j.value("n_lower", s.n_lower);
    s.n_shared = j.value("n_shared", s.n_shared);
    if (j.contains("pose_sampler")) {
      const auto& p = j.at("pose_sampler");
      s.pose_sampler.dist_min = p.value("dist_min", s.pose_sampler.dist_min);
      s.pose_sampler.dist_max = p.value("dist_max", s.pose_sampler.dist_max);
      if (p.contains("max_tilt_deg")) {
        s.pose_sampler.max_tilt = Deg2Rad(p.at("max_tilt_deg").get<double>());
      }
    }
    s.noise_px = j.value("noise_px", s.noise_px);
    s.rng_seed = j.value("rng_seed", s.rng_seed);
    if (j.contains("sensor")) {
      s.sensor_width = j.at("sensor").at("width").get<int>();
      s.sensor_height = j.at("sensor").at("height").get<int>();
    }
    if (j.contains("fov_upper")) s.fov_upper = FovFromJson(j.at("fov_upper"));
    if (j.contains("fov_lower")) s.fov_lower = FovFromJson(j.at("fov_lower"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("scenario: ") + e.what());
  }
  s.Validate();
  return s;
}

SynthScenario LoadScenario(const std::filesystem::path& path) {
  try {
    return ScenarioFromJson(ReadJsonFile(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

nlohmann::json TruthToJson(const SynthScenario& s, const SynthTruth& truth) {
  nlohmann::json up = nlohmann::json::object(), lo = nlohmann::json::object();
  for (const auto& [id, p] : truth.poses_upper) up[id] = PoseToJson(p);
  for (const auto& [id, p] : truth.poses_lower) lo[id] = PoseToJson(p);
  return {{"params_upper", ParamsToJson(s.params_upper)},
          {"params_lower", ParamsToJson(s.params_lower)},
          {"rig_truth", PoseToJson(s.rig_truth)},
          {"baseline_m", s.Baseline()},
          {"shared", truth.shared},
          {"poses_upper", up},
          {"poses_lower", lo}};
}

}  // namespace omni
