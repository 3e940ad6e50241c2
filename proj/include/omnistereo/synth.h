#pragma once

// Ground-truth generator for corpora and scenes.  Everything is a pure
// function of the scenario and its seeds.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"
#include "omnistereo/board.h"
#include "omnistereo/fov.h"
#include "omnistereo/model.h"

namespace omni {

struct PoseSampler {
  double dist_min = 0.3;  // meters, viewpoint to board centre
  double dist_max = 3.0;
  double max_tilt = Deg2Rad(45.0);  // board normal vs. line of sight

  void Validate() const;
};

struct SynthScenario {
  ViewModelParams params_upper;
  ViewModelParams params_lower;
  // Maps upper-view coordinates to lower-view coordinates.
  Pose rig_truth;
  BoardSpec board;
  int n_upper = 200;  // boards per view, shared ones included
  int n_lower = 200;
  int n_shared = 120;
  PoseSampler pose_sampler;
  double noise_px = 0.0;  // RMS length of the 2-D detection error, px
  uint64_t rng_seed = 1;
  int sensor_width = 4912;
  int sensor_height = 3684;
  ViewFov fov_upper = UpperViewFov();
  ViewFov fov_lower = LowerViewFov();

  // Tables 1 and 2 as truth, 10 cm baseline with a slight misalignment.
  static SynthScenario Default();
  void Validate() const;
  double Baseline() const { return rig_truth.translation.norm(); }
};

struct SynthTruth {
  std::map<std::string, Pose> poses_upper;
  std::map<std::string, Pose> poses_lower;
  std::vector<std::string> shared;  // sorted
};

// Deterministic generator; the streams are fixed by the implementation, not
// by the standard library.
class SynthRng {
 public:
  explicit SynthRng(uint64_t seed);
  uint64_t Next();
  double Uniform();  // [0, 1)
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  double Normal();

 private:
  uint64_t state_;
};

// Boards whose points land on the sensor for at least 80% of the grid.
// Throws kExhaustedSampling after 100 x n failed draws.
ObservationCorpus GenCorpus(const SynthScenario& scenario, SynthTruth* truth);

// Angles in degrees.
nlohmann::json FovToJson(const ViewFov& f);
ViewFov FovFromJson(const nlohmann::json& j);

nlohmann::json ScenarioToJson(const SynthScenario& s);
SynthScenario ScenarioFromJson(const nlohmann::json& j);
SynthScenario LoadScenario(const std::filesystem::path& path);

nlohmann::json TruthToJson(const SynthScenario& s, const SynthTruth& truth);

}  // namespace omni
