#pragma once

// Per-view calibration: staged Levenberg-Marquardt over the 27 model
// parameters and one 6-dof pose per board, minimizing reprojection error of
// the detected circle centres.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "omnistereo/board.h"
#include "omnistereo/model.h"

namespace omni {

using ParamMask = std::array<bool, kNumModelParams>;

struct CalibrationConfig {
  double init_fx = 1000.0;
  double init_fy = 1000.0;
  double init_cx = 2456.0;
  double init_cy = 1842.0;
  double init_xi = 0.7;
  // Each stage unlocks a group of parameter indices; groups accumulate.
  std::vector<std::vector<int>> stage_schedule = DefaultSchedule();
  int lm_max_iter = 100;  // per stage
  // Optional per-stage override of lm_max_iter, one entry per stage.
  std::vector<int> stage_max_iter;
  double lm_tol = 1e-10;  // relative cost decrease
  double huber_delta = 0.0;
  // Frozen parameters keep their initial value (0 for distortion terms).
  ParamMask frozen{};
  // When set, replaces the five seeds and the zero distortion start.
  std::optional<ViewModelParams> warm_start;

  static std::vector<std::vector<int>> DefaultSchedule();

  // Throws kInvariantViolation: non-positive seeds, or a schedule that does
  // not list every parameter exactly once.
  void Validate() const;
  std::array<double, kNumModelParams> InitialParams() const;
  int NumFree() const;
};

// The ten parameters of the sphere model with k1, k2, p1, p2 distortion.
ParamMask TruncatedModelMask();

struct PointResidual {
  std::string image_id;
  GridIndex grid;
  PixelPoint detected;
  Eigen::Vector2d residual = Eigen::Vector2d::Zero();  // predicted - detected
};

struct StageReport {
  int free_parameters = 0;
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
};

struct CalibrationResult {
  View view = View::kUpper;
  ViewModelParams params;
  std::map<std::string, Pose> board_poses;
  double rms_px = 0.0;
  std::vector<PointResidual> per_point_residuals;
  bool converged = false;
  int iterations = 0;
  std::vector<StageReport> stages;
  std::vector<std::string> dropped_boards;  // failed pose initialization
  ParamMask frozen{};

  // sqrt(mean |r|^2) over per_point_residuals.
  double RecomputeRms() const;
};

inline constexpr double kLargeResidualPx = 1e6;

// Residuals in canonical corpus order, [du0, dv0, du1, dv1, ...].  Points
// that cannot be projected get kLargeResidualPx in both components; more
// than 1% of them throws kDegenerateGeometry.
Eigen::VectorXd ReprojectionResiduals(const ViewModelParams& params,
                                      const std::map<std::string, Pose>& poses,
                                      const ObservationCorpus& corpus,
                                      int* sentinel_count = nullptr);

// Dense Jacobian of ReprojectionResiduals: 27 intrinsic columns, then six
// per observation (rotation increment omega with R <- exp(omega) R, then
// translation).  For verification on small corpora.
Eigen::MatrixXd ReprojectionJacobian(const ViewModelParams& params,
                                     const std::map<std::string, Pose>& poses,
                                     const ObservationCorpus& corpus);

// Pose of one board with the model frozen; best of eight seeded LM runs.
// Throws kInitFailure for collinear observations or RMS > 100 px.
Pose InitBoardPose(const ViewModelParams& params, const BoardObservation& obs,
                   const BoardSpec& spec, double* rms_px = nullptr);

// Throws kInvariantViolation for mixed views or fewer than 3 boards.
// Non-convergence is reported through result.converged, not thrown.
CalibrationResult CalibrateView(const ObservationCorpus& corpus_view,
                                const CalibrationConfig& config);

// CalibrateView with TruncatedModelMask() added to the frozen set.
CalibrationResult CalibrateTruncated(const ObservationCorpus& corpus_view,
                                     const CalibrationConfig& config);

nlohmann::json ConfigToJson(const CalibrationConfig& config);
CalibrationConfig ConfigFromJson(const nlohmann::json& j);
CalibrationConfig LoadConfig(const std::filesystem::path& path);

nlohmann::json ResultToJson(const CalibrationResult& result);
CalibrationResult ResultFromJson(const nlohmann::json& j);
CalibrationResult LoadResult(const std::filesystem::path& path);
void SaveResult(const CalibrationResult& result, const std::filesystem::path& path);
// image_id,row,col,du,dv
void SaveResidualsCsv(const CalibrationResult& result,
                      const std::filesystem::path& path);

}  // namespace omni
