#pragma once

// Binned reprojection residuals and floor-plane ranging statistics.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "omnistereo/calibrate.h"
#include "omnistereo/stereo.h"

namespace omni {

struct ResidualBin {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();  // px
  double rms = 0.0;
  int count = 0;
  bool empty() const { return count == 0; }
};

struct ResidualField {
  int grid_w = 16;
  int grid_h = 12;
  int sensor_width = 4912;
  int sensor_height = 3684;
  std::vector<ResidualBin> bins;  // row-major, grid_h rows
  double overall_rms_px = 0.0;
  int total_count = 0;

  const ResidualBin& bin(int bu, int bv) const { return bins[static_cast<size_t>(bv) * grid_w + bu]; }
};

// Bins by detected pixel; points outside the sensor go to the nearest edge bin.
ResidualField ComputeResidualField(const std::vector<PointResidual>& residuals, int sensor_width,
                                   int sensor_height, int grid_w = 16, int grid_h = 12);
// CSV columns bin_u,bin_v,mean_du,mean_dv,rms,count; empty bins have blank
// mean and rms.
void SaveResidualField(const ResidualField& field, const std::filesystem::path& csv,
                       const std::filesystem::path& json);
nlohmann::json ResidualFieldSummary(const ResidualField& field);

// n . x + d = 0 with |n| = 1 and n.z >= 0.
struct PlaneFit {
  Eigen::Vector4d plane = Eigen::Vector4d::Zero();
  std::vector<size_t> inliers;  // ascending
};

// RANSAC (1000 draws from `seed`) followed by total least squares on the
// inliers.  Throws kDegenerateCloud for fewer than 3 points or a collinear set.
PlaneFit FitPlane(const std::vector<Eigen::Vector3d>& points, double inlier_tol = 0.05,
                  uint64_t seed = 1);
std::vector<Eigen::Vector3d> CloudPositions(const PointCloud& cloud);

// Ground truth for ranging.  Ranges are horizontal: distance from `origin`
// orthogonal to `up`.  With a plane, a point's actual range is where its
// viewing ray from `origin` meets the plane; otherwise `ranges` gives one
// actual range per point.
struct DistanceTruth {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d up = Eigen::Vector3d::UnitZ();
  std::optional<Eigen::Vector4d> plane;
  std::vector<double> ranges;
};

struct DistanceBin {
  double range_lo = 0.0, range_hi = 0.0;
  double mean_measured = 0.0;  // m
  double mean_actual = 0.0;    // m
  double sigma = 0.0;          // std of measured - actual, m
  double systematic_pct = 0.0;  // |mean relative error| x 100
  double random_pct = 0.0;      // std of relative error x 100
  int count = 0;
  bool empty() const { return count < 2; }
};

struct DistanceErrorReport {
  std::vector<DistanceBin> bins;
  double systematic_error_pct = 0.0;  // max over non-empty bins
  double random_error_pct = 0.0;
  int evaluated_points = 0;
};

// 4.5 to 14 m in 1 m steps, the last bin closing at 14.
std::vector<double> DefaultRangeBinEdges();

DistanceErrorReport ComputeDistanceErrorReport(const std::vector<Eigen::Vector3d>& points,
                                               const DistanceTruth& truth,
                                               const std::vector<double>& bin_edges = DefaultRangeBinEdges());
// CSV columns range_lo,range_hi,mean,sigma,count.
void SaveDistanceReport(const DistanceErrorReport& report, const std::filesystem::path& csv,
                        const std::filesystem::path& json);
nlohmann::json DistanceReportSummary(const DistanceErrorReport& report);

}  // namespace omni
