#include "omnistereo/evaluate.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include "omnistereo/error.h"
#include "omnistereo/model_io.h"
#include "omnistereo/synth.h"

namespace omni {

ResidualField ComputeResidualField(const std::vector<PointResidual>& residuals, int sensor_width,
                                   int sensor_height, int grid_w, int grid_h) {
  if (grid_w < 1 || grid_h < 1 || sensor_width < 1 || sensor_height < 1) {
    throw Error(ErrorCode::kInvariantViolation, "grid and sensor dimensions must be positive");
  }
  ResidualField f;
  f.grid_w = grid_w;
  f.grid_h = grid_h;
  f.sensor_width = sensor_width;
  f.sensor_height = sensor_height;
  f.bins.assign(static_cast<size_t>(grid_w) * grid_h, ResidualBin{});
  std::vector<double> sq(f.bins.size(), 0.0);
  double total = 0.0;
  for (const PointResidual& r : residuals) {
    const int bu = std::clamp(static_cast<int>(std::floor(r.detected.u * grid_w / sensor_width)), 0, grid_w - 1);
    const int bv = std::clamp(static_cast<int>(std::floor(r.detected.v * grid_h / sensor_height)), 0, grid_h - 1);
    const size_t i = static_cast<size_t>(bv) * grid_w + bu;
    f.bins[i].mean += r.residual;
    f.bins[i].count += 1;
    sq[i] += r.residual.squaredNorm();
    total += r.residual.squaredNorm();
  }
  for (size_t i = 0; i < f.bins.size(); ++i) {
    ResidualBin& b = f.bins[i];
    if (b.count == 0) continue;
    b.mean /= b.count;
    b.rms = std::sqrt(sq[i] / b.count);
  }
  f.total_count = static_cast<int>(residuals.size());
  f.overall_rms_px = residuals.empty() ? 0.0 : std::sqrt(total / static_cast<double>(residuals.size()));
  return f;
}

nlohmann::json ResidualFieldSummary(const ResidualField& f) {
  int occupied = 0;
  for (const auto& b : f.bins) occupied += b.empty() ? 0 : 1;
  return {{"grid_w", f.grid_w},
          {"grid_h", f.grid_h},
          {"sensor_width", f.sensor_width},
          {"sensor_height", f.sensor_height},
          {"overall_rms_px", f.overall_rms_px},
          {"count", f.total_count},
          {"occupied_bins", occupied},
          {"units", "px, predicted minus detected, unscaled"}};
}

void SaveResidualField(const ResidualField& f, const std::filesystem::path& csv,
                       const std::filesystem::path& json) {
  std::string out = "bin_u,bin_v,mean_du,mean_dv,rms,count\n";
  char line[160];
  for (int bv = 0; bv < f.grid_h; ++bv) {
    for (int bu = 0; bu < f.grid_w; ++bu) {
      const ResidualBin& b = f.bin(bu, bv);
      if (b.empty()) {
        std::snprintf(line, sizeof line, "%d,%d,,,,0\n", bu, bv);
      } else {
        std::snprintf(line, sizeof line, "%d,%d,%.10g,%.10g,%.10g,%d\n", bu, bv, b.mean.x(), b.mean.y(),
                      b.rms, b.count);
      }
      out += line;
    }
  }
  WriteTextFile(csv, out);
  WriteTextFile(json, ResidualFieldSummary(f).dump(2) + "\n");
}

namespace {

bool PlaneThrough(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c,
                  double scale, Eigen::Vector4d* plane) {
  const Eigen::Vector3d n = (b - a).cross(c - a);
  if (n.norm() <= 1e-12 * scale * scale) return false;
  const Eigen::Vector3d u = n.normalized();
  *plane << u, -u.dot(a);
  return true;
}

Eigen::Vector4d Orient(Eigen::Vector4d p) {
  if (p.z() < 0.0 || (p.z() == 0.0 && p.head<3>().sum() < 0.0)) p = -p;
  return p;
}

std::vector<size_t> Inliers(const std::vector<Eigen::Vector3d>& pts, const Eigen::Vector4d& plane,
                            double tol) {
  std::vector<size_t> in;
  for (size_t i = 0; i < pts.size(); ++i) {
    if (std::abs(plane.head<3>().dot(pts[i]) + plane.w()) <= tol) in.push_back(i);
  }
  return in;
}

// Total least squares: normal is the smallest-eigenvalue direction of the
// scatter about the centroid.
bool RefinePlane(const std::vector<Eigen::Vector3d>& pts, const std::vector<size_t>& idx,
                 Eigen::Vector4d* plane) {
  if (idx.size() < 3) return false;
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (size_t i : idx) c += pts[i];
  c /= static_cast<double>(idx.size());
  Eigen::Matrix3d s = Eigen::Matrix3d::Zero();
  for (size_t i : idx) s += (pts[i] - c) * (pts[i] - c).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(s);
  // A collinear set has two vanishing eigenvalues; the solver leaves rounding
  // noise relative to the largest one.
  if (es.eigenvalues()(1) <= 1e-12 * es.eigenvalues()(2)) return false;
  const Eigen::Vector3d n = es.eigenvectors().col(0).normalized();
  *plane << n, -n.dot(c);
  return true;
}

}  // namespace

PlaneFit FitPlane(const std::vector<Eigen::Vector3d>& points, double inlier_tol, uint64_t seed) {
  if (points.size() < 3) throw Error(ErrorCode::kDegenerateCloud, "need at least 3 points");
  if (!(inlier_tol > 0.0)) throw Error(ErrorCode::kInvariantViolation, "inlier_tol must be positive");
  double scale = 0.0;
  for (const auto& p : points) {
    if (!p.allFinite()) throw Error(ErrorCode::kDegenerateCloud, "non-finite point");
    scale = std::max(scale, p.cwiseAbs().maxCoeff());
  }
  scale = std::max(scale, 1e-300);
  SynthRng rng(seed);
  const size_t n = points.size();
  Eigen::Vector4d best_plane = Eigen::Vector4d::Zero();
  size_t best_count = 0;
  for (int it = 0; it < 1000; ++it) {
    const size_t i = rng.Next() % n;
    const size_t j = rng.Next() % n;
    const size_t k = rng.Next() % n;
    if (i == j || j == k || i == k) continue;
    Eigen::Vector4d plane;
    if (!PlaneThrough(points[i], points[j], points[k], scale, &plane)) continue;
    size_t count = 0;
    for (const auto& p : points) count += std::abs(plane.head<3>().dot(p) + plane.w()) <= inlier_tol;
    if (count > best_count) {
      best_count = count;
      best_plane = plane;
    }
  }
  if (best_count == 0) {
    // Small clouds may never draw a good triple; fall back to TLS on all.
    std::vector<size_t> all(n);
    for (size_t i = 0; i < n; ++i) all[i] = i;
    if (!RefinePlane(points, all, &best_plane)) {
      throw Error(ErrorCode::kDegenerateCloud, "points are collinear or coincident");
    }
  }
  PlaneFit fit;
  fit.inliers = Inliers(points, best_plane, inlier_tol);
  Eigen::Vector4d refined;
  if (RefinePlane(points, fit.inliers, &refined)) {
    fit.plane = Orient(refined);
    const std::vector<size_t> again = Inliers(points, fit.plane, inlier_tol);
    if (again.size() >= fit.inliers.size() && RefinePlane(points, again, &refined)) {
      fit.plane = Orient(refined);
    }
  } else {
    fit.plane = Orient(best_plane);
  }
  // Reported inliers are those of the returned plane.
  fit.inliers = Inliers(points, fit.plane, inlier_tol);
  return fit;
}

std::vector<Eigen::Vector3d> CloudPositions(const PointCloud& cloud) {
  std::vector<Eigen::Vector3d> out;
  out.reserve(cloud.points.size());
  for (const auto& p : cloud.points) out.emplace_back(p.x, p.y, p.z);
  return out;
}

std::vector<double> DefaultRangeBinEdges() {
  std::vector<double> e;
  for (double r = 4.5; r < 14.0; r += 1.0) e.push_back(r);
  e.push_back(14.0);
  return e;
}

DistanceErrorReport ComputeDistanceErrorReport(const std::vector<Eigen::Vector3d>& points,
                                               const DistanceTruth& truth,
                                               const std::vector<double>& edges) {
  if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end()) ||
      std::adjacent_find(edges.begin(), edges.end()) != edges.end()) {
    throw Error(ErrorCode::kInvariantViolation, "bin edges must be strictly increasing");
  }
  if (!truth.plane && truth.ranges.size() != points.size()) {
    throw Error(ErrorCode::kInvariantViolation, "need one true range per point");
  }
  const Eigen::Vector3d up = truth.up.normalized();
  auto horizontal = [&](const Eigen::Vector3d& v) { return (v - up * up.dot(v)).norm(); };

  const size_t nb = edges.size() - 1;
  std::vector<std::vector<double>> rel(nb), diff(nb), meas(nb), act(nb);
  DistanceErrorReport rep;
  for (size_t i = 0; i < points.size(); ++i) {
    const Eigen::Vector3d v = points[i] - truth.origin;
    const double measured = horizontal(v);
    double actual;
    if (truth.plane) {
      const Eigen::Vector3d n = truth.plane->head<3>();
      const double denom = n.dot(v);
      if (denom == 0.0) continue;
      const double s = -(n.dot(truth.origin) + truth.plane->w()) / denom;
      if (!(s > 0.0)) continue;
      actual = s * measured;
    } else {
      actual = truth.ranges[i];
    }
    if (!std::isfinite(actual) || !std::isfinite(measured) || !(actual > 0.0)) continue;
    if (actual < edges.front() || actual > edges.back()) continue;
    size_t b = static_cast<size_t>(std::upper_bound(edges.begin(), edges.end(), actual) - edges.begin());
    b = std::min(b == 0 ? 0 : b - 1, nb - 1);
    rel[b].push_back((measured - actual) / actual);
    diff[b].push_back(measured - actual);
    meas[b].push_back(measured);
    act[b].push_back(actual);
    ++rep.evaluated_points;
  }
  auto mean = [](const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
  };
  auto stddev = [&](const std::vector<double>& x) {
    const double m = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(x.size() - 1));
  };
  for (size_t b = 0; b < nb; ++b) {
    DistanceBin bin;
    bin.range_lo = edges[b];
    bin.range_hi = edges[b + 1];
    bin.count = static_cast<int>(rel[b].size());
    if (!bin.empty()) {
      bin.mean_measured = mean(meas[b]);
      bin.mean_actual = mean(act[b]);
      bin.sigma = stddev(diff[b]);
      bin.systematic_pct = 100.0 * std::abs(mean(rel[b]));
      bin.random_pct = 100.0 * stddev(rel[b]);
      rep.systematic_error_pct = std::max(rep.systematic_error_pct, bin.systematic_pct);
      rep.random_error_pct = std::max(rep.random_error_pct, bin.random_pct);
    }
    rep.bins.push_back(bin);
  }
  return rep;
}

nlohmann::json DistanceReportSummary(const DistanceErrorReport& r) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : r.bins) {
    nlohmann::json jb = {{"range_lo", b.range_lo}, {"range_hi", b.range_hi}, {"count", b.count},
                         {"empty", b.empty()}};
    if (!b.empty()) {
      jb["mean_measured"] = b.mean_measured;
      jb["mean_actual"] = b.mean_actual;
      jb["sigma"] = b.sigma;
      jb["systematic_pct"] = b.systematic_pct;
      jb["random_pct"] = b.random_pct;
    }
    bins.push_back(jb);
  }
  return {{"range_definition", "horizontal range from the upper viewpoint, m"},
          {"systematic_error_pct", r.systematic_error_pct},
          {"random_error_pct", r.random_error_pct},
          {"evaluated_points", r.evaluated_points},
          {"bins", bins}};
}

void SaveDistanceReport(const DistanceErrorReport& r, const std::filesystem::path& csv,
                        const std::filesystem::path& json) {
  std::string out = "range_lo,range_hi,mean,sigma,count\n";
  char line[160];
  for (const auto& b : r.bins) {
    if (b.empty()) {
      std::snprintf(line, sizeof line, "%g,%g,,,%d\n", b.range_lo, b.range_hi, b.count);
    } else {
      std::snprintf(line, sizeof line, "%g,%g,%.10g,%.10g,%d\n", b.range_lo, b.range_hi, b.mean_measured,
                    b.sigma, b.count);
    }
    out += line;
  }
  WriteTextFile(csv, out);
  WriteTextFile(json, DistanceReportSummary(r).dump(2) + "\n");
}

}  // namespace omni
