#include "omnistereo/calibrate.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include <Eigen/QR>
#include <Eigen/Geometry>
#include <ceres/jet.h>

#include "omnistereo/model_io.h"
#include "omnistereo/model_kernels.h"
#include "omnistereo/parallel.h"

namespace omni {

std::vector<std::vector<int>> CalibrationConfig::DefaultSchedule() {
  return {{kFx, kFy, kCx, kCy, kXi},
          {kK1, kK2, kP1, kP2, kSkew},
          {kK3, kK4, kK5, kK6, kK7, kK8, kQ1, kQ2, kQ3},
          {kS1, kS2, kS3, kS4, kDxn, kDyn, kTaux, kTauy}};
}

void CalibrationConfig::Validate() const {
  for (double v : {init_fx, init_fy, init_cx, init_cy}) {
    if (!(v > 0.0)) {
      throw Error(ErrorCode::kInvariantViolation,
                  "intrinsic seeds must be positive");
    }
  }
  if (!(init_xi >= 0.0)) {
    throw Error(ErrorCode::kInvariantViolation, "xi seed must be >= 0");
  }
  std::array<int, kNumModelParams> count{};
  for (const auto& stage : stage_schedule) {
    for (int idx : stage) {
      if (idx < 0 || idx >= kNumModelParams) {
        throw Error(ErrorCode::kInvariantViolation, "schedule index out of range");
      }
      ++count[idx];
    }
  }
  for (int i = 0; i < kNumModelParams; ++i) {
    if (count[i] != 1) {
      throw Error(ErrorCode::kInvariantViolation,
                  "stage schedule must list '" + std::string(kParamNames[i]) +
                      "' exactly once");
    }
  }
  if (!stage_max_iter.empty() && stage_max_iter.size() != stage_schedule.size()) {
    throw Error(ErrorCode::kInvariantViolation,
                "stage_max_iter needs one entry per stage");
  }
  for (int n : stage_max_iter) {
    if (n <= 0) throw Error(ErrorCode::kInvariantViolation, "stage_max_iter entries must be positive");
  }
  if (lm_max_iter <= 0 || !(lm_tol > 0.0) || huber_delta < 0.0) {
    throw Error(ErrorCode::kInvariantViolation, "bad LM settings");
  }
}

std::array<double, kNumModelParams> CalibrationConfig::InitialParams() const {
  if (warm_start) return warm_start->Flatten();
  std::array<double, kNumModelParams> c{};
  c[kFx] = init_fx;
  c[kFy] = init_fy;
  c[kCx] = init_cx;
  c[kCy] = init_cy;
  c[kXi] = init_xi;
  return c;
}

int CalibrationConfig::NumFree() const {
  return kNumModelParams -
         static_cast<int>(std::count(frozen.begin(), frozen.end(), true));
}

ParamMask TruncatedModelMask() {
  ParamMask mask{};
  mask.fill(true);
  for (int i : {kFx, kFy, kCx, kCy, kSkew, kXi, kK1, kK2, kP1, kP2}) {
    mask[i] = false;
  }
  return mask;
}

double CalibrationResult::RecomputeRms() const {
  if (per_point_residuals.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : per_point_residuals) sum += r.residual.squaredNorm();
  return std::sqrt(sum / static_cast<double>(per_point_residuals.size()));
}

namespace {

using Params = std::array<double, kNumModelParams>;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

struct BoardBlock {
  std::string image_id;
  std::vector<Eigen::Vector3d> model;  // board-frame point per detection
  std::vector<Eigen::Vector2d> detected;
  Pose pose;
};

bool ProjectDouble(const Params& c, const Pose& pose, const Eigen::Vector3d& X,
                   Eigen::Vector2d* px) {
  const Eigen::Vector3d pcam = pose.Apply(X);
  double out[2];
  if (kernels::ProjectCamera(pcam.data(), c.data(), out) != kernels::Status::kOk) {
    return false;
  }
  if (!std::isfinite(out[0]) || !std::isfinite(out[1])) return false;
  *px = {out[0], out[1]};
  return true;
}

// Residual + Jacobian of one point.  Derivative slots: 0-2 rotation
// increment, 3-5 translation, then (when N == 33) the 27 parameters.
template <int N>
bool LinearizePoint(const Params& c, const Pose& pose, const Eigen::Vector3d& X,
                    Eigen::Vector2d* px, Eigen::Matrix<double, 2, 6>* jp,
                    Eigen::Matrix<double, 2, kNumModelParams>* jc) {
  using J = ceres::Jet<double, N>;
  const Eigen::Vector3d y = pose.rotation * X;
  const Eigen::Vector3d p = y + pose.translation;
  // d(exp(w) y)/dw at w = 0 is -[y]x.
  const double dpdw[3][3] = {{0.0, y.z(), -y.y()},
                             {-y.z(), 0.0, y.x()},
                             {y.y(), -y.x(), 0.0}};
  J pcam[3];
  for (int i = 0; i < 3; ++i) {
    pcam[i] = J(p[i]);
    for (int k = 0; k < 3; ++k) pcam[i].v[k] = dpdw[i][k];
    pcam[i].v[3 + i] = 1.0;
  }
  J cj[kNumModelParams];
  for (int i = 0; i < kNumModelParams; ++i) {
    cj[i] = J(c[i]);
    if constexpr (N == 6 + kNumModelParams) cj[i].v[6 + i] = 1.0;
  }
  J out[2];
  if (kernels::ProjectCamera(pcam, cj, out) != kernels::Status::kOk) return false;
  if (!std::isfinite(out[0].a) || !std::isfinite(out[1].a)) return false;
  *px = {out[0].a, out[1].a};
  for (int r = 0; r < 2; ++r) {
    for (int k = 0; k < 6; ++k) (*jp)(r, k) = out[r].v[k];
    if constexpr (N == 6 + kNumModelParams) {
      for (int k = 0; k < kNumModelParams; ++k) (*jc)(r, k) = out[r].v[6 + k];
    }
  }
  return true;
}

// Robust weighting on the squared residual norm s.
double RobustCost(double s, double delta) {
  if (delta <= 0.0 || s <= delta * delta) return s;
  return 2.0 * delta * std::sqrt(s) - delta * delta;
}
double RobustWeight(double s, double delta) {
  if (delta <= 0.0 || s <= delta * delta) return 1.0;
  return delta / std::sqrt(s);
}

constexpr double kSentinelSq = 2.0 * kLargeResidualPx * kLargeResidualPx;

// Weighted linearization of one board.
struct BoardLinear {
  Eigen::MatrixXd jc;  // rows x nf
  Eigen::MatrixXd jp;  // rows x 6
  Eigen::VectorXd r;
  std::vector<double> sqrt_w;  // per point, 0 for sentinels
  Vec6 pose_scale = Vec6::Ones();
  double cost = 0.0;
  int sentinels = 0;
};

// Levenberg-Marquardt over free parameters and all board poses.  Each
// damped step eliminates the pose blocks board by board with Householder QR
// and solves the remaining parameter least-squares problem with QR as well,
// so the conditioning of the Jacobian is never squared.
class LmProblem {
 public:
  LmProblem(Params c, std::vector<BoardBlock> boards, std::vector<int> free,
            double huber)
      : c_(c), boards_(std::move(boards)), free_(std::move(free)), huber_(huber) {}

  const Params& params() const { return c_; }
  const std::vector<BoardBlock>& boards() const { return boards_; }
  void set_free(std::vector<int> free) { free_ = std::move(free); }

  size_t NumPoints() const {
    size_t n = 0;
    for (const auto& b : boards_) n += b.model.size();
    return n;
  }

  double Cost(const Params& c, const std::vector<Pose>& poses,
              int* sentinels = nullptr) const {
    std::vector<double> per_board(boards_.size(), 0.0);
    std::vector<int> per_sent(boards_.size(), 0);
    ParallelFor(boards_.size(), [&](size_t begin, size_t end) {
      for (size_t b = begin; b < end; ++b) {
        const BoardBlock& blk = boards_[b];
        double sum = 0.0;
        for (size_t i = 0; i < blk.model.size(); ++i) {
          Eigen::Vector2d px;
          if (!ProjectDouble(c, poses[b], blk.model[i], &px)) {
            sum += RobustCost(kSentinelSq, huber_);
            ++per_sent[b];
            continue;
          }
          sum += RobustCost((px - blk.detected[i]).squaredNorm(), huber_);
        }
        per_board[b] = sum;
      }
    });
    if (sentinels) *sentinels = std::accumulate(per_sent.begin(), per_sent.end(), 0);
    return 0.5 * std::accumulate(per_board.begin(), per_board.end(), 0.0);
  }

  double CurrentCost(int* sentinels = nullptr) const {
    return Cost(c_, CurrentPoses(), sentinels);
  }

  // Sum of squared residual norms of one board under the current state.
  double BoardSquaredError(size_t b, const Pose& pose) const {
    const BoardBlock& blk = boards_[b];
    double sum = 0.0;
    for (size_t i = 0; i < blk.model.size(); ++i) {
      Eigen::Vector2d px;
      sum += ProjectDouble(c_, pose, blk.model[i], &px) ? (px - blk.detected[i]).squaredNorm()
                                                       : kSentinelSq;
    }
    return sum;
  }
  void SetPose(size_t b, const Pose& pose) { boards_[b].pose = pose; }

  std::vector<Pose> CurrentPoses() const {
    std::vector<Pose> poses;
    poses.reserve(boards_.size());
    for (const auto& b : boards_) poses.push_back(b.pose);
    return poses;
  }

  StageReport Run(int max_iter, double tol) {
    StageReport report;
    report.free_parameters = static_cast<int>(free_.size());
    Linearize();
    // Same evaluation path as trial steps, so stage boundaries compare exactly.
    double cost = CurrentCost();
    report.initial_cost = cost;
    double lambda = 1e-3;
    int it = 0;
    bool converged = false;
    // Below this the residuals are rounding noise and steps stop paying off.
    const double floor = kCostFloorPerPoint * static_cast<double>(NumPoints());
    while (it < max_iter) {
      if (cost <= floor) {
        converged = true;
        break;
      }
      ++it;
      Params c_new;
      std::vector<Pose> poses_new;
      double cost_new = std::numeric_limits<double>::infinity();
      Step step;
      if (ProposeStep(lambda, &step)) {
        Apply(step, 1.0, &c_new, &poses_new);
        if (Admissible(c_new)) cost_new = Cost(c_new, poses_new);
      }
      if (cost_new < cost) {
        const double rel = (cost - cost_new) / cost;
        c_ = c_new;
        for (size_t b = 0; b < boards_.size(); ++b) boards_[b].pose = poses_new[b];
        lambda = std::max(lambda / 10.0, kMinLambda);
        cost = cost_new;
        if (rel < tol) {
          converged = true;
          break;
        }
        Linearize();
      } else {
        lambda *= 10.0;
        if (lambda > kMaxLambda) {
          converged = true;
          break;
        }
      }
    }
    report.iterations = it;
    report.final_cost = cost;
    report.converged = converged;
    return report;
  }

 private:
  static constexpr double kMinLambda = 1e-12;
  static constexpr double kCostFloorPerPoint = 1e-22;  // about 1e-11 px rms
  static constexpr double kMaxLambda = 1e12;
  // Geodesic acceleration: finite-difference step and the largest accepted
  // ratio |a| / |v| (both in damping-scaled norms).
  static constexpr double kGeodesicH = 0.1;
  static constexpr double kGeodesicAlpha = 0.75;

  struct Step {
    Eigen::VectorXd dc;
    std::vector<Vec6> dp;
  };

  struct Factor {
    std::vector<Eigen::Index> offset;
    std::vector<Eigen::HouseholderQR<Eigen::MatrixXd>> pose_qr;
    std::vector<Eigen::MatrixXd> nt;  // top rows of Q^T [jc; 0]
    Eigen::HouseholderQR<Eigen::MatrixXd> cam_qr;
  };

  // Velocity v from the damped Gauss-Newton system, plus the second-order
  // correction a/2 computed from a directional second difference.
  bool ProposeStep(double lambda, Step* step) const {
    Factor f;
    if (!Factorize(lambda, &f)) return false;
    std::vector<Eigen::VectorXd> g(boards_.size());
    for (size_t b = 0; b < boards_.size(); ++b) g[b] = lin_[b].r;
    Step v;
    if (!SolveWith(f, g, &v)) return false;

    Params c_h;
    std::vector<Pose> poses_h;
    Apply(v, kGeodesicH, &c_h, &poses_h);
    std::vector<Eigen::VectorXd> rvv;
    if (!Admissible(c_h) || !WeightedResiduals(c_h, poses_h, &rvv)) {
      *step = v;
      return true;
    }
    for (size_t b = 0; b < boards_.size(); ++b) {
      const BoardLinear& l = lin_[b];
      Eigen::VectorXd jv = l.jp * v.dp[b];
      if (v.dc.size() > 0) jv.noalias() += l.jc * v.dc;
      rvv[b] = (2.0 / kGeodesicH) * ((rvv[b] - l.r) / kGeodesicH - jv);
    }
    Step a;
    if (!SolveWith(f, rvv, &a)) {
      *step = v;
      return true;
    }
    if (2.0 * ScaledNorm(a) > kGeodesicAlpha * ScaledNorm(v)) return false;
    step->dc = v.dc + 0.5 * a.dc;
    step->dp.resize(boards_.size());
    for (size_t b = 0; b < boards_.size(); ++b) step->dp[b] = v.dp[b] + 0.5 * a.dp[b];
    return true;
  }

  double ScaledNorm(const Step& s) const {
    double sum = s.dc.size() > 0 ? s.dc.cwiseProduct(col_scale_).squaredNorm() : 0.0;
    for (size_t b = 0; b < boards_.size(); ++b) {
      sum += s.dp[b].cwiseProduct(lin_[b].pose_scale).squaredNorm();
    }
    return std::sqrt(sum);
  }

  static bool Admissible(const Params& c) {
    return c[kFx] > 0.0 && c[kFy] > 0.0 && c[kXi] >= 0.0;
  }

  void Apply(const Step& s, double scale, Params* c_new,
             std::vector<Pose>* poses_new) const {
    *c_new = c_;
    for (Eigen::Index k = 0; k < s.dc.size(); ++k) (*c_new)[free_[k]] += scale * s.dc[k];
    poses_new->resize(boards_.size());
    for (size_t b = 0; b < boards_.size(); ++b) {
      const Vec6 dp = scale * s.dp[b];
      const Eigen::Vector3d w = dp.head<3>();
      const double angle = w.norm();
      const Eigen::Matrix3d dr =
          angle > 0.0 ? Eigen::AngleAxisd(angle, w / angle).toRotationMatrix()
                      : Eigen::Matrix3d::Identity();
      Pose& p = (*poses_new)[b];
      p.rotation = dr * boards_[b].pose.rotation;
      p.translation = boards_[b].pose.translation + dp.tail<3>();
    }
  }

  // Residuals weighted as at the linearization point; false if any point
  // that was projectable there no longer is.
  bool WeightedResiduals(const Params& c, const std::vector<Pose>& poses,
                         std::vector<Eigen::VectorXd>* out) const {
    out->assign(boards_.size(), Eigen::VectorXd());
    std::vector<char> ok(boards_.size(), 1);
    ParallelFor(boards_.size(), [&](size_t begin, size_t end) {
      for (size_t b = begin; b < end; ++b) {
        const BoardBlock& blk = boards_[b];
        const BoardLinear& l = lin_[b];
        Eigen::VectorXd& r = (*out)[b];
        r = Eigen::VectorXd::Zero(l.r.size());
        for (size_t i = 0; i < blk.model.size(); ++i) {
          if (l.sqrt_w[i] == 0.0) continue;
          Eigen::Vector2d px;
          if (!ProjectDouble(c, poses[b], blk.model[i], &px)) {
            ok[b] = 0;
            break;
          }
          r.segment<2>(2 * i) = l.sqrt_w[i] * (px - blk.detected[i]);
        }
      }
    });
    return std::find(ok.begin(), ok.end(), 0) == ok.end();
  }

  // Per board: QR of the damped pose columns.  The first six rows of the
  // rotated system fix the pose given the parameters; the rest form the
  // parameter problem, which gets its own column-scaled damped QR.
  bool Factorize(double lambda, Factor* f) const {
    const int nf = static_cast<int>(free_.size());
    const size_t nb = boards_.size();
    const double sl = std::sqrt(lambda);
    f->offset.assign(nb + 1, 0);
    for (size_t b = 0; b < nb; ++b) f->offset[b + 1] = f->offset[b] + lin_[b].r.size();
    f->pose_qr.resize(nb);
    f->nt.resize(nb);
    Eigen::MatrixXd a(f->offset[nb] + nf, nf);
    std::vector<char> ok(nb, 1);
    ParallelFor(nb, [&](size_t begin, size_t end) {
      for (size_t b = begin; b < end; ++b) {
        const BoardLinear& l = lin_[b];
        const Eigen::Index rows = l.r.size();
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(rows + 6, 6);
        m.topRows(rows) = l.jp;
        for (int k = 0; k < 6; ++k) m(rows + k, k) = sl * l.pose_scale[k];
        f->pose_qr[b].compute(m);
        const auto r = f->pose_qr[b].matrixQR().topLeftCorner<6, 6>();
        if ((r.diagonal().array().abs() < 1e-300).any()) ok[b] = 0;
        if (nf == 0) continue;
        Eigen::MatrixXd rest = Eigen::MatrixXd::Zero(rows + 6, nf);
        rest.topRows(rows) = l.jc;
        rest.applyOnTheLeft(f->pose_qr[b].householderQ().adjoint());
        f->nt[b] = rest.topRows(6);
        a.middleRows(f->offset[b], rows) = rest.bottomRows(rows);
      }
    });
    if (std::find(ok.begin(), ok.end(), 0) != ok.end()) return false;
    if (nf > 0) {
      a.bottomRows(nf).setZero();
      for (int k = 0; k < nf; ++k) a(f->offset[nb] + k, k) = sl * col_scale_[k];
      a = a * col_scale_.cwiseInverse().asDiagonal();
      f->cam_qr.compute(a);
    }
    return true;
  }

  // Minimizes |J step + g|^2 plus the damping of the factorization.
  bool SolveWith(const Factor& f, const std::vector<Eigen::VectorXd>& g,
                 Step* s) const {
    const int nf = static_cast<int>(free_.size());
    const size_t nb = boards_.size();
    std::vector<Vec6> yt(nb);
    Eigen::VectorXd rhs(f.offset[nb] + nf);
    ParallelFor(nb, [&](size_t begin, size_t end) {
      for (size_t b = begin; b < end; ++b) {
        const Eigen::Index rows = g[b].size();
        Eigen::VectorXd y = Eigen::VectorXd::Zero(rows + 6);
        y.head(rows) = -g[b];
        y.applyOnTheLeft(f.pose_qr[b].householderQ().adjoint());
        yt[b] = y.head<6>();
        rhs.segment(f.offset[b], rows) = y.tail(rows);
      }
    });
    s->dc = Eigen::VectorXd::Zero(nf);
    if (nf > 0) {
      rhs.tail(nf).setZero();
      const Eigen::VectorXd qtb = (f.cam_qr.householderQ().adjoint() * rhs).head(nf);
      s->dc = f.cam_qr.matrixQR().topRows(nf).triangularView<Eigen::Upper>().solve(qtb);
      s->dc = s->dc.cwiseQuotient(col_scale_);
      if (!s->dc.allFinite()) return false;
    }
    s->dp.resize(nb);
    for (size_t b = 0; b < nb; ++b) {
      Vec6 y = yt[b];
      if (nf > 0) y.noalias() -= f.nt[b] * s->dc;
      s->dp[b] = f.pose_qr[b].matrixQR().topLeftCorner<6, 6>().triangularView<Eigen::Upper>().solve(y);
      if (!s->dp[b].allFinite()) return false;
    }
    return true;
  }

  double Linearize() {
    const int nf = static_cast<int>(free_.size());
    lin_.assign(boards_.size(), BoardLinear{});
    ParallelFor(boards_.size(), [&](size_t begin, size_t end) {
      for (size_t b = begin; b < end; ++b) LinearizeBoard(b, nf, &lin_[b]);
    });
    col_scale_ = Eigen::VectorXd::Zero(nf);
    double cost = 0.0;
    for (const BoardLinear& l : lin_) {
      col_scale_ += l.jc.colwise().squaredNorm().transpose();
      cost += l.cost;
    }
    col_scale_ = col_scale_.cwiseSqrt();
    if (nf > 0) {
      const double floor = std::max(col_scale_.maxCoeff() * 1e-12, 1e-300);
      col_scale_ = col_scale_.cwiseMax(floor);
    }
    return 0.5 * cost;
  }

  void LinearizeBoard(size_t b, int nf, BoardLinear* out) const {
    const BoardBlock& blk = boards_[b];
    const Eigen::Index rows = 2 * static_cast<Eigen::Index>(blk.model.size());
    out->jc = Eigen::MatrixXd::Zero(rows, nf);
    out->jp = Eigen::MatrixXd::Zero(rows, 6);
    out->r = Eigen::VectorXd::Zero(rows);
    out->sqrt_w.assign(blk.model.size(), 0.0);
    Eigen::Matrix<double, 2, 6> jp;
    Eigen::Matrix<double, 2, kNumModelParams> jc;
    for (size_t i = 0; i < blk.model.size(); ++i) {
      const Eigen::Index row = 2 * static_cast<Eigen::Index>(i);
      Eigen::Vector2d px;
      const bool ok =
          nf > 0 ? LinearizePoint<6 + kNumModelParams>(c_, blk.pose, blk.model[i], &px, &jp, &jc)
                 : LinearizePoint<6>(c_, blk.pose, blk.model[i], &px, &jp, nullptr);
      if (!ok) {
        // Sentinel rows carry no gradient.
        out->cost += RobustCost(kSentinelSq, huber_);
        ++out->sentinels;
        continue;
      }
      const Eigen::Vector2d r = px - blk.detected[i];
      const double s = r.squaredNorm();
      const double sw = std::sqrt(RobustWeight(s, huber_));
      out->cost += RobustCost(s, huber_);
      out->sqrt_w[i] = sw;
      out->r.segment<2>(row) = sw * r;
      out->jp.middleRows<2>(row) = sw * jp;
      for (int k = 0; k < nf; ++k) out->jc.block<2, 1>(row, k) = sw * jc.col(free_[k]);
    }
    out->pose_scale = out->jp.colwise().norm().transpose();
    const double floor = std::max(out->pose_scale.maxCoeff() * 1e-12, 1e-300);
    out->pose_scale = out->pose_scale.cwiseMax(floor);
  }


  Params c_;
  std::vector<BoardBlock> boards_;
  std::vector<int> free_;
  double huber_;

  std::vector<BoardLinear> lin_;
  Eigen::VectorXd col_scale_;
};

BoardBlock MakeBlock(const BoardObservation& obs, const BoardSpec& spec,
                     const Pose& pose) {
  BoardBlock blk;
  blk.image_id = obs.image_id;
  blk.pose = pose;
  for (const ObservedPoint& p : obs.points) {
    blk.model.push_back(BoardPoint(spec, p.grid));
    blk.detected.emplace_back(p.pixel.u, p.pixel.v);
  }
  return blk;
}

bool Collinear(const BoardObservation& obs) {
  const GridIndex a = obs.points[0].grid;
  for (size_t i = 1; i < obs.points.size(); ++i) {
    for (size_t j = i + 1; j < obs.points.size(); ++j) {
      const int r1 = obs.points[i].grid.row - a.row, c1 = obs.points[i].grid.col - a.col;
      const int r2 = obs.points[j].grid.row - a.row, c2 = obs.points[j].grid.col - a.col;
      if (r1 * c2 - r2 * c1 != 0) return false;
    }
  }
  return true;
}

// Best-effort ray for a detection; falls back to ignoring distortion when
// the inversion fails.
bool SeedRay(const ViewModelParams& params, const PixelPoint& px,
             Eigen::Vector3d* ray) {
  try {
    *ray = UnprojectPixel(px, params);
    return true;
  } catch (const Error&) {
  }
  try {
    const NormalizedPoint t = FromPixels(px, params);
    *ray = SphereLift({t.x - params.dxn, t.y - params.dyn}, params.xi);
    return true;
  } catch (const Error&) {
    return false;
  }
}

double MedianOf(std::vector<double> v) {
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  return v[v.size() / 2];
}

}  // namespace

Eigen::VectorXd ReprojectionResiduals(const ViewModelParams& params,
                                      const std::map<std::string, Pose>& poses,
                                      const ObservationCorpus& corpus,
                                      int* sentinel_count) {
  const Params c = params.Flatten();
  Eigen::VectorXd r(2 * corpus.NumPoints());
  int sentinels = 0;
  Eigen::Index k = 0;
  for (const BoardObservation& obs : corpus.observations) {
    auto it = poses.find(obs.image_id);
    if (it == poses.end()) {
      throw Error(ErrorCode::kInvariantViolation,
                  "no board pose for image " + obs.image_id);
    }
    for (const ObservedPoint& p : obs.points) {
      Eigen::Vector2d px;
      if (ProjectDouble(c, it->second, BoardPoint(corpus.board, p.grid), &px)) {
        r[k] = px.x() - p.pixel.u;
        r[k + 1] = px.y() - p.pixel.v;
      } else {
        r[k] = r[k + 1] = kLargeResidualPx;
        ++sentinels;
      }
      k += 2;
    }
  }
  if (sentinel_count) *sentinel_count = sentinels;
  if (sentinels * 100 > static_cast<int>(corpus.NumPoints())) {
    throw Error(ErrorCode::kDegenerateGeometry,
                std::to_string(sentinels) + " of " +
                    std::to_string(corpus.NumPoints()) +
                    " points cannot be projected");
  }
  return r;
}

Eigen::MatrixXd ReprojectionJacobian(const ViewModelParams& params,
                                     const std::map<std::string, Pose>& poses,
                                     const ObservationCorpus& corpus) {
  const Params c = params.Flatten();
  const Eigen::Index nobs = static_cast<Eigen::Index>(corpus.observations.size());
  Eigen::MatrixXd jac =
      Eigen::MatrixXd::Zero(2 * corpus.NumPoints(), kNumModelParams + 6 * nobs);
  Eigen::Index row = 0;
  for (Eigen::Index o = 0; o < nobs; ++o) {
    const BoardObservation& obs = corpus.observations[o];
    const Pose& pose = poses.at(obs.image_id);
    for (const ObservedPoint& p : obs.points) {
      Eigen::Vector2d px;
      Eigen::Matrix<double, 2, 6> jp;
      Eigen::Matrix<double, 2, kNumModelParams> jc;
      if (LinearizePoint<6 + kNumModelParams>(c, pose, BoardPoint(corpus.board, p.grid),
                                              &px, &jp, &jc)) {
        jac.block<2, kNumModelParams>(row, 0) = jc;
        jac.block<2, 6>(row, kNumModelParams + 6 * o) = jp;
      }
      row += 2;
    }
  }
  return jac;
}

Pose InitBoardPose(const ViewModelParams& params, const BoardObservation& obs,
                   const BoardSpec& spec, double* rms_px) {
  if (obs.points.size() < 4 || Collinear(obs)) {
    throw Error(ErrorCode::kInitFailure,
                obs.image_id + ": need >= 4 non-collinear grid points");
  }
  // Rays of the detections under the current model.
  std::map<GridIndex, Eigen::Vector3d> rays;
  Eigen::Vector3d mean_ray = Eigen::Vector3d::Zero();
  Eigen::Vector3d board_centroid = Eigen::Vector3d::Zero();
  for (const ObservedPoint& p : obs.points) {
    Eigen::Vector3d ray;
    if (!SeedRay(params, p.pixel, &ray)) continue;
    rays[p.grid] = ray;
    mean_ray += ray;
    board_centroid += BoardPoint(spec, p.grid);
  }
  if (rays.size() < 3) {
    throw Error(ErrorCode::kInitFailure, obs.image_id + ": detections not liftable");
  }
  board_centroid /= static_cast<double>(rays.size());
  mean_ray.normalize();

  // Range from the angular pitch of grid neighbours; in-plane direction
  // from the column neighbours.
  std::vector<double> ranges;
  Eigen::Vector3d col_dir = Eigen::Vector3d::Zero();
  for (const auto& [g, ray] : rays) {
    for (const GridIndex n : {GridIndex{g.row, g.col + 1}, GridIndex{g.row + 1, g.col}}) {
      auto it = rays.find(n);
      if (it == rays.end()) continue;
      const double angle = std::atan2(ray.cross(it->second).norm(), ray.dot(it->second));
      if (angle > 0.0) ranges.push_back(spec.pitch / angle);
      if (n.col != g.col) col_dir += it->second - ray;
    }
  }
  if (ranges.empty()) {
    throw Error(ErrorCode::kInitFailure, obs.image_id + ": no neighbouring detections");
  }
  const double range = MedianOf(ranges);
  Eigen::Vector3d ref = col_dir - col_dir.dot(mean_ray) * mean_ray;
  if (ref.norm() < 1e-9) {
    ref = Eigen::Vector3d::UnitZ() - mean_ray.z() * mean_ray;
    if (ref.norm() < 1e-9) ref = Eigen::Vector3d::UnitX() - mean_ray.x() * mean_ray;
  }
  ref.normalize();

  const Params c = params.Flatten();
  double best_cost = std::numeric_limits<double>::infinity();
  Pose best;
  for (int facing = 0; facing < 2; ++facing) {
    const Eigen::Vector3d z = facing == 0 ? Eigen::Vector3d(-mean_ray) : mean_ray;
    for (int quarter = 0; quarter < 4; ++quarter) {
      const Eigen::Vector3d x0 = ref;
      const Eigen::Vector3d y0 = z.cross(x0);
      const double a = quarter * std::numbers::pi / 2.0;
      const Eigen::Vector3d x = std::cos(a) * x0 + std::sin(a) * y0;
      Pose seed;
      seed.rotation.col(0) = x;
      seed.rotation.col(1) = z.cross(x);
      seed.rotation.col(2) = z;
      seed.translation = mean_ray * range - seed.rotation * board_centroid;

      LmProblem problem(c, {MakeBlock(obs, spec, seed)}, {}, 0.0);
      problem.Run(50, 1e-12);
      const double cost = problem.CurrentCost();
      if (cost < best_cost) {
        best_cost = cost;
        best = problem.boards()[0].pose;
      }
    }
  }
  // A small tilted board has a second, mirror-tilted pose that fits almost
  // as well: the normal reflected about the line of sight.  Fronto-parallel
  // seeds can settle in either, so the mirror of the best one is tried too.
  if (std::isfinite(best_cost)) {
    const Eigen::Vector3d centre = best.rotation * board_centroid + best.translation;
    const Eigen::Matrix3d mirror =
        Eigen::AngleAxisd(std::numbers::pi, centre.normalized()).toRotationMatrix();
    Pose seed;
    seed.rotation = mirror * best.rotation * Eigen::Vector3d(-1.0, -1.0, 1.0).asDiagonal();
    seed.translation = centre - seed.rotation * board_centroid;
    LmProblem problem(c, {MakeBlock(obs, spec, seed)}, {}, 0.0);
    problem.Run(50, 1e-12);
    const double cost = problem.CurrentCost();
    if (cost < best_cost) {
      best_cost = cost;
      best = problem.boards()[0].pose;
    }
  }
  const double rms = std::sqrt(2.0 * best_cost / static_cast<double>(obs.points.size()));
  if (rms_px) *rms_px = rms;
  if (!(rms <= 100.0)) {
    std::ostringstream os;
    os << obs.image_id << ": best pose seed leaves " << rms << " px RMS";
    throw Error(ErrorCode::kInitFailure, os.str());
  }
  return best;
}

namespace {

constexpr int kMaxReseedRounds = 3;

// Board poses can settle in a wrong basin while the model is still far off.
// Boards whose error stands out are re-initialized under the current model;
// a new pose is kept only if it lowers that board's error.
int ReseedOutlierPoses(LmProblem* problem, const std::vector<const BoardObservation*>& obs,
                       const BoardSpec& spec) {
  const size_t nb = obs.size();
  std::vector<double> rms(nb);
  for (size_t b = 0; b < nb; ++b) {
    rms[b] = std::sqrt(problem->BoardSquaredError(b, problem->boards()[b].pose) /
                       static_cast<double>(obs[b]->points.size()));
  }
  const double median = MedianOf(rms);
  std::vector<size_t> order(nb);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return rms[a] > rms[b]; });
  const size_t budget = std::max<size_t>(2, nb / 10);
  const ViewModelParams params = ViewModelParams::Unflatten(problem->params());
  int replaced = 0;
  for (size_t k = 0; k < std::min(budget, nb); ++k) {
    const size_t b = order[k];
    if (!(rms[b] > std::max(5.0 * median, 1e-7))) break;
    Pose pose;
    try {
      pose = InitBoardPose(params, *obs[b], spec);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kInitFailure) throw;
      continue;
    }
    const double before = problem->BoardSquaredError(b, problem->boards()[b].pose);
    if (problem->BoardSquaredError(b, pose) < before * (1.0 - 1e-9)) {
      problem->SetPose(b, pose);
      ++replaced;
    }
  }
  return replaced;
}

}  // namespace

CalibrationResult CalibrateView(const ObservationCorpus& corpus_view,
                                const CalibrationConfig& config) {
  config.Validate();
  ObservationCorpus corpus = corpus_view;
  corpus.Canonicalize();
  if (corpus.observations.size() < 3) {
    throw Error(ErrorCode::kInvariantViolation, "calibration needs >= 3 boards");
  }
  const View view = corpus.observations.front().view;
  for (const auto& obs : corpus.observations) {
    if (obs.view != view) {
      throw Error(ErrorCode::kInvariantViolation, "corpus mixes upper and lower views");
    }
  }

  const Params c0 = config.InitialParams();
  const ViewModelParams seed_params = ViewModelParams::Unflatten(c0);

  CalibrationResult result;
  result.view = view;
  result.frozen = config.frozen;

  std::vector<BoardBlock> boards;
  std::vector<const BoardObservation*> kept;
  for (const auto& obs : corpus.observations) {
    try {
      const Pose pose = InitBoardPose(seed_params, obs, corpus.board);
      boards.push_back(MakeBlock(obs, corpus.board, pose));
      kept.push_back(&obs);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kInitFailure) throw;
      result.dropped_boards.push_back(obs.image_id);
    }
  }
  if (boards.size() < 3) {
    throw Error(ErrorCode::kInitFailure,
                "fewer than 3 boards survived pose initialization");
  }

  LmProblem problem(c0, std::move(boards), {}, config.huber_delta);
  {
    int sentinels = 0;
    problem.CurrentCost(&sentinels);
    if (sentinels * 100 > static_cast<int>(problem.NumPoints())) {
      throw Error(ErrorCode::kDegenerateGeometry,
                  "more than 1% of points cannot be projected at the seed");
    }
  }

  std::vector<int> free;
  bool converged = true;
  for (size_t si = 0; si < config.stage_schedule.size(); ++si) {
    for (int idx : config.stage_schedule[si]) {
      if (!config.frozen[idx]) free.push_back(idx);
    }
    std::sort(free.begin(), free.end());
    problem.set_free(free);
    const int max_iter =
        config.stage_max_iter.empty() ? config.lm_max_iter : config.stage_max_iter[si];
    StageReport rep = problem.Run(max_iter, config.lm_tol);
    for (int round = 0; round < kMaxReseedRounds; ++round) {
      if (ReseedOutlierPoses(&problem, kept, corpus.board) == 0) break;
      const StageReport again = problem.Run(max_iter, config.lm_tol);
      rep.iterations += again.iterations;
      rep.final_cost = again.final_cost;
      rep.converged = again.converged;
    }
    result.iterations += rep.iterations;
    converged = rep.converged;
    result.stages.push_back(rep);
  }
  result.converged = converged;

  result.params = ViewModelParams::Unflatten(problem.params());
  for (const BoardBlock& blk : problem.boards()) {
    result.board_poses[blk.image_id] = blk.pose;
    for (size_t i = 0; i < blk.model.size(); ++i) {
      PointResidual pr;
      pr.image_id = blk.image_id;
      pr.detected = {blk.detected[i].x(), blk.detected[i].y()};
      Eigen::Vector2d px;
      if (ProjectDouble(problem.params(), blk.pose, blk.model[i], &px)) {
        pr.residual = px - blk.detected[i];
      } else {
        pr.residual.setConstant(kLargeResidualPx);
      }
      result.per_point_residuals.push_back(pr);
    }
  }
  // Grid indices, in the same canonical order.
  {
    size_t k = 0;
    for (const auto& obs : corpus.observations) {
      if (!result.board_poses.count(obs.image_id)) continue;
      for (const auto& p : obs.points) result.per_point_residuals[k++].grid = p.grid;
    }
  }
  result.rms_px = result.RecomputeRms();
  return result;
}

CalibrationResult CalibrateTruncated(const ObservationCorpus& corpus_view,
                                     const CalibrationConfig& config) {
  CalibrationConfig cfg = config;
  const ParamMask trunc = TruncatedModelMask();
  for (int i = 0; i < kNumModelParams; ++i) cfg.frozen[i] = cfg.frozen[i] || trunc[i];
  return CalibrateView(corpus_view, cfg);
}

// --- serialization ---------------------------------------------------------

namespace {

int ParamIndexOf(const std::string& name) {
  for (int i = 0; i < kNumModelParams; ++i) {
    if (kParamNames[i] == name) return i;
  }
  throw Error(ErrorCode::kParseError, "unknown parameter name '" + name + "'");
}

nlohmann::json MaskToJson(const ParamMask& mask) {
  nlohmann::json names = nlohmann::json::array();
  for (int i = 0; i < kNumModelParams; ++i) {
    if (mask[i]) names.push_back(std::string(kParamNames[i]));
  }
  return names;
}

ParamMask MaskFromJson(const nlohmann::json& j) {
  ParamMask mask{};
  for (const auto& n : j) mask[ParamIndexOf(n.get<std::string>())] = true;
  return mask;
}

}  // namespace

nlohmann::json ConfigToJson(const CalibrationConfig& config) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& stage : config.stage_schedule) {
    nlohmann::json names = nlohmann::json::array();
    for (int idx : stage) names.push_back(std::string(kParamNames[idx]));
    stages.push_back(names);
  }
  nlohmann::json j = {{"init",
           {{"fx", config.init_fx},
            {"fy", config.init_fy},
            {"cx", config.init_cx},
            {"cy", config.init_cy},
            {"xi", config.init_xi}}},
          {"stage_schedule", stages},
          {"lm_max_iter", config.lm_max_iter},
          {"stage_max_iter", config.stage_max_iter},
          {"lm_tol", config.lm_tol},
          {"huber_delta", config.huber_delta},
          {"freeze", MaskToJson(config.frozen)}};
  if (config.warm_start) j["warm_start"] = ParamsToJson(*config.warm_start);
  return j;
}

CalibrationConfig ConfigFromJson(const nlohmann::json& j) {
  CalibrationConfig cfg;
  try {
    const auto& init = j.at("init");
    cfg.init_fx = init.at("fx").get<double>();
    cfg.init_fy = init.at("fy").get<double>();
    cfg.init_cx = init.at("cx").get<double>();
    cfg.init_cy = init.at("cy").get<double>();
    cfg.init_xi = init.at("xi").get<double>();
    if (j.contains("stage_schedule")) {
      cfg.stage_schedule.clear();
      for (const auto& stage : j.at("stage_schedule")) {
        std::vector<int> idx;
        for (const auto& n : stage) idx.push_back(ParamIndexOf(n.get<std::string>()));
        cfg.stage_schedule.push_back(idx);
      }
    }
    cfg.lm_max_iter = j.value("lm_max_iter", cfg.lm_max_iter);
    if (j.contains("stage_max_iter")) cfg.stage_max_iter = j.at("stage_max_iter").get<std::vector<int>>();
    cfg.lm_tol = j.value("lm_tol", cfg.lm_tol);
    cfg.huber_delta = j.value("huber_delta", cfg.huber_delta);
    if (j.contains("freeze")) cfg.frozen = MaskFromJson(j.at("freeze"));
    if (j.contains("warm_start")) cfg.warm_start = ParamsFromJson(j.at("warm_start"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("calibration config: ") + e.what());
  }
  cfg.Validate();
  return cfg;
}

CalibrationConfig LoadConfig(const std::filesystem::path& path) {
  try {
    return ConfigFromJson(ReadJsonFile(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

nlohmann::json ResultToJson(const CalibrationResult& result) {
  nlohmann::json poses = nlohmann::json::object();
  for (const auto& [id, pose] : result.board_poses) poses[id] = PoseToJson(pose);
  nlohmann::json residuals = nlohmann::json::array();
  for (const auto& r : result.per_point_residuals) {
    residuals.push_back({r.image_id, r.grid.row, r.grid.col, r.detected.u,
                         r.detected.v, r.residual.x(), r.residual.y()});
  }
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : result.stages) {
    stages.push_back({{"free_parameters", s.free_parameters},
                      {"iterations", s.iterations},
                      {"initial_cost", s.initial_cost},
                      {"final_cost", s.final_cost},
                      {"converged", s.converged}});
  }
  return {{"view", ViewName(result.view)},
          {"params", ParamsToJson(result.params)},
          {"rms_px", result.rms_px},
          {"num_points", result.per_point_residuals.size()},
          {"converged", result.converged},
          {"iterations", result.iterations},
          {"frozen", MaskToJson(result.frozen)},
          {"stages", stages},
          {"dropped_boards", result.dropped_boards},
          {"board_poses", poses},
          {"residuals", residuals}};
}

CalibrationResult ResultFromJson(const nlohmann::json& j) {
  CalibrationResult r;
  try {
    r.view = ParseView(j.at("view").get<std::string>());
    r.params = ParamsFromJson(j.at("params"));
    r.rms_px = j.at("rms_px").get<double>();
    r.converged = j.at("converged").get<bool>();
    r.iterations = j.at("iterations").get<int>();
    r.frozen = MaskFromJson(j.value("frozen", nlohmann::json::array()));
    r.dropped_boards = j.value("dropped_boards", std::vector<std::string>{});
    for (const auto& s : j.value("stages", nlohmann::json::array())) {
      r.stages.push_back({s.at("free_parameters").get<int>(), s.at("iterations").get<int>(),
                          s.at("initial_cost").get<double>(), s.at("final_cost").get<double>(),
                          s.at("converged").get<bool>()});
    }
    for (const auto& [id, pose] : j.at("board_poses").items()) {
      r.board_poses[id] = PoseFromJson(pose);
    }
    for (const auto& e : j.at("residuals")) {
      PointResidual pr;
      pr.image_id = e.at(0).get<std::string>();
      pr.grid = {e.at(1).get<int>(), e.at(2).get<int>()};
      pr.detected = {e.at(3).get<double>(), e.at(4).get<double>()};
      pr.residual = {e.at(5).get<double>(), e.at(6).get<double>()};
      r.per_point_residuals.push_back(pr);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("calibration result: ") + e.what());
  }
  return r;
}

CalibrationResult LoadResult(const std::filesystem::path& path) {
  try {
    return ResultFromJson(ReadJsonFile(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void SaveResult(const CalibrationResult& result, const std::filesystem::path& path) {
  WriteTextFile(path, ResultToJson(result).dump(1) + "\n");
}

void SaveResidualsCsv(const CalibrationResult& result,
                      const std::filesystem::path& path) {
  std::ostringstream os;
  os.precision(17);
  os << "image_id,row,col,du,dv\n";
  for (const auto& r : result.per_point_residuals) {
    os << r.image_id << ',' << r.grid.row << ',' << r.grid.col << ','
       << r.residual.x() << ',' << r.residual.y() << '\n';
  }
  WriteTextFile(path, os.str());
}

}  // namespace omni
