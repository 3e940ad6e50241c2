#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>

#include <gtest/gtest.h>

#include "omnistereo/error.h"
#include "omnistereo/stereo.h"
#include "omnistereo/synth.h"
#include "texture_util.h"

namespace omni {
namespace {

using testing::Render;
using testing::ShiftedPair;
using testing::Texture;

std::filesystem::path TempPath(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("omni_stereo_" + name);
}

TEST(BlockMatch, RecoversIntegerShifts) {
  MatchConfig cfg;
  cfg.max_disp = 48;
  for (int k : {2, 7, 31}) {
    const auto [up, lo] = ShiftedPair(k, 100 + k);
    const DisparityImage d = BlockMatch(up, lo, cfg);
    size_t valid = 0;
    double worst = 0.0;
    for (int y = 0; y < d.height; ++y) {
      for (int x = 0; x < d.width; ++x) {
        if (!d.Valid(x, y)) continue;
        ++valid;
        worst = std::max<double>(worst, std::abs(d.at(x, y) - k));
      }
    }
    EXPECT_LT(worst, 0.05) << k;
    // Blocks near the borders and rows without a partner are invalid.
    EXPECT_GT(valid, static_cast<size_t>(0.5 * 146 * (186 - k - cfg.block_h / 2))) << k;
  }
}

TEST(BlockMatch, ConstantImagesAreAllInvalid) {
  const Image a = Render(80, 80, [](int, int) { return 90.0; });
  const DisparityImage d = BlockMatch(a, a, MatchConfig());
  EXPECT_EQ(d.CountValid(), 0u);
}

TEST(BlockMatch, SizeMismatchIsRejected) {
  const Image a(50, 40, 1, 255), b(50, 41, 1, 255);
  try {
    BlockMatch(a, b, MatchConfig());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
}

TEST(BlockMatch, SentinelInsideTheWindowInvalidates) {
  auto [up, lo] = ShiftedPair(7, 5);
  for (int x = 0; x < lo.width; ++x) lo.at(x, 100) = lo.Sentinel();
  MatchConfig cfg;
  cfg.max_disp = 20;
  const DisparityImage d = BlockMatch(up, lo, cfg);
  // Upper rows whose candidate windows reach lower row 100.
  for (int x = 20; x < 140; ++x) {
    EXPECT_FALSE(d.Valid(x, 100 - 7)) << x;
  }
  EXPECT_GT(d.CountValid(), 1000u);
}

TEST(MatchConfig, Validation) {
  MatchConfig c;
  c.block_w = 4;
  EXPECT_THROW(c.Validate(), Error);
  c = MatchConfig();
  c.min_disp = 10;
  c.max_disp = 10;
  EXPECT_THROW(c.Validate(), Error);
  c = MatchConfig();
  c.uniqueness_ratio = 1.3;
  EXPECT_EQ(MatchConfigToJson(MatchConfigFromJson(MatchConfigToJson(c))), MatchConfigToJson(c));
}

CylinderSpec WallSpec(double fcyl) {
  CylinderSpec s;
  s.fcyl = fcyl;
  s.dtheta = 1.0 / 714.0;
  s.theta0 = 1.0;
  s.width = 120;
  s.v0 = 0.5 * fcyl;  // elevations from about +27 to -27 degrees
  s.height = static_cast<int>(fcyl);
  return s;
}

// Cylindrical wall of radius rho around the axis, textured in (theta, z), seen
// from both viewpoints; in cylinder space it is the fronto-parallel target.
std::pair<Image, Image> RenderWall(const CylinderSpec& s, double rho, double baseline) {
  const Texture tex(9);
  // Texture in metres: 1 unit = 5 mm, so one cycle spans several pixels.
  auto value = [&](double theta, double z) { return tex(theta * rho / 0.005, z / 0.005); };
  const Image up = Render(s.width, s.height, [&](int x, int y) { return value(s.Theta(x), rho * s.Slope(y)); });
  const Image lo = Render(s.width, s.height, [&](int x, int y) { return value(s.Theta(x), rho * s.Slope(y) + baseline); });
  return {up, lo};
}

double MedianValid(const DisparityImage& d) {
  std::vector<float> v;
  for (float x : d.values) {
    if (!std::isnan(x)) v.push_back(x);
  }
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  return v.empty() ? NAN : v[v.size() / 2];
}

TEST(BlockMatch, WallDisparityMatchesTriangulation) {
  const double rho = 3.0, b = 0.1;
  const CylinderSpec s = WallSpec(714.0);
  const auto [up, lo] = RenderWall(s, rho, b);
  MatchConfig cfg;
  cfg.max_disp = 40;
  const DisparityImage d = BlockMatch(up, lo, cfg);
  const double expect = s.fcyl * b / rho;
  size_t valid = 0;
  for (float v : d.values) {
    if (std::isnan(v)) continue;
    ++valid;
    EXPECT_NEAR(v, expect, 0.2);
  }
  EXPECT_GT(valid, 10000u);
}

TEST(DisparityToCloud, UnitDisparityScaleGivesOneMetre) {
  const RigGeometry rig = RigFromRelativePose(SynthScenario::Default().rig_truth);
  const CylinderSpec s = WallSpec(714.0);
  DisparityImage d;
  d.width = s.width;
  d.height = s.height;
  d.values.assign(static_cast<size_t>(s.width) * s.height, kInvalidDisparity);
  d.at(10, 20) = static_cast<float>(s.fcyl * rig.baseline_m);
  const PointCloud c = DisparityToCloud(d, s, rig);
  ASSERT_EQ(c.points.size(), 1u);
  const CloudPoint& p = c.points[0];
  EXPECT_NEAR(std::hypot(p.x, p.y), 1.0, 1e-6);
  // z-up frame: azimuth turns the other way and height is -rho * slope.
  EXPECT_NEAR(std::atan2(-p.y, p.x), s.Theta(10), 1e-6);
  EXPECT_NEAR(p.z, -s.Slope(20), 1e-6);
}

TEST(DisparityToCloud, TriangulationIdentity) {
  const RigGeometry rig = RigFromRelativePose(SynthScenario::Default().rig_truth);
  const CylinderSpec s = WallSpec(714.0);
  DisparityImage d;
  d.width = s.width;
  d.height = s.height;
  SynthRng rng(4);
  for (int i = 0; i < s.width * s.height; ++i) d.values.push_back(static_cast<float>(rng.Uniform(0.5, 60)));
  const PointCloud c = DisparityToCloud(d, s, rig);
  ASSERT_EQ(c.points.size(), d.values.size());
  for (size_t i = 0; i < c.points.size(); i += 97) {
    const double rho = std::hypot(c.points[i].x, c.points[i].y);
    EXPECT_NEAR(rho * d.values[i], s.fcyl * rig.baseline_m, 1e-5 * s.fcyl * rig.baseline_m);
  }
}

TEST(DisparityToCloud, HalvingFcylHalvesDisparityNotRange) {
  const double rho = 3.0, b = 0.1;
  MatchConfig cfg;
  cfg.max_disp = 40;
  RigGeometry rig = RigFromRelativePose(SynthScenario::Default().rig_truth);
  rig.baseline_m = b;
  double d_full = 0, d_half = 0, r_full = 0, r_half = 0;
  for (double f : {714.0, 357.0}) {
    const CylinderSpec s = WallSpec(f);
    const auto [up, lo] = RenderWall(s, rho, b);
    const DisparityImage d = BlockMatch(up, lo, cfg);
    const PointCloud c = DisparityToCloud(d, s, rig);
    std::vector<double> r;
    for (const auto& p : c.points) r.push_back(std::hypot(p.x, p.y));
    std::nth_element(r.begin(), r.begin() + r.size() / 2, r.end());
    (f == 714.0 ? d_full : d_half) = MedianValid(d);
    (f == 714.0 ? r_full : r_half) = r[r.size() / 2];
  }
  EXPECT_NEAR(d_half / d_full, 0.5, 0.005);
  EXPECT_NEAR(r_full, rho, 0.01 * rho);
  EXPECT_NEAR(r_half, r_full, 0.01 * rho);
}

TEST(DisparityFile, RoundTripWithinQuantization) {
  DisparityImage d;
  d.width = 30;
  d.height = 20;
  d.config.max_disp = 99;
  SynthRng rng(2);
  for (int i = 0; i < 600; ++i) d.values.push_back(i % 7 == 0 ? kInvalidDisparity : static_cast<float>(rng.Uniform(0, 99)));
  const auto path = TempPath("rt.pgm");
  SaveDisparity(d, path);
  const DisparityImage back = LoadDisparity(path);
  ASSERT_EQ(back.values.size(), d.values.size());
  EXPECT_EQ(back.config.max_disp, 99);
  for (size_t i = 0; i < d.values.size(); ++i) {
    if (std::isnan(d.values[i])) {
      EXPECT_TRUE(std::isnan(back.values[i]));
    } else {
      EXPECT_NEAR(back.values[i], d.values[i], 0.5 / 16 + 1e-6);
    }
  }
  // Saving what was loaded is lossless.
  const auto path2 = TempPath("rt2.pgm");
  SaveDisparity(back, path2);
  const DisparityImage again = LoadDisparity(path2);
  for (size_t i = 0; i < d.values.size(); ++i) {
    if (!std::isnan(back.values[i])) EXPECT_EQ(again.values[i], back.values[i]);
  }
}

TEST(Ply, AsciiAndBinaryRoundTrip) {
  PointCloud c;
  c.has_color = true;
  SynthRng rng(8);
  for (int i = 0; i < 50; ++i) {
    c.points.push_back({static_cast<float>(rng.Uniform(-10, 10)), static_cast<float>(rng.Uniform(-10, 10)),
                        static_cast<float>(rng.Uniform(-2, 1)), static_cast<uint8_t>(i), 7, 200});
  }
  for (bool binary : {false, true}) {
    const auto path = TempPath(binary ? "b.ply" : "a.ply");
    SavePly(c, path, binary);
    const PointCloud back = LoadPly(path);
    ASSERT_EQ(back.points.size(), c.points.size());
    EXPECT_TRUE(back.has_color);
    for (size_t i = 0; i < c.points.size(); ++i) {
      EXPECT_EQ(back.points[i].x, c.points[i].x);
      EXPECT_EQ(back.points[i].y, c.points[i].y);
      EXPECT_EQ(back.points[i].z, c.points[i].z);
      EXPECT_EQ(back.points[i].r, c.points[i].r);
      EXPECT_EQ(back.points[i].b, c.points[i].b);
    }
  }
}

TEST(BlockMatch, SameOutputForAnyThreadCount) {
  const auto [up, lo] = ShiftedPair(7, 3);
  MatchConfig cfg;
  cfg.max_disp = 20;
  cfg.left_right_check = true;
  setenv("OSC_THREADS", "1", 1);
  const DisparityImage a = BlockMatch(up, lo, cfg);
  setenv("OSC_THREADS", "5", 1);
  const DisparityImage b = BlockMatch(up, lo, cfg);
  unsetenv("OSC_THREADS");
  ASSERT_EQ(a.values.size(), b.values.size());
  EXPECT_EQ(std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)), 0);
}

}  // namespace
}  // namespace omni
