#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "omnistereo/board.h"
#include "omnistereo/error.h"
#include "omnistereo/synth.h"

namespace omni {
namespace {

std::filesystem::path TempPath(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("omni_board_" + name);
}

std::string ReadAll(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

BoardObservation Square(const std::string& id, View view) {
  BoardObservation o;
  o.image_id = id;
  o.view = view;
  o.points = {{{0, 0}, {10, 10}}, {{0, 1}, {20, 10}}, {{1, 0}, {10, 20}}, {{1, 1}, {20, 20}}};
  return o;
}

ObservationCorpus SmallCorpus() {
  ObservationCorpus c;
  c.board = {2, 2, 0.05};
  c.observations = {Square("A", View::kUpper), Square("A", View::kLower), Square("B", View::kUpper)};
  return c;
}

TEST(BoardModelPoints, TwoByTwo) {
  const auto pts = BoardModelPoints({2, 2, 0.05});
  ASSERT_EQ(pts.size(), 4u);
  EXPECT_EQ(pts[0], Eigen::Vector3d(0, 0, 0));
  EXPECT_EQ(pts[1], Eigen::Vector3d(0.05, 0, 0));
  EXPECT_EQ(pts[2], Eigen::Vector3d(0, 0.05, 0));
  EXPECT_EQ(pts[3], Eigen::Vector3d(0.05, 0.05, 0));
}

TEST(BoardModelPoints, OneByOneRejected) {
  try {
    BoardModelPoints({1, 1, 0.03});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvariantViolation);
  }
}

TEST(BoardModelPoints, SevenByTen) {
  const auto pts = BoardModelPoints({7, 10, 0.03});
  ASSERT_EQ(pts.size(), 70u);
  Eigen::Vector3d mx = Eigen::Vector3d::Zero();
  for (const auto& p : pts) mx = mx.cwiseMax(p);
  EXPECT_NEAR(mx.x(), 0.27, 1e-15);
  EXPECT_NEAR(mx.y(), 0.18, 1e-15);
  EXPECT_EQ(mx.z(), 0.0);
}

TEST(Corpus, EmptyObservationsRejected) {
  ObservationCorpus c;
  try {
    c.Validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvariantViolation);
  }
}

TEST(Corpus, DuplicateImageViewRejected) {
  ObservationCorpus c = SmallCorpus();
  c.observations.push_back(Square("B", View::kUpper));
  try {
    c.Validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvariantViolation);
    EXPECT_NE(std::string(e.what()).find("B/upper"), std::string::npos);
  }
}

TEST(Corpus, PointInvariantsChecked) {
  ObservationCorpus c = SmallCorpus();
  c.observations[0].points.pop_back();
  EXPECT_THROW(c.Validate(), Error);
  c = SmallCorpus();
  c.observations[0].points[0].pixel.u = 4912.0;
  EXPECT_THROW(c.Validate(), Error);
  c = SmallCorpus();
  c.observations[0].points[1].grid = {0, 0};
  EXPECT_THROW(c.Validate(), Error);
  c = SmallCorpus();
  c.observations[0].points[0].grid = {2, 0};
  EXPECT_THROW(c.Validate(), Error);
}

TEST(Corpus, ParseErrorNamesTheField) {
  const auto path = TempPath("bad.json");
  {
    std::ofstream out(path);
    out << R"({"board":{"rows":2,"cols":2,"pitch":0.05},"sensor":{"width":4912,"height":3684},
      "observations":[{"image_id":"A","view":"upper","points":[[0,0,1,2],[0,1,"x",2]]}]})";
  }
  try {
    LoadCorpus(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParseError);
    EXPECT_NE(std::string(e.what()).find("observations[0].points[1]"), std::string::npos);
  }
}

TEST(Corpus, RoundTripKeepsEveryField) {
  ObservationCorpus c = SmallCorpus();
  c.observations[0].points[2].pixel = {1234.56789012345, 0.1 + 0.2};
  std::swap(c.observations[0].points[0], c.observations[0].points[3]);
  c.sensor_width = 4000;
  c.Canonicalize();
  const auto path = TempPath("rt.json");
  SaveCorpus(c, path);
  const ObservationCorpus back = LoadCorpus(path);
  ASSERT_EQ(back.observations.size(), c.observations.size());
  EXPECT_EQ(back.sensor_width, 4000);
  EXPECT_EQ(back.board.pitch, c.board.pitch);
  for (size_t i = 0; i < c.observations.size(); ++i) {
    EXPECT_EQ(back.observations[i].image_id, c.observations[i].image_id);
    EXPECT_EQ(back.observations[i].view, c.observations[i].view);
    ASSERT_EQ(back.observations[i].points.size(), c.observations[i].points.size());
    for (size_t k = 0; k < c.observations[i].points.size(); ++k) {
      EXPECT_EQ(back.observations[i].points[k].grid, c.observations[i].points[k].grid);
      EXPECT_EQ(back.observations[i].points[k].pixel.u, c.observations[i].points[k].pixel.u);
      EXPECT_EQ(back.observations[i].points[k].pixel.v, c.observations[i].points[k].pixel.v);
    }
  }
}

TEST(Corpus, SyntheticRoundTripIsByteIdentical) {
  SynthScenario s = SynthScenario::Default();
  s.n_upper = 200;
  s.n_lower = 0;
  s.n_shared = 0;
  s.noise_px = 0.1;
  const ObservationCorpus c = GenCorpus(s, nullptr);
  ASSERT_EQ(c.observations.size(), 200u);
  const auto a = TempPath("syn_a.json"), b = TempPath("syn_b.json");
  SaveCorpus(c, a);
  SaveCorpus(LoadCorpus(a), b);
  EXPECT_EQ(ReadAll(a), ReadAll(b));
  EXPECT_EQ(ReadAll(a), SerializeCorpus(c));
}

TEST(SplitViews, SharedIds) {
  const ViewSplit s = SplitViews(SmallCorpus());
  EXPECT_EQ(s.upper.observations.size(), 2u);
  EXPECT_EQ(s.lower.observations.size(), 1u);
  EXPECT_EQ(s.shared, std::vector<std::string>{"A"});
}

TEST(SplitViews, AllUpper) {
  ObservationCorpus c = SmallCorpus();
  c.observations.erase(c.observations.begin() + 1);
  const ViewSplit s = SplitViews(c);
  EXPECT_TRUE(s.lower.observations.empty());
  EXPECT_TRUE(s.shared.empty());
  EXPECT_EQ(s.upper.observations.size() + s.lower.observations.size(), c.observations.size());
}

TEST(SplitViews, SyntheticSharedCountMatchesGenerator) {
  SynthScenario s = SynthScenario::Default();
  s.n_upper = 210;
  s.n_lower = 210;
  s.n_shared = 120;
  SynthTruth truth;
  const ObservationCorpus c = GenCorpus(s, &truth);
  const ViewSplit v = SplitViews(c);
  EXPECT_EQ(v.upper.observations.size() + v.lower.observations.size(), c.observations.size());
  EXPECT_EQ(v.shared.size(), 120u);
  EXPECT_EQ(v.shared, truth.shared);
  std::set<std::string> ids;
  for (const auto& o : c.observations) ids.insert(o.image_id);
  EXPECT_EQ(ids.size(), 300u);
}

}  // namespace
}  // namespace omni
