#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "cli.h"
#include "omnistereo/board.h"
#include "omnistereo/calibrate.h"
#include "omnistereo/image.h"
#include "omnistereo/manifest.h"
#include "test_util.h"

namespace omni {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code = -1;
  std::string out, err;
};

CliRun Cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = RunCli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// key=value lines from standard output.
std::map<std::string, std::string> Keys(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

fs::path FreshDir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("omni_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string Small() { return testing::DataPath("scenario_small.json").string(); }

// The fixture config started at the true parameters: exercises the plumbing
// without paying for a cold calibration.
std::string WarmConfig(const fs::path& dir, View view) {
  const bool up = view == View::kUpper;
  CalibrationConfig c = LoadConfig(testing::DataPath(up ? "config_upper.json" : "config_lower.json"));
  c.warm_start = up ? testing::Table1() : testing::Table2();
  c.lm_max_iter = 50;
  const fs::path p = dir / (up ? "warm_upper.json" : "warm_lower.json");
  std::ofstream(p) << ConfigToJson(c).dump(2);
  return p.string();
}

TEST(Cli, SimulateWritesCorpusAndManifest) {
  const fs::path d = FreshDir("sim");
  const CliRun r = Cli({"simulate", "--scenario", Small(), "--out", (d / "s").string(), "--no-images"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::is_regular_file(d / "s" / "corpus.json"));
  EXPECT_TRUE(fs::is_regular_file(d / "s" / "manifest.json"));
  EXPECT_FALSE(fs::exists(d / "s" / "upper.pgm"));
  EXPECT_EQ(Keys(r.out).at("boards"), "80");
}

TEST(Cli, MissingScenarioIsAnInputError) {
  const std::string missing = (FreshDir("missing") / "nope.json").string();
  const CliRun r = Cli({"simulate", "--scenario", missing, "--out", "/tmp/omni_cli_unused"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(missing), std::string::npos);
}

TEST(Cli, UnknownFlagIsAnInputError) {
  EXPECT_EQ(Cli({"simulate", "--bogus"}).code, 2);
  EXPECT_EQ(Cli({}).code, 2);
}

TEST(Cli, SeedRerunGivesIdenticalCorpus) {
  const fs::path d = FreshDir("seed");
  ASSERT_EQ(Cli({"simulate", "--scenario", Small(), "--out", (d / "a").string(), "--no-images"}).code, 0);
  ASSERT_EQ(Cli({"simulate", "--scenario", Small(), "--out", (d / "b").string(), "--no-images"}).code, 0);
  EXPECT_EQ(Sha256File(d / "a" / "corpus.json"), Sha256File(d / "b" / "corpus.json"));
  EXPECT_EQ(Sha256File(d / "a" / "truth.json"), Sha256File(d / "b" / "truth.json"));
}

TEST(Cli, CalibrateOnEmptyViewIsAnInputError) {
  const fs::path d = FreshDir("empty");
  ASSERT_EQ(Cli({"simulate", "--scenario", Small(), "--out", (d / "s").string(), "--no-images"}).code, 0);
  const ObservationCorpus upper_only = SplitViews(LoadCorpus(d / "s" / "corpus.json")).upper;
  SaveCorpus(upper_only, d / "upper_only.json");
  const CliRun r = Cli({"calibrate", "--corpus", (d / "upper_only.json").string(), "--view", "lower", "--config",
                     WarmConfig(d, View::kLower), "--out", (d / "cal.json").string()});
  EXPECT_EQ(r.code, 2) << r.err;
}

TEST(Cli, NonConvergenceExitsFourAndStillWrites) {
  const fs::path d = FreshDir("nonconv");
  ASSERT_EQ(Cli({"simulate", "--scenario", Small(), "--out", (d / "s").string(), "--no-images"}).code, 0);
  CalibrationConfig c = LoadConfig(testing::DataPath("config_upper.json"));
  c.lm_max_iter = 1;
  std::ofstream(d / "one_iter.json") << ConfigToJson(c).dump();
  const CliRun r = Cli({"calibrate", "--corpus", (d / "s" / "corpus.json").string(), "--view", "upper", "--config",
                     (d / "one_iter.json").string(), "--out", (d / "cal.json").string()});
  EXPECT_EQ(r.code, 4) << r.err;
  EXPECT_EQ(Keys(r.out).at("converged"), "false");
  EXPECT_TRUE(fs::is_regular_file(d / "cal.json"));
  EXPECT_FALSE(LoadResult(d / "cal.json").converged);
}

TEST(Cli, EditedUpstreamArtifactIsStale) {
  const fs::path d = FreshDir("stale");
  ASSERT_EQ(Cli({"simulate", "--scenario", Small(), "--out", (d / "s").string(), "--no-images"}).code, 0);
  {
    std::ofstream out(d / "s" / "corpus.json", std::ios::app);
    out << "\n";
  }
  const CliRun r = Cli({"calibrate", "--corpus", (d / "s" / "corpus.json").string(), "--view", "upper", "--config",
                     WarmConfig(d, View::kUpper), "--out", (d / "cal.json").string()});
  EXPECT_EQ(r.code, 5) << r.err;
}

TEST(Cli, DisparityWithMismatchedSizesIsAnInputError) {
  const fs::path d = FreshDir("mismatch");
  WritePnm(Image(20, 10, 1, 255), d / "a.pgm");
  WritePnm(Image(20, 11, 1, 255), d / "b.pgm");
  const CliRun r = Cli({"disparity", "--upper", (d / "a.pgm").string(), "--lower", (d / "b.pgm").string(), "--out",
                     (d / "disp.pgm").string()});
  EXPECT_EQ(r.code, 2) << r.err;
}

// simulate -> calibrate x2 -> rectify -> disparity -> cloud -> evaluate.
std::vector<fs::path> RunPipeline(const fs::path& d) {
  const std::string sim = (d / "sim").string();
  EXPECT_EQ(Cli({"simulate", "--scenario", Small(), "--out", sim}).code, 0);
  for (const View v : {View::kUpper, View::kLower}) {
    const std::string name = v == View::kUpper ? "upper" : "lower";
    const CliRun r = Cli({"calibrate", "--corpus", sim + "/corpus.json", "--view", name, "--config", WarmConfig(d, v),
                       "--out", (d / ("cal_" + name + ".json")).string()});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_LT(std::stod(Keys(r.out).at("rms_px")), 1e-6);
  }
  const CliRun rec = Cli({"rectify", "--upper-calib", (d / "cal_upper.json").string(), "--lower-calib",
                       (d / "cal_lower.json").string(), "--cylinder", sim + "/scenario.json", "--upper-image",
                       sim + "/upper.pgm", "--lower-image", sim + "/lower.pgm", "--out", (d / "rect").string()});
  EXPECT_EQ(rec.code, 0) << rec.err;
  const CliRun dis = Cli({"disparity", "--upper", (d / "rect" / "upper_cyl.pgm").string(), "--lower",
                       (d / "rect" / "lower_cyl.pgm").string(), "--config",
                       testing::DataPath("match_small.json").string(), "--out", (d / "disp.pgm").string()});
  EXPECT_EQ(dis.code, 0) << dis.err;
  const CliRun clo = Cli({"cloud", "--disparity", (d / "disp.pgm").string(), "--geometry",
                       (d / "rect" / "geometry.json").string(), "--binary", "--out", (d / "cloud.ply").string()});
  EXPECT_EQ(clo.code, 0) << clo.err;
  const CliRun ev = Cli({"evaluate", "--cloud", (d / "cloud.ply").string(), "--floor-truth", sim + "/floor_truth.json",
                      "--calibration", (d / "cal_upper.json").string(), "--out", (d / "eval").string()});
  EXPECT_EQ(ev.code, 0) << ev.err;
  const auto kv = Keys(ev.out);
  EXPECT_TRUE(kv.count("systematic_error_pct"));
  EXPECT_TRUE(kv.count("random_error_pct"));
  EXPECT_GT(std::stoi(kv.at("evaluated_points")), 1000);
  return {d / "sim" / "corpus.json", d / "cal_upper.json", d / "cal_lower.json", d / "rect" / "upper_cyl.pgm",
          d / "disp.pgm", d / "cloud.ply", d / "eval" / "distance_report.csv"};
}

TEST(Cli, PipelineRunsEndToEndAndIsIdempotent) {
  const fs::path root = FreshDir("pipeline");
  const auto a = RunPipeline(root / "a");
  const auto b = RunPipeline(root / "b");
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(Sha256File(a[i]), Sha256File(b[i])) << a[i].filename();
  // A stale cloud is refused downstream.
  {
    std::ofstream out(a[5], std::ios::app);
    out << " ";
  }
  EXPECT_EQ(Cli({"evaluate", "--cloud", a[5].string(), "--floor-truth", (root / "a" / "sim" / "floor_truth.json").string(),
                 "--out", (root / "a" / "eval2").string()})
                .code,
            5);
}

}  // namespace
}  // namespace omni
