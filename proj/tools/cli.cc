#include "cli.h"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "omnistereo/board.h"
#include "omnistereo/calibrate.h"
#include "omnistereo/error.h"
#include "omnistereo/evaluate.h"
#include "omnistereo/floor.h"
#include "omnistereo/image.h"
#include "omnistereo/manifest.h"
#include "omnistereo/model_io.h"
#include "omnistereo/rectify.h"
#include "omnistereo/stereo.h"
#include "omnistereo/synth.h"

namespace omni {

namespace fs = std::filesystem;

namespace {

std::string Fmt(double v) {
  char b[64];
  std::snprintf(b, sizeof b, "%.9g", v);
  return b;
}

int ExitCodeFor(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParseError:
    case ErrorCode::kIoError:
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kInvariantViolation:
      return kExitInput;
    case ErrorCode::kDigestMismatch:
      return kExitStale;
    default:
      return kExitCompute;
  }
}

// Existence and freshness of an input artifact, recorded in the manifest.
void UseInput(const std::string& path, RunManifest* m) {
  if (!fs::is_regular_file(path)) throw Error(ErrorCode::kIoError, "input not found: " + path);
  VerifyAgainstManifests(path);
  m->AddInput(path);
}

void MakeDir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(ErrorCode::kIoError, "cannot create directory " + dir.string());
}

fs::path ParentDir(const fs::path& file) {
  const fs::path p = fs::absolute(file).parent_path();
  MakeDir(p);
  return p;
}

nlohmann::json FlagsOf(const CLI::App* sub) {
  nlohmann::json flags = nlohmann::json::object();
  for (const CLI::Option* o : sub->get_options()) {
    if (o->get_name() == "--help" || o->count() == 0) continue;
    const auto& r = o->results();
    flags[o->get_name()] = r.size() == 1 ? nlohmann::json(r[0]) : nlohmann::json(r);
  }
  return flags;
}

struct Context {
  std::ostream& out;
  RunManifest manifest;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void Finish(const fs::path& manifest_path) {
    manifest.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    SaveManifest(manifest, manifest_path);
  }
};

Eigen::Vector3d Vec3(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

// ---- simulate ----

struct SimulateArgs {
  std::string scenario, out;
  bool no_images = false;
};

int Simulate(const SimulateArgs& a, Context& ctx) {
  UseInput(a.scenario, &ctx.manifest);
  const nlohmann::json sj = ReadJsonFile(a.scenario);
  const SynthScenario s = ScenarioFromJson(sj);
  s.Validate();
  std::optional<FloorOptions> floor;
  if (sj.contains("floor")) {
    floor = FloorOptionsFromJson(sj.at("floor"));
    floor->Validate(s.Baseline());
  }
  const fs::path dir = fs::absolute(a.out);
  MakeDir(dir);
  SynthTruth truth;
  const ObservationCorpus corpus = GenCorpus(s, &truth);
  std::vector<fs::path> written = {dir / "corpus.json", dir / "truth.json", dir / "scenario.json"};
  SaveCorpus(corpus, written[0]);
  WriteTextFile(written[1], TruthToJson(s, truth).dump(1) + "\n");
  nlohmann::json echo = ScenarioToJson(s);
  if (floor) echo["floor"] = FloorOptionsToJson(*floor);
  WriteTextFile(written[2], echo.dump(2) + "\n");
  if (floor && !a.no_images) {
    WritePnm(RenderFloorSensor(s, *floor, View::kUpper), dir / "upper.pgm");
    WritePnm(RenderFloorSensor(s, *floor, View::kLower), dir / "lower.pgm");
    const nlohmann::json ft = {
        {"plane", {0.0, 0.0, 1.0, floor->drop_m}},
        {"origin", {0.0, 0.0, 0.0}},
        {"up", {0.0, 0.0, 1.0}},
        {"frame", "z-up cylinder frame, origin at the upper viewpoint"}};
    WriteTextFile(dir / "floor_truth.json", ft.dump(2) + "\n");
    written.insert(written.end(), {dir / "upper.pgm", dir / "lower.pgm", dir / "floor_truth.json"});
  }
  for (const auto& p : written) ctx.manifest.AddOutput(p, dir);
  ctx.Finish(dir / "manifest.json");
  ctx.out << "boards=" << corpus.observations.size() << "\n";
  ctx.out << "points=" << corpus.NumPoints() << "\n";
  return kExitOk;
}

// ---- calibrate ----

struct CalibrateArgs {
  std::string corpus, view, config, out, residuals;
  bool truncated = false;
};

int Calibrate(const CalibrateArgs& a, Context& ctx) {
  UseInput(a.corpus, &ctx.manifest);
  UseInput(a.config, &ctx.manifest);
  const View view = ParseView(a.view);
  const ObservationCorpus corpus = LoadCorpus(a.corpus);
  const CalibrationConfig config = LoadConfig(a.config);
  const ViewSplit split = SplitViews(corpus);
  const ObservationCorpus& part = view == View::kUpper ? split.upper : split.lower;
  if (part.observations.empty()) {
    throw Error(ErrorCode::kParseError, a.corpus + " has no " + a.view + " observations");
  }
  const CalibrationResult r = a.truncated ? CalibrateTruncated(part, config) : CalibrateView(part, config);
  const fs::path dir = ParentDir(a.out);
  SaveResult(r, a.out);
  ctx.manifest.AddOutput(a.out, dir);
  if (!a.residuals.empty()) {
    SaveResidualsCsv(r, a.residuals);
    ctx.manifest.AddOutput(a.residuals, dir);
  }
  ctx.Finish(a.out + ".manifest.json");
  ctx.out << "rms_px=" << Fmt(r.rms_px) << "\n";
  ctx.out << "converged=" << (r.converged ? "true" : "false") << "\n";
  return r.converged ? kExitOk : kExitNonConvergence;
}

// ---- rectify ----

struct RectifyArgs {
  std::string upper_calib, lower_calib, cylinder, upper_image, lower_image, out;
  int sensor_width = 4912, sensor_height = 3684;
};

int Rectify(const RectifyArgs& a, Context& ctx) {
  UseInput(a.upper_calib, &ctx.manifest);
  UseInput(a.lower_calib, &ctx.manifest);
  CylinderOptions opt;
  if (!a.cylinder.empty()) {
    UseInput(a.cylinder, &ctx.manifest);
    // A scenario file carries the cylinder options in its "floor" block.
    const nlohmann::json cj = ReadJsonFile(a.cylinder);
    opt = FloorOptionsFromJson(cj.contains("floor") ? cj.at("floor") : cj).cylinder;
  }
  if (a.upper_image.empty() != a.lower_image.empty()) {
    throw Error(ErrorCode::kParseError, "--upper-image and --lower-image go together");
  }
  std::optional<Image> up_img, lo_img;
  int sw = a.sensor_width, sh = a.sensor_height;
  if (!a.upper_image.empty()) {
    UseInput(a.upper_image, &ctx.manifest);
    UseInput(a.lower_image, &ctx.manifest);
    up_img = ReadPnm(a.upper_image);
    lo_img = ReadPnm(a.lower_image);
    if (!up_img->SameSize(*lo_img)) {
      throw Error(ErrorCode::kDimensionMismatch, "upper and lower sensor images differ in size");
    }
    sw = up_img->width;
    sh = up_img->height;
  }
  const CalibrationResult cu = LoadResult(a.upper_calib);
  const CalibrationResult cl = LoadResult(a.lower_calib);
  if (cu.view != View::kUpper || cl.view != View::kLower) {
    throw Error(ErrorCode::kParseError, "calibrations must be of the upper and lower views, in that order");
  }
  std::vector<std::string> shared;
  for (const auto& [id, pose] : cu.board_poses) {
    if (cl.board_poses.count(id)) shared.push_back(id);
  }
  const RigGeometry rig = EstimateRig(cu, cl, shared);
  const CylinderPair cyl = BuildCylinders(rig, opt);
  const RemapTable mu = BuildRemap(cu.params, rig.rot_upper, cyl.upper, opt.fov_upper, sw, sh);
  const RemapTable ml = BuildRemap(cl.params, rig.rot_lower, cyl.lower, opt.fov_lower, sw, sh);

  const fs::path dir = fs::absolute(a.out);
  MakeDir(dir);
  const nlohmann::json geom = {{"rig", RigToJson(rig)},
                               {"cylinder_upper", CylinderToJson(cyl.upper)},
                               {"cylinder_lower", CylinderToJson(cyl.lower)},
                               {"fov_upper", FovToJson(opt.fov_upper)},
                               {"fov_lower", FovToJson(opt.fov_lower)},
                               {"shared_boards", shared.size()}};
  std::vector<fs::path> written = {dir / "geometry.json", dir / "upper.remap", dir / "lower.remap"};
  WriteTextFile(written[0], geom.dump(2) + "\n");
  SaveRemap(mu, written[1]);
  SaveRemap(ml, written[2]);
  if (up_img) {
    WritePnm(ExpandImage(*up_img, mu), dir / "upper_cyl.pgm");
    WritePnm(ExpandImage(*lo_img, ml), dir / "lower_cyl.pgm");
    written.insert(written.end(), {dir / "upper_cyl.pgm", dir / "lower_cyl.pgm"});
  }
  for (const auto& p : written) ctx.manifest.AddOutput(p, dir);
  ctx.Finish(dir / "manifest.json");
  ctx.out << "baseline_m=" << Fmt(rig.baseline_m) << "\n";
  ctx.out << "shared_boards=" << shared.size() << "\n";
  ctx.out << "cylinder=" << cyl.upper.width << "x" << cyl.upper.height << "\n";
  return kExitOk;
}

// ---- disparity ----

struct DisparityArgs {
  std::string upper, lower, config, out;
};

int Disparity(const DisparityArgs& a, Context& ctx) {
  UseInput(a.upper, &ctx.manifest);
  UseInput(a.lower, &ctx.manifest);
  MatchConfig cfg;
  if (!a.config.empty()) {
    UseInput(a.config, &ctx.manifest);
    cfg = MatchConfigFromJson(ReadJsonFile(a.config));
  }
  const DisparityImage d = BlockMatch(ReadPnm(a.upper), ReadPnm(a.lower), cfg);
  const fs::path dir = ParentDir(a.out);
  SaveDisparity(d, a.out);
  ctx.manifest.AddOutput(a.out, dir);
  ctx.manifest.AddOutput(a.out + ".json", dir);
  ctx.Finish(a.out + ".manifest.json");
  ctx.out << "valid_pixels=" << d.CountValid() << "\n";
  return kExitOk;
}

// ---- cloud ----

struct CloudArgs {
  std::string disparity, geometry, color, out;
  bool binary = false;
};

int Cloud(const CloudArgs& a, Context& ctx) {
  UseInput(a.disparity, &ctx.manifest);
  UseInput(a.disparity + ".json", &ctx.manifest);
  UseInput(a.geometry, &ctx.manifest);
  const DisparityImage d = LoadDisparity(a.disparity);
  const nlohmann::json g = ReadJsonFile(a.geometry);
  CylinderSpec spec;
  RigGeometry rig;
  try {
    spec = CylinderFromJson(g.at("cylinder_upper"));
    rig = RigFromJson(g.at("rig"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, a.geometry + ": " + e.what());
  }
  std::optional<Image> color;
  if (!a.color.empty()) {
    UseInput(a.color, &ctx.manifest);
    color = ReadPnm(a.color);
  }
  const PointCloud cloud = DisparityToCloud(d, spec, rig, color ? &*color : nullptr);
  const fs::path dir = ParentDir(a.out);
  SavePly(cloud, a.out, a.binary);
  ctx.manifest.AddOutput(a.out, dir);
  ctx.Finish(a.out + ".manifest.json");
  ctx.out << "points=" << cloud.points.size() << "\n";
  return kExitOk;
}

// ---- evaluate ----

struct EvaluateArgs {
  std::string cloud, floor_truth, calibration, out, bin_edges;
  int grid_w = 16, grid_h = 12;
  int sensor_width = 4912, sensor_height = 3684;
};

std::vector<double> ParseEdges(const std::string& text) {
  std::vector<double> e;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      e.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kParseError, "bad bin edge '" + tok + "'");
    }
  }
  return e;
}

int Evaluate(const EvaluateArgs& a, Context& ctx) {
  if (a.cloud.empty() && a.calibration.empty()) {
    throw Error(ErrorCode::kParseError, "evaluate needs --cloud with --floor-truth, or --calibration");
  }
  if (a.cloud.empty() != a.floor_truth.empty()) {
    throw Error(ErrorCode::kParseError, "--cloud and --floor-truth go together");
  }
  const fs::path dir = fs::absolute(a.out);
  std::vector<fs::path> written;
  std::optional<DistanceErrorReport> report;
  std::optional<ResidualField> field;
  if (!a.cloud.empty()) {
    UseInput(a.cloud, &ctx.manifest);
    UseInput(a.floor_truth, &ctx.manifest);
    const nlohmann::json tj = ReadJsonFile(a.floor_truth);
    DistanceTruth truth;
    try {
      const auto& p = tj.at("plane");
      truth.plane = Eigen::Vector4d(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>(),
                                    p.at(3).get<double>());
      if (tj.contains("origin")) truth.origin = Vec3(tj.at("origin"));
      if (tj.contains("up")) truth.up = Vec3(tj.at("up"));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParseError, a.floor_truth + ": " + e.what());
    }
    const std::vector<double> edges = a.bin_edges.empty() ? DefaultRangeBinEdges() : ParseEdges(a.bin_edges);
    report = ComputeDistanceErrorReport(CloudPositions(LoadPly(a.cloud)), truth, edges);
  }
  if (!a.calibration.empty()) {
    UseInput(a.calibration, &ctx.manifest);
    field = ComputeResidualField(LoadResult(a.calibration).per_point_residuals, a.sensor_width,
                                 a.sensor_height, a.grid_w, a.grid_h);
  }
  MakeDir(dir);
  if (report) {
    written.insert(written.end(), {dir / "distance_report.csv", dir / "distance_report.json"});
    SaveDistanceReport(*report, written[written.size() - 2], written.back());
  }
  if (field) {
    written.insert(written.end(), {dir / "residual_field.csv", dir / "residual_field.json"});
    SaveResidualField(*field, written[written.size() - 2], written.back());
  }
  for (const auto& p : written) ctx.manifest.AddOutput(p, dir);
  ctx.Finish(dir / "manifest.json");
  if (report) {
    ctx.out << "systematic_error_pct=" << Fmt(report->systematic_error_pct) << "\n";
    ctx.out << "random_error_pct=" << Fmt(report->random_error_pct) << "\n";
    ctx.out << "evaluated_points=" << report->evaluated_points << "\n";
  }
  if (field) ctx.out << "overall_rms_px=" << Fmt(field->overall_rms_px) << "\n";
  return kExitOk;
}

}  // namespace

int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Omnidirectional stereo calibration and ranging", "omnistereo"};
  app.require_subcommand(1);
  app.set_version_flag("--version", OMNI_VERSION);

  SimulateArgs sim;
  auto* s_sim = app.add_subcommand("simulate", "Generate a synthetic corpus and optional floor images");
  s_sim->add_option("--scenario", sim.scenario, "Scenario JSON")->required();
  s_sim->add_option("--out", sim.out, "Output directory")->required();
  s_sim->add_flag("--no-images", sim.no_images, "Skip floor image rendering");

  CalibrateArgs cal;
  auto* s_cal = app.add_subcommand("calibrate", "Calibrate one view");
  s_cal->add_option("--corpus", cal.corpus, "Observation corpus JSON")->required();
  s_cal->add_option("--view", cal.view, "upper or lower")->required()->check(CLI::IsMember({"upper", "lower"}));
  s_cal->add_option("--config", cal.config, "Calibration config JSON")->required();
  s_cal->add_flag("--truncated", cal.truncated, "Ten-parameter baseline model");
  s_cal->add_option("--out", cal.out, "Result JSON")->required();
  s_cal->add_option("--residuals", cal.residuals, "Per-point residual CSV");

  RectifyArgs rec;
  auto* s_rec = app.add_subcommand("rectify", "Estimate the rig and build cylinder remaps");
  s_rec->add_option("--upper-calib", rec.upper_calib, "Upper calibration JSON")->required();
  s_rec->add_option("--lower-calib", rec.lower_calib, "Lower calibration JSON")->required();
  s_rec->add_option("--cylinder", rec.cylinder, "Scenario or floor options JSON (fcyl, fov_upper, fov_lower)");
  s_rec->add_option("--upper-image", rec.upper_image, "Upper sensor image to expand");
  s_rec->add_option("--lower-image", rec.lower_image, "Lower sensor image to expand");
  s_rec->add_option("--sensor-width", rec.sensor_width, "Sensor width without images");
  s_rec->add_option("--sensor-height", rec.sensor_height, "Sensor height without images");
  s_rec->add_option("--out", rec.out, "Output directory")->required();

  DisparityArgs dis;
  auto* s_dis = app.add_subcommand("disparity", "Block matching on a cylinder pair");
  s_dis->add_option("--upper", dis.upper, "Upper cylinder image")->required();
  s_dis->add_option("--lower", dis.lower, "Lower cylinder image")->required();
  s_dis->add_option("--config", dis.config, "Match config JSON");
  s_dis->add_option("--out", dis.out, "Disparity PGM")->required();

  CloudArgs clo;
  auto* s_clo = app.add_subcommand("cloud", "Triangulate a disparity map");
  s_clo->add_option("--disparity", clo.disparity, "Disparity PGM")->required();
  s_clo->add_option("--geometry", clo.geometry, "geometry.json from rectify")->required();
  s_clo->add_option("--color", clo.color, "Upper cylinder image for point colors");
  s_clo->add_flag("--binary", clo.binary, "Binary little-endian PLY");
  s_clo->add_option("--out", clo.out, "PLY path")->required();

  EvaluateArgs ev;
  auto* s_ev = app.add_subcommand("evaluate", "Ranging and residual statistics");
  s_ev->add_option("--cloud", ev.cloud, "PLY cloud");
  s_ev->add_option("--floor-truth", ev.floor_truth, "Floor truth JSON from simulate");
  s_ev->add_option("--bin-edges", ev.bin_edges, "Comma-separated range bin edges, m");
  s_ev->add_option("--calibration", ev.calibration, "Calibration result JSON");
  s_ev->add_option("--grid-w", ev.grid_w, "Residual bins across");
  s_ev->add_option("--grid-h", ev.grid_h, "Residual bins down");
  s_ev->add_option("--sensor-width", ev.sensor_width, "Sensor width");
  s_ev->add_option("--sensor-height", ev.sensor_height, "Sensor height");
  s_ev->add_option("--out", ev.out, "Output directory")->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  const std::vector<std::pair<CLI::App*, std::function<int(Context&)>>> table = {
      {s_sim, [&](Context& c) { return Simulate(sim, c); }},
      {s_cal, [&](Context& c) { return Calibrate(cal, c); }},
      {s_rec, [&](Context& c) { return Rectify(rec, c); }},
      {s_dis, [&](Context& c) { return Disparity(dis, c); }},
      {s_clo, [&](Context& c) { return Cloud(clo, c); }},
      {s_ev, [&](Context& c) { return Evaluate(ev, c); }},
  };
  for (const auto& [sub, fn] : table) {
    if (!sub->parsed()) continue;
    Context ctx{out, {}};
    ctx.manifest.version = OMNI_VERSION;
    ctx.manifest.subcommand = sub->get_name();
    ctx.manifest.flags = FlagsOf(sub);
    try {
      return fn(ctx);
    } catch (const Error& e) {
      err << "error: " << e.what() << "\n";
      return ExitCodeFor(e.code());
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return kExitCompute;
    }
  }
  return kExitInput;
}

}  // namespace omni
