#include "omnistereo/board.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "omnistereo/model_io.h"

namespace omni {

namespace {

[[noreturn]] void Violation(const std::string& what) {
  throw Error(ErrorCode::kInvariantViolation, what);
}

}  // namespace

void BoardSpec::Validate() const {
  if (rows < 2 || cols < 2) Violation("board needs rows >= 2 and cols >= 2");
  if (!(pitch > 0.0) || !std::isfinite(pitch)) Violation("board pitch must be > 0");
}

const char* ViewName(View v) { return v == View::kUpper ? "upper" : "lower"; }

View ParseView(const std::string& name) {
  if (name == "upper") return View::kUpper;
  if (name == "lower") return View::kLower;
  throw Error(ErrorCode::kParseError, "unknown view '" + name + "'");
}

void ObservationCorpus::Validate() const {
  board.Validate();
  if (sensor_width <= 0 || sensor_height <= 0) Violation("sensor size must be positive");
  if (observations.empty()) Violation("corpus has no observations");
  std::set<std::pair<std::string, View>> seen;
  for (const BoardObservation& obs : observations) {
    const std::string tag = obs.image_id + "/" + ViewName(obs.view);
    if (!seen.emplace(obs.image_id, obs.view).second) {
      Violation("duplicate (image_id, view) " + tag);
    }
    if (obs.points.size() < 4) Violation(tag + ": fewer than 4 points");
    std::set<GridIndex> grid;
    for (const ObservedPoint& p : obs.points) {
      if (p.grid.row < 0 || p.grid.row >= board.rows || p.grid.col < 0 ||
          p.grid.col >= board.cols) {
        Violation(tag + ": grid index out of board bounds");
      }
      if (!grid.insert(p.grid).second) Violation(tag + ": duplicate grid index");
      if (!std::isfinite(p.pixel.u) || !std::isfinite(p.pixel.v) ||
          p.pixel.u < 0.0 || p.pixel.v < 0.0 || p.pixel.u >= sensor_width ||
          p.pixel.v >= sensor_height) {
        Violation(tag + ": pixel outside the sensor rectangle");
      }
    }
  }
}

void ObservationCorpus::Canonicalize() {
  std::stable_sort(observations.begin(), observations.end(),
                   [](const BoardObservation& a, const BoardObservation& b) {
                     return std::tie(a.image_id, a.view) < std::tie(b.image_id, b.view);
                   });
}

size_t ObservationCorpus::NumPoints() const {
  size_t n = 0;
  for (const auto& obs : observations) n += obs.points.size();
  return n;
}

std::vector<Eigen::Vector3d> BoardModelPoints(const BoardSpec& spec) {
  spec.Validate();
  std::vector<Eigen::Vector3d> pts;
  pts.reserve(spec.NumPoints());
  for (int r = 0; r < spec.rows; ++r) {
    for (int c = 0; c < spec.cols; ++c) pts.push_back(BoardPoint(spec, {r, c}));
  }
  return pts;
}

nlohmann::json CorpusToJson(const ObservationCorpus& corpus) {
  nlohmann::json obs = nlohmann::json::array();
  for (const BoardObservation& o : corpus.observations) {
    nlohmann::json pts = nlohmann::json::array();
    for (const ObservedPoint& p : o.points) {
      pts.push_back({p.grid.row, p.grid.col, p.pixel.u, p.pixel.v});
    }
    obs.push_back({{"image_id", o.image_id},
                   {"view", ViewName(o.view)},
                   {"points", std::move(pts)}});
  }
  return {{"board",
           {{"rows", corpus.board.rows},
            {"cols", corpus.board.cols},
            {"pitch", corpus.board.pitch}}},
          {"sensor",
           {{"width", corpus.sensor_width}, {"height", corpus.sensor_height}}},
          {"observations", std::move(obs)}};
}

ObservationCorpus CorpusFromJson(const nlohmann::json& j) {
  ObservationCorpus c;
  std::string where = "board";
  try {
    const auto& b = j.at("board");
    c.board.rows = b.at("rows").get<int>();
    c.board.cols = b.at("cols").get<int>();
    c.board.pitch = b.at("pitch").get<double>();
    where = "sensor";
    c.sensor_width = j.at("sensor").at("width").get<int>();
    c.sensor_height = j.at("sensor").at("height").get<int>();
    where = "observations";
    const auto& obs = j.at("observations");
    for (size_t i = 0; i < obs.size(); ++i) {
      where = "observations[" + std::to_string(i) + "]";
      BoardObservation o;
      o.image_id = obs[i].at("image_id").get<std::string>();
      o.view = ParseView(obs[i].at("view").get<std::string>());
      const auto& pts = obs[i].at("points");
      o.points.reserve(pts.size());
      for (size_t k = 0; k < pts.size(); ++k) {
        where = "observations[" + std::to_string(i) + "].points[" +
                std::to_string(k) + "]";
        const auto& p = pts[k];
        if (!p.is_array() || p.size() != 4) {
          throw Error(ErrorCode::kParseError, where + ": expected [row, col, u, v]");
        }
        o.points.push_back({{p[0].get<int>(), p[1].get<int>()},
                            {p[2].get<double>(), p[3].get<double>()}});
      }
      c.observations.push_back(std::move(o));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, where + ": " + e.what());
  }
  c.Validate();
  return c;
}

std::string SerializeCorpus(const ObservationCorpus& corpus) {
  ObservationCorpus sorted = corpus;
  sorted.Canonicalize();
  return CorpusToJson(sorted).dump(1) + "\n";
}

ObservationCorpus LoadCorpus(const std::filesystem::path& path) {
  const nlohmann::json j = ReadJsonFile(path);
  try {
    return CorpusFromJson(j);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void SaveCorpus(const ObservationCorpus& corpus,
                const std::filesystem::path& path) {
  WriteTextFile(path, SerializeCorpus(corpus));
}

ViewSplit SplitViews(const ObservationCorpus& corpus) {
  ViewSplit split;
  for (ObservationCorpus* part : {&split.upper, &split.lower}) {
    part->board = corpus.board;
    part->sensor_width = corpus.sensor_width;
    part->sensor_height = corpus.sensor_height;
  }
  std::set<std::string> upper_ids, lower_ids;
  for (const BoardObservation& o : corpus.observations) {
    if (o.view == View::kUpper) {
      split.upper.observations.push_back(o);
      upper_ids.insert(o.image_id);
    } else {
      split.lower.observations.push_back(o);
      lower_ids.insert(o.image_id);
    }
  }
  std::set_intersection(upper_ids.begin(), upper_ids.end(), lower_ids.begin(),
                        lower_ids.end(), std::back_inserter(split.shared));
  return split;
}

}  // namespace omni
