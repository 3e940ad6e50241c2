#pragma once

// Calibration board data model and the observation corpus file format.
// Circle centres are ingested from detector output; nothing here looks at
// images.

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "omnistereo/model.h"

namespace omni {

struct BoardSpec {
  int rows = 7;
  int cols = 10;
  double pitch = 0.03;  // meters, centre to centre

  void Validate() const;
  int NumPoints() const { return rows * cols; }
};

enum class View { kUpper, kLower };

const char* ViewName(View v);
View ParseView(const std::string& name);

struct GridIndex {
  int row = 0;
  int col = 0;
  auto operator<=>(const GridIndex&) const = default;
};

struct ObservedPoint {
  GridIndex grid;
  PixelPoint pixel;
};

struct BoardObservation {
  std::string image_id;
  View view = View::kUpper;
  std::vector<ObservedPoint> points;
};

struct ObservationCorpus {
  BoardSpec board;
  int sensor_width = 4912;
  int sensor_height = 3684;
  std::vector<BoardObservation> observations;

  // Throws kInvariantViolation naming the first failed invariant.
  void Validate() const;
  // Sorts observations by (image_id, view).  Point order is kept.
  void Canonicalize();
  size_t NumPoints() const;
};

// rows x cols points (col * pitch, row * pitch, 0), row-major.
std::vector<Eigen::Vector3d> BoardModelPoints(const BoardSpec& spec);

inline Eigen::Vector3d BoardPoint(const BoardSpec& spec, GridIndex g) {
  return {g.col * spec.pitch, g.row * spec.pitch, 0.0};
}

nlohmann::json CorpusToJson(const ObservationCorpus& corpus);
ObservationCorpus CorpusFromJson(const nlohmann::json& j);

// Canonical text: observations sorted, 1-space indentation.
std::string SerializeCorpus(const ObservationCorpus& corpus);
ObservationCorpus LoadCorpus(const std::filesystem::path& path);
void SaveCorpus(const ObservationCorpus& corpus,
                const std::filesystem::path& path);

struct ViewSplit {
  ObservationCorpus upper;
  ObservationCorpus lower;
  std::vector<std::string> shared;  // image ids seen in both views, sorted
};

ViewSplit SplitViews(const ObservationCorpus& corpus);

}  // namespace omni
