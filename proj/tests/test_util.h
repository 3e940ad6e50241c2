#pragma once

#include <filesystem>
#include <string>

#include <Eigen/Geometry>

#include "omnistereo/model_io.h"

namespace omni::testing {

inline std::filesystem::path DataPath(const std::string& name) {
  return std::filesystem::path(OMNI_DATA_DIR) / name;
}

inline ViewModelParams Table1() { return LoadParams(DataPath("table1_upper.json")); }
inline ViewModelParams Table2() { return LoadParams(DataPath("table2_lower.json")); }

inline double AngleBetween(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

}  // namespace omni::testing
