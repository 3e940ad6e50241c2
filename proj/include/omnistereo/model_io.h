#pragma once

#include <filesystem>

#include "json.hpp"
#include "omnistereo/model.h"

namespace omni {

// Flat object keyed by kParamNames.  Missing keys are a kParseError.
nlohmann::json ParamsToJson(const ViewModelParams& params);
ViewModelParams ParamsFromJson(const nlohmann::json& j);

ViewModelParams LoadParams(const std::filesystem::path& path);
void SaveParams(const ViewModelParams& params, const std::filesystem::path& path);

// {"angle_axis": [3], "translation": [3]}
nlohmann::json PoseToJson(const Pose& pose);
Pose PoseFromJson(const nlohmann::json& j);

// Shared helpers for the JSON readers.
nlohmann::json ReadJsonFile(const std::filesystem::path& path);
void WriteTextFile(const std::filesystem::path& path, const std::string& text);

}  // namespace omni
