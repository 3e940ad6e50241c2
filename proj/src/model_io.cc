#include "omnistereo/model_io.h"

#include <fstream>
#include <sstream>

namespace omni {

nlohmann::json ParamsToJson(const ViewModelParams& params) {
  nlohmann::json j = nlohmann::json::object();
  const auto v = params.Flatten();
  for (int i = 0; i < kNumModelParams; ++i) j[std::string(kParamNames[i])] = v[i];
  return j;
}

ViewModelParams ParamsFromJson(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw Error(ErrorCode::kParseError, "model parameters must be an object");
  }
  std::array<double, kNumModelParams> v{};
  for (int i = 0; i < kNumModelParams; ++i) {
    const std::string key(kParamNames[i]);
    auto it = j.find(key);
    if (it == j.end() || !it->is_number()) {
      throw Error(ErrorCode::kParseError,
                  "model parameter '" + key + "' missing or not a number");
    }
    v[i] = it->get<double>();
  }
  ViewModelParams p = ViewModelParams::Unflatten(v);
  p.Validate();
  return p;
}

nlohmann::json ReadJsonFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    std::ostringstream os;
    os << path.string() << ": byte " << e.byte << ": " << e.what();
    throw Error(ErrorCode::kParseError, os.str());
  }
}

void WriteTextFile(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIoError, "write failed: " + path.string());
}

ViewModelParams LoadParams(const std::filesystem::path& path) {
  return ParamsFromJson(ReadJsonFile(path));
}

void SaveParams(const ViewModelParams& params,
                const std::filesystem::path& path) {
  WriteTextFile(path, ParamsToJson(params).dump(2) + "\n");
}

nlohmann::json PoseToJson(const Pose& pose) {
  const Eigen::Vector3d aa = pose.AngleAxis();
  return {{"angle_axis", {aa.x(), aa.y(), aa.z()}},
          {"translation",
           {pose.translation.x(), pose.translation.y(), pose.translation.z()}}};
}

Pose PoseFromJson(const nlohmann::json& j) {
  try {
    const auto aa = j.at("angle_axis").get<std::array<double, 3>>();
    const auto t = j.at("translation").get<std::array<double, 3>>();
    return Pose::FromAngleAxis(Eigen::Vector3d(aa[0], aa[1], aa[2]),
                               Eigen::Vector3d(t[0], t[1], t[2]));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("pose: ") + e.what());
  }
}

}  // namespace omni
