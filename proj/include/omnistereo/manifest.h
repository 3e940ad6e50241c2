#pragma once

// Run manifests: what a pipeline step read and wrote, with SHA-256 digests,
// so later steps can detect stale or edited inputs.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace omni {

std::string Sha256Hex(const std::string& bytes);
// Throws kIoError when the file cannot be read.
std::string Sha256File(const std::filesystem::path& path);

struct FileDigest {
  std::string path;  // as given on the command line, or relative to the manifest for outputs
  std::string sha256;
};

struct RunManifest {
  std::string tool = "omnistereo";
  std::string version;
  std::string subcommand;
  nlohmann::json flags = nlohmann::json::object();
  std::vector<FileDigest> inputs;
  std::vector<FileDigest> outputs;
  double wall_time_s = 0.0;

  void AddInput(const std::filesystem::path& path);
  // Outputs are recorded relative to the manifest's directory.
  void AddOutput(const std::filesystem::path& path, const std::filesystem::path& manifest_dir);
};

nlohmann::json ManifestToJson(const RunManifest& m);
RunManifest ManifestFromJson(const nlohmann::json& j);
void SaveManifest(const RunManifest& m, const std::filesystem::path& path);

// Manifest files sitting next to an artifact: "manifest.json" and
// "*.manifest.json" in its directory.  When any of them lists the file as an
// output, its current digest must match one of those listings; otherwise
// throws kDigestMismatch.  Files no manifest knows about are accepted.
void VerifyAgainstManifests(const std::filesystem::path& artifact);

}  // namespace omni
