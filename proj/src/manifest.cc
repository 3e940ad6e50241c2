#include "omnistereo/manifest.h"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "omnistereo/error.h"
#include "omnistereo/model_io.h"

namespace omni {

namespace {

std::string Hex(const unsigned char* d, unsigned n) {
  std::string out;
  char b[3];
  for (unsigned i = 0; i < n; ++i) {
    std::snprintf(b, sizeof b, "%02x", d[i]);
    out += b;
  }
  return out;
}

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
      throw Error(ErrorCode::kInvariantViolation, "SHA-256 unavailable");
    }
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;
  void Update(const void* p, size_t n) { EVP_DigestUpdate(ctx_, p, n); }
  std::string Final() {
    unsigned char d[EVP_MAX_MD_SIZE];
    unsigned n = 0;
    EVP_DigestFinal_ex(ctx_, d, &n);
    return Hex(d, n);
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

std::string Sha256Hex(const std::string& bytes) {
  Sha256 h;
  h.Update(bytes.data(), bytes.size());
  return h.Final();
}

std::string Sha256File(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  Sha256 h;
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.Update(buf.data(), static_cast<size_t>(in.gcount()));
  }
  return h.Final();
}

void RunManifest::AddInput(const std::filesystem::path& path) {
  inputs.push_back({path.string(), Sha256File(path)});
}

void RunManifest::AddOutput(const std::filesystem::path& path, const std::filesystem::path& manifest_dir) {
  outputs.push_back({std::filesystem::relative(path, manifest_dir).generic_string(), Sha256File(path)});
}

nlohmann::json ManifestToJson(const RunManifest& m) {
  auto list = [](const std::vector<FileDigest>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& f : v) a.push_back({{"path", f.path}, {"sha256", f.sha256}});
    return a;
  };
  return {{"tool", m.tool},
          {"version", m.version},
          {"subcommand", m.subcommand},
          {"flags", m.flags},
          {"inputs", list(m.inputs)},
          {"outputs", list(m.outputs)},
          {"wall_time_s", m.wall_time_s}};
}

RunManifest ManifestFromJson(const nlohmann::json& j) {
  RunManifest m;
  auto list = [](const nlohmann::json& a) {
    std::vector<FileDigest> v;
    for (const auto& f : a) v.push_back({f.at("path").get<std::string>(), f.at("sha256").get<std::string>()});
    return v;
  };
  try {
    m.tool = j.at("tool").get<std::string>();
    m.version = j.at("version").get<std::string>();
    m.subcommand = j.at("subcommand").get<std::string>();
    m.flags = j.at("flags");
    m.inputs = list(j.at("inputs"));
    m.outputs = list(j.at("outputs"));
    m.wall_time_s = j.at("wall_time_s").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("manifest: ") + e.what());
  }
  return m;
}

void SaveManifest(const RunManifest& m, const std::filesystem::path& path) {
  WriteTextFile(path, ManifestToJson(m).dump(2) + "\n");
}

void VerifyAgainstManifests(const std::filesystem::path& artifact) {
  namespace fs = std::filesystem;
  const fs::path abs = fs::absolute(artifact).lexically_normal();
  const fs::path dir = abs.parent_path();
  std::error_code ec;
  std::vector<fs::path> manifests;
  for (const auto& e : fs::directory_iterator(dir, ec)) {
    const std::string name = e.path().filename().string();
    if (name == "manifest.json" || (name.size() > 14 && name.ends_with(".manifest.json"))) {
      manifests.push_back(e.path());
    }
  }
  std::sort(manifests.begin(), manifests.end());
  std::vector<std::string> listed;
  for (const auto& mp : manifests) {
    RunManifest m;
    try {
      m = ManifestFromJson(ReadJsonFile(mp));
    } catch (const Error&) {
      continue;  // foreign JSON that happens to share the name
    }
    for (const auto& f : m.outputs) {
      if ((dir / f.path).lexically_normal() == abs) listed.push_back(f.sha256);
    }
  }
  if (listed.empty()) return;
  const std::string now = Sha256File(abs);
  if (std::find(listed.begin(), listed.end(), now) == listed.end()) {
    throw Error(ErrorCode::kDigestMismatch,
                artifact.string() + " changed since its manifest was written (stale pipeline)");
  }
}

}  // namespace omni
