#include "omnistereo/image.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "omnistereo/error.h"

namespace omni {

namespace {

// Next header token, skipping whitespace and comments.  A "# sentinel N"
// comment is reported through `sentinel`.
std::string HeaderToken(std::istream& in, long* sentinel) {
  std::string tok;
  while (true) {
    const int ch = in.get();
    if (ch == EOF) break;
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
      std::istringstream ls(line);
      std::string key;
      long value;
      if (ls >> key >> value && key == "sentinel") *sentinel = value;
      if (!tok.empty()) break;
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

int ParseHeaderInt(std::istream& in, long* sentinel, const std::string& what,
                   const std::filesystem::path& path) {
  const std::string tok = HeaderToken(in, sentinel);
  try {
    size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used == tok.size() && v > 0) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::kParseError, path.string() + ": bad " + what + " '" + tok + "'");
}

}  // namespace

Image ReadPnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  long sentinel = -1;
  const std::string magic = HeaderToken(in, &sentinel);
  int channels;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw Error(ErrorCode::kParseError,
                path.string() + ": not a binary PGM/PPM (magic '" + magic + "')");
  }
  const int w = ParseHeaderInt(in, &sentinel, "width", path);
  const int h = ParseHeaderInt(in, &sentinel, "height", path);
  const int maxval = ParseHeaderInt(in, &sentinel, "maxval", path);
  if (maxval > 65535 || maxval < 2) {
    throw Error(ErrorCode::kParseError, path.string() + ": maxval out of range");
  }
  Image img(w, h, channels, maxval);
  const size_t n = img.data.size();
  if (maxval < 256) {
    std::vector<unsigned char> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n) {
      throw Error(ErrorCode::kParseError, path.string() + ": truncated pixel data");
    }
    std::copy(buf.begin(), buf.end(), img.data.begin());
  } else {
    std::vector<unsigned char> buf(2 * n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<size_t>(in.gcount()) != buf.size()) {
      throw Error(ErrorCode::kParseError, path.string() + ": truncated pixel data");
    }
    for (size_t i = 0; i < n; ++i) img.data[i] = static_cast<uint16_t>(buf[2 * i] << 8 | buf[2 * i + 1]);
  }
  if (sentinel >= 0 && sentinel != img.Sentinel()) {
    throw Error(ErrorCode::kParseError,
                path.string() + ": sentinel comment disagrees with maxval - 1");
  }
  return img;
}

void WritePnm(const Image& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) {
    throw Error(ErrorCode::kInvariantViolation, "images have 1 or 3 channels");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << (img.channels == 1 ? "P5" : "P6") << "\n# sentinel " << img.Sentinel() << "\n"
      << img.width << ' ' << img.height << "\n" << img.maxval << "\n";
  if (img.maxval < 256) {
    std::vector<unsigned char> buf(img.data.begin(), img.data.end());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  } else {
    std::vector<unsigned char> buf(2 * img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i) {
      buf[2 * i] = static_cast<unsigned char>(img.data[i] >> 8);
      buf[2 * i + 1] = static_cast<unsigned char>(img.data[i] & 0xff);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw Error(ErrorCode::kIoError, "short write to " + path.string());
}

bool SampleBilinear(const Image& img, double x, double y, int c, double* value) {
  if (!(x >= 0.0 && y >= 0.0 && x <= img.width - 1.0 && y <= img.height - 1.0)) return false;
  const int x0 = std::min(static_cast<int>(x), img.width - 2 < 0 ? 0 : img.width - 2);
  const int y0 = std::min(static_cast<int>(y), img.height - 2 < 0 ? 0 : img.height - 2);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - x0, fy = y - y0;
  const uint16_t s = img.Sentinel();
  const uint16_t a = img.at(x0, y0, c), b = img.at(x1, y0, c);
  const uint16_t d = img.at(x0, y1, c), e = img.at(x1, y1, c);
  if (a == s || b == s || d == s || e == s) return false;
  *value = (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * d + fx * e);
  return true;
}

uint16_t ToPixelValue(double v, int maxval) {
  const double r = std::round(v);
  return static_cast<uint16_t>(std::clamp(r, 0.0, static_cast<double>(maxval - 2)));
}

}  // namespace omni
