#include "omnistereo/stereo.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "omnistereo/error.h"
#include "omnistereo/model_io.h"
#include "omnistereo/parallel.h"

namespace omni {

void MatchConfig::Validate() const {
  if (block_w < 3 || block_h < 3 || block_w % 2 == 0 || block_h % 2 == 0) {
    throw Error(ErrorCode::kInvariantViolation, "block dimensions must be odd and >= 3");
  }
  if (min_disp < 0 || min_disp >= max_disp) {
    throw Error(ErrorCode::kInvariantViolation, "need 0 <= min_disp < max_disp");
  }
  if (!(uniqueness_ratio >= 1.0) || !(texture_threshold >= 0.0)) {
    throw Error(ErrorCode::kInvariantViolation, "uniqueness_ratio >= 1 and texture_threshold >= 0");
  }
}

size_t DisparityImage::CountValid() const {
  return static_cast<size_t>(std::count_if(values.begin(), values.end(),
                                           [](float v) { return !std::isnan(v); }));
}

namespace {

// Single-channel working copy; color images are averaged.
struct Gray {
  int width = 0, height = 0;
  std::vector<int32_t> v;
  std::vector<uint8_t> bad;  // sentinel pixels
  int32_t at(int x, int y) const { return v[static_cast<size_t>(y) * width + x]; }
  uint8_t is_bad(int x, int y) const { return bad[static_cast<size_t>(y) * width + x]; }
};

Gray ToGray(const Image& img) {
  Gray g;
  g.width = img.width;
  g.height = img.height;
  g.v.resize(static_cast<size_t>(img.width) * img.height);
  g.bad.resize(g.v.size());
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      int32_t sum = 0;
      for (int c = 0; c < img.channels; ++c) sum += img.at(x, y, c);
      const size_t i = static_cast<size_t>(y) * img.width + x;
      g.v[i] = sum / img.channels;
      g.bad[i] = img.IsSentinel(x, y) ? 1 : 0;
    }
  }
  return g;
}

Gray FlipRows(const Gray& g) {
  Gray f = g;
  for (int y = 0; y < g.height; ++y) {
    std::copy_n(g.v.begin() + static_cast<ptrdiff_t>(y) * g.width, g.width,
                f.v.begin() + static_cast<ptrdiff_t>(g.height - 1 - y) * g.width);
    std::copy_n(g.bad.begin() + static_cast<ptrdiff_t>(y) * g.width, g.width,
                f.bad.begin() + static_cast<ptrdiff_t>(g.height - 1 - y) * g.width);
  }
  return f;
}

// Summed-area tables for block mean/variance and sentinel counts.
struct Integral {
  int w = 0;
  std::vector<int64_t> s, s2, n;
  int64_t Box(const std::vector<int64_t>& t, int x0, int y0, int x1, int y1) const {
    auto at = [&](int x, int y) { return t[static_cast<size_t>(y) * (w + 1) + x]; };
    return at(x1 + 1, y1 + 1) - at(x0, y1 + 1) - at(x1 + 1, y0) + at(x0, y0);
  }
};

Integral MakeIntegral(const Gray& g) {
  Integral in;
  in.w = g.width;
  const size_t n = static_cast<size_t>(g.width + 1) * (g.height + 1);
  in.s.assign(n, 0);
  in.s2.assign(n, 0);
  in.n.assign(n, 0);
  for (int y = 0; y < g.height; ++y) {
    int64_t rs = 0, rs2 = 0, rn = 0;
    for (int x = 0; x < g.width; ++x) {
      const int64_t v = g.at(x, y);
      rs += v;
      rs2 += v * v;
      rn += g.is_bad(x, y);
      const size_t i = static_cast<size_t>(y + 1) * (g.width + 1) + x + 1;
      const size_t up = static_cast<size_t>(y) * (g.width + 1) + x + 1;
      in.s[i] = in.s[up] + rs;
      in.s2[i] = in.s2[up] + rs2;
      in.n[i] = in.n[up] + rn;
    }
  }
  return in;
}

DisparityImage MatchGray(const Gray& up, const Gray& lo, const MatchConfig& cfg) {
  const int w = up.width, h = up.height;
  const int hw = cfg.block_w / 2, hh = cfg.block_h / 2;
  const int nd = cfg.max_disp - cfg.min_disp + 1;
  const double block_n = static_cast<double>(cfg.block_w) * cfg.block_h;
  DisparityImage out;
  out.width = w;
  out.height = h;
  out.values.assign(static_cast<size_t>(w) * h, kInvalidDisparity);
  out.config = cfg;
  if (w < cfg.block_w || h < cfg.block_h) return out;
  const Integral iu = MakeIntegral(up);
  constexpr int64_t kBad = std::numeric_limits<int64_t>::max();

  // Rows are independent; each chunk keeps its own running column sums,
  // all in integers, so the result does not depend on the chunking.
  ParallelFor(static_cast<size_t>(h - 2 * hh), [&](size_t begin, size_t end) {
    std::vector<int64_t> col(static_cast<size_t>(nd) * w, 0);
    std::vector<int32_t> col_bad(static_cast<size_t>(nd) * w, 0);
    std::vector<int64_t> cost(nd);
    auto add_row = [&](int yu, int sign) {
      for (int k = 0; k < nd; ++k) {
        const int yl = yu + cfg.min_disp + k;
        if (yl < 0 || yl >= h) continue;
        int64_t* c = &col[static_cast<size_t>(k) * w];
        int32_t* b = &col_bad[static_cast<size_t>(k) * w];
        for (int x = 0; x < w; ++x) {
          c[x] += sign * std::abs(up.at(x, yu) - lo.at(x, yl));
          b[x] += sign * lo.is_bad(x, yl);
        }
      }
    };
    const int v_first = static_cast<int>(begin) + hh;
    for (int dy = -hh; dy <= hh; ++dy) add_row(v_first + dy, +1);
    std::vector<int64_t> block(static_cast<size_t>(nd) * w, kBad);
    for (int v = v_first; v < static_cast<int>(end) + hh; ++v) {
      if (v > v_first) {
        add_row(v - hh - 1, -1);
        add_row(v + hh, +1);
      }
      // Horizontal box sums per disparity.
      for (int k = 0; k < nd; ++k) {
        const int d = cfg.min_disp + k;
        const bool rows_ok = v + d + hh < h;
        const int64_t* c = &col[static_cast<size_t>(k) * w];
        const int32_t* b = &col_bad[static_cast<size_t>(k) * w];
        int64_t* out_k = &block[static_cast<size_t>(k) * w];
        int64_t s = 0;
        int32_t nb = 0;
        for (int x = 0; x < cfg.block_w; ++x) {
          s += c[x];
          nb += b[x];
        }
        for (int x = hw; x < w - hw; ++x) {
          if (x > hw) {
            s += c[x + hw] - c[x - hw - 1];
            nb += b[x + hw] - b[x - hw - 1];
          }
          out_k[x] = (rows_ok && nb == 0) ? s : kBad;
        }
      }
      for (int x = hw; x < w - hw; ++x) {
        if (iu.Box(iu.n, x - hw, v - hh, x + hw, v + hh) != 0) continue;
        const double sum = static_cast<double>(iu.Box(iu.s, x - hw, v - hh, x + hw, v + hh));
        const double sum2 = static_cast<double>(iu.Box(iu.s2, x - hw, v - hh, x + hw, v + hh));
        const double var = (sum2 - sum * sum / block_n) / block_n;
        if (var < cfg.texture_threshold) continue;
        // Any candidate block running off the image or onto sentinel pixels
        // could hide the true match, so the pixel is dropped.
        int best = 0;
        bool overrun = false;
        for (int k = 0; k < nd && !overrun; ++k) {
          cost[k] = block[static_cast<size_t>(k) * w + x];
          overrun = cost[k] == kBad;
          if (cost[k] < cost[best]) best = k;
        }
        if (overrun || best == 0 || best == nd - 1) continue;
        int64_t second = kBad;
        for (int k = 0; k < nd; ++k) {
          if (std::abs(k - best) > 1 && cost[k] < second) second = cost[k];
        }
        if (second != kBad &&
            static_cast<double>(cost[best]) * cfg.uniqueness_ratio >= static_cast<double>(second)) {
          continue;
        }
        const double cm = static_cast<double>(cost[best - 1]);
        const double c0 = static_cast<double>(cost[best]);
        const double cp = static_cast<double>(cost[best + 1]);
        const double denom = cm - 2.0 * c0 + cp;
        const double delta = denom > 0.0 ? (cm - cp) / (2.0 * denom) : 0.0;
        out.values[static_cast<size_t>(v) * w + x] =
            static_cast<float>(cfg.min_disp + best + std::clamp(delta, -0.5, 0.5));
      }
    }
  });
  return out;
}

}  // namespace

DisparityImage BlockMatch(const Image& upper, const Image& lower, const MatchConfig& cfg) {
  cfg.Validate();
  if (upper.width != lower.width || upper.height != lower.height) {
    throw Error(ErrorCode::kDimensionMismatch,
                "upper image is " + std::to_string(upper.width) + "x" + std::to_string(upper.height) +
                    ", lower is " + std::to_string(lower.width) + "x" + std::to_string(lower.height));
  }
  const Gray up = ToGray(upper), lo = ToGray(lower);
  DisparityImage disp = MatchGray(up, lo, cfg);
  if (cfg.left_right_check) {
    // Lower -> upper matching is the same search on row-flipped images.
    const DisparityImage back = MatchGray(FlipRows(lo), FlipRows(up), cfg);
    for (int y = 0; y < disp.height; ++y) {
      for (int x = 0; x < disp.width; ++x) {
        const float d = disp.at(x, y);
        if (std::isnan(d)) continue;
        const int yl = static_cast<int>(std::lround(y + d));
        const int yf = disp.height - 1 - yl;
        const bool ok = yl >= 0 && yl < disp.height && !std::isnan(back.at(x, yf)) &&
                        std::abs(back.at(x, yf) - d) <= cfg.left_right_tolerance;
        if (!ok) disp.at(x, y) = kInvalidDisparity;
      }
    }
  }
  return disp;
}

nlohmann::json MatchConfigToJson(const MatchConfig& c) {
  return {{"block_w", c.block_w},
          {"block_h", c.block_h},
          {"min_disp", c.min_disp},
          {"max_disp", c.max_disp},
          {"uniqueness_ratio", c.uniqueness_ratio},
          {"texture_threshold", c.texture_threshold},
          {"left_right_check", c.left_right_check},
          {"left_right_tolerance", c.left_right_tolerance}};
}

MatchConfig MatchConfigFromJson(const nlohmann::json& j) {
  MatchConfig c;
  try {
    c.block_w = j.value("block_w", c.block_w);
    c.block_h = j.value("block_h", c.block_h);
    c.min_disp = j.value("min_disp", c.min_disp);
    c.max_disp = j.value("max_disp", c.max_disp);
    c.uniqueness_ratio = j.value("uniqueness_ratio", c.uniqueness_ratio);
    c.texture_threshold = j.value("texture_threshold", c.texture_threshold);
    c.left_right_check = j.value("left_right_check", c.left_right_check);
    c.left_right_tolerance = j.value("left_right_tolerance", c.left_right_tolerance);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("match config: ") + e.what());
  }
  c.Validate();
  return c;
}

void SaveDisparity(const DisparityImage& disp, const std::filesystem::path& path) {
  std::string buf = "P5\n" + std::to_string(disp.width) + " " + std::to_string(disp.height) + "\n65535\n";
  buf.reserve(buf.size() + 2 * disp.values.size());
  for (float d : disp.values) {
    uint16_t q = kDisparityInvalid;
    if (!std::isnan(d)) {
      q = static_cast<uint16_t>(std::clamp(std::lround(d / kDisparityScale), 0L, 65534L));
    }
    buf.push_back(static_cast<char>(q >> 8));
    buf.push_back(static_cast<char>(q & 0xff));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error(ErrorCode::kIoError, "short write to " + path.string());
  nlohmann::json side = {{"scale", kDisparityScale},
                         {"invalid", kDisparityInvalid},
                         {"width", disp.width},
                         {"height", disp.height},
                         {"config", MatchConfigToJson(disp.config)}};
  WriteTextFile(path.string() + ".json", side.dump(2) + "\n");
}

DisparityImage LoadDisparity(const std::filesystem::path& path) {
  const Image img = ReadPnm(path);
  if (img.channels != 1 || img.maxval != 65535) {
    throw Error(ErrorCode::kParseError, path.string() + ": disparity must be a 16-bit PGM");
  }
  const nlohmann::json side = ReadJsonFile(path.string() + ".json");
  double scale = kDisparityScale;
  DisparityImage d;
  try {
    scale = side.at("scale").get<double>();
    d.config = MatchConfigFromJson(side.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, path.string() + ".json: " + e.what());
  }
  d.width = img.width;
  d.height = img.height;
  d.values.resize(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i) {
    d.values[i] = img.data[i] == kDisparityInvalid ? kInvalidDisparity
                                                   : static_cast<float>(img.data[i] * scale);
  }
  return d;
}

PointCloud DisparityToCloud(const DisparityImage& disp, const CylinderSpec& spec,
                            const RigGeometry& rig, const Image* color) {
  if (disp.width != spec.width || disp.height != spec.height) {
    throw Error(ErrorCode::kDimensionMismatch, "disparity image does not match the cylinder");
  }
  if (color && (color->width != spec.width || color->height != spec.height)) {
    throw Error(ErrorCode::kDimensionMismatch, "color image does not match the cylinder");
  }
  PointCloud cloud;
  cloud.has_color = color != nullptr;
  const double fb = spec.fcyl * rig.baseline_m;
  for (int y = 0; y < disp.height; ++y) {
    for (int x = 0; x < disp.width; ++x) {
      const float d = disp.at(x, y);
      if (std::isnan(d) || !(d > 0.0f)) continue;
      const double rho = fb / d;
      const double th = spec.Theta(x);
      const double t = spec.Slope(y);
      CloudPoint p;
      p.x = static_cast<float>(rho * std::cos(th));
      p.y = static_cast<float>(-rho * std::sin(th));
      p.z = static_cast<float>(-rho * t);
      if (color) {
        const double k = 255.0 / color->maxval;
        const int c1 = color->channels == 3 ? 1 : 0, c2 = color->channels == 3 ? 2 : 0;
        p.r = static_cast<uint8_t>(std::lround(color->at(x, y, 0) * k));
        p.g = static_cast<uint8_t>(std::lround(color->at(x, y, c1) * k));
        p.b = static_cast<uint8_t>(std::lround(color->at(x, y, c2) * k));
      }
      cloud.points.push_back(p);
    }
  }
  return cloud;
}

void SavePly(const PointCloud& cloud, const std::filesystem::path& path, bool binary) {
  std::ostringstream head;
  head << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
       << "comment frame: common cylinder frame, z up, origin at the upper viewpoint\n"
       << "element vertex " << cloud.points.size() << "\n"
       << "property float x\nproperty float y\nproperty float z\n";
  if (cloud.has_color) head << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  head << "end_header\n";
  std::string buf = head.str();
  char line[128];
  for (const CloudPoint& p : cloud.points) {
    if (binary) {
      for (float f : {p.x, p.y, p.z}) {
        const uint32_t u = std::bit_cast<uint32_t>(f);
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
      }
      if (cloud.has_color) {
        buf.push_back(static_cast<char>(p.r));
        buf.push_back(static_cast<char>(p.g));
        buf.push_back(static_cast<char>(p.b));
      }
    } else {
      int n = std::snprintf(line, sizeof line, "%.9g %.9g %.9g", p.x, p.y, p.z);
      buf.append(line, n);
      if (cloud.has_color) {
        n = std::snprintf(line, sizeof line, " %d %d %d", p.r, p.g, p.b);
        buf.append(line, n);
      }
      buf.push_back('\n');
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error(ErrorCode::kIoError, "short write to " + path.string());
}

PointCloud LoadPly(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "ply") throw Error(ErrorCode::kParseError, path.string() + ": not a PLY file");
  bool binary = false;
  size_t count = 0;
  std::vector<std::string> props;
  while (std::getline(in, line) && line != "end_header") {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian") {
        binary = true;
      } else if (fmt != "ascii") {
        throw Error(ErrorCode::kParseError, path.string() + ": unsupported PLY format " + fmt);
      }
    } else if (key == "element") {
      std::string name;
      ls >> name >> count;
    } else if (key == "property") {
      std::string type, name;
      ls >> type >> name;
      props.push_back(name);
    }
  }
  const bool color = props.size() == 6;
  if (props.size() != 3 && !color) {
    throw Error(ErrorCode::kParseError, path.string() + ": expected x,y,z[,red,green,blue]");
  }
  PointCloud cloud;
  cloud.has_color = color;
  cloud.points.resize(count);
  for (CloudPoint& p : cloud.points) {
    if (binary) {
      unsigned char b[15];
      const std::streamsize n = color ? 15 : 12;
      in.read(reinterpret_cast<char*>(b), n);
      if (in.gcount() != n) throw Error(ErrorCode::kParseError, path.string() + ": truncated");
      float* f[3] = {&p.x, &p.y, &p.z};
      for (int k = 0; k < 3; ++k) {
        const uint32_t u = static_cast<uint32_t>(b[4 * k]) | static_cast<uint32_t>(b[4 * k + 1]) << 8 |
                           static_cast<uint32_t>(b[4 * k + 2]) << 16 |
                           static_cast<uint32_t>(b[4 * k + 3]) << 24;
        *f[k] = std::bit_cast<float>(u);
      }
      if (color) {
        p.r = b[12];
        p.g = b[13];
        p.b = b[14];
      }
    } else {
      int r = 0, g = 0, bl = 0;
      if (!(in >> p.x >> p.y >> p.z)) throw Error(ErrorCode::kParseError, path.string() + ": truncated");
      if (color) {
        in >> r >> g >> bl;
        p.r = static_cast<uint8_t>(r);
        p.g = static_cast<uint8_t>(g);
        p.b = static_cast<uint8_t>(bl);
      }
    }
  }
  return cloud;
}

}  // namespace omni
