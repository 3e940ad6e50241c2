#pragma once

// Binary PGM/PPM images with 8- or 16-bit samples.  Pixels that carry no
// data hold the sentinel value maxval - 1, which is also written to the file
// header as a "# sentinel" comment.

#include <cstdint>
#include <filesystem>
#include <vector>

namespace omni {

struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 (PGM) or 3 (PPM)
  int maxval = 65535;
  std::vector<uint16_t> data;  // row-major, interleaved channels

  Image() = default;
  Image(int w, int h, int c = 1, int max = 65535, uint16_t fill = 0)
      : width(w), height(h), channels(c), maxval(max),
        data(static_cast<size_t>(w) * h * c, fill) {}

  uint16_t Sentinel() const { return static_cast<uint16_t>(maxval - 1); }
  uint16_t& at(int x, int y, int c = 0) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint16_t at(int x, int y, int c = 0) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  bool IsSentinel(int x, int y) const { return at(x, y, 0) == Sentinel(); }
  bool SameSize(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
  bool operator==(const Image&) const = default;
};

// Throws kIoError / kParseError.
Image ReadPnm(const std::filesystem::path& path);
void WritePnm(const Image& image, const std::filesystem::path& path);

// Bilinear sample of channel c at continuous pixel coordinates (pixel
// centres on integers).  Returns false outside the image or when any
// contributing pixel is a sentinel.
bool SampleBilinear(const Image& image, double x, double y, int c, double* value);

// Rounds and clamps to [0, maxval - 2], keeping the sentinel free.
uint16_t ToPixelValue(double v, int maxval);

}  // namespace omni
