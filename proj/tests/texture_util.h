#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <utility>
#include <vector>

#include "omnistereo/image.h"
#include "omnistereo/synth.h"

namespace omni::testing {

// Smooth random texture: sum of sinusoids, non-periodic over the image.
class Texture {
 public:
  explicit Texture(uint64_t seed, int terms = 20) {
    SynthRng rng(seed);
    for (int i = 0; i < terms; ++i) {
      terms_.push_back({rng.Uniform(0.01, 0.2), rng.Uniform(0.01, 0.2), rng.Uniform(0, 6.3),
                        rng.Uniform(-1, 1) < 0 ? -1.0 : 1.0});
    }
  }
  // Gray level around 128 at continuous coordinates.
  double operator()(double x, double y) const {
    double s = 0.0;
    for (const auto& t : terms_) s += std::sin(2 * std::numbers::pi * (t[0] * x * t[3] + t[1] * y) + t[2]);
    return 128.0 + 100.0 * s / std::sqrt(0.5 * terms_.size()) / 3.0;
  }

 private:
  std::vector<std::array<double, 4>> terms_;
};

inline Image Render(int w, int h, const std::function<double(int, int)>& f, int maxval = 255) {
  Image img(w, h, 1, maxval);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) img.at(x, y) = ToPixelValue(f(x, y), maxval);
  }
  return img;
}

// Lower image = upper image moved down by k rows.
inline std::pair<Image, Image> ShiftedPair(int k, uint64_t seed) {
  const Texture tex(seed);
  const Image up = Render(160, 200, [&](int x, int y) { return tex(x, y); });
  const Image lo = Render(160, 200, [&](int x, int y) { return tex(x, y - k); });
  return {up, lo};
}

}  // namespace omni::testing
