#include <algorithm>

#include "stainalign/kernels.hpp"

namespace stainalign::kernels::serial {

FloatRaster convolve_separable(const FloatRaster& img, std::span<const float> taps) {
  const int w = img.width();
  const int h = img.height();
  const int r = static_cast<int>(taps.size() / 2);
  FloatRaster tmp(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float c = img.at(x, y);
      float acc = 0.0F;
      for (int k = 0; k <= 2 * r; ++k) {
        acc += taps[k] * (img.at(std::clamp(x + k - r, 0, w - 1), y) - c);
      }
      tmp.at(x, y) = c + acc;
    }
  }
  FloatRaster out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float c = tmp.at(x, y);
      float acc = 0.0F;
      for (int k = 0; k <= 2 * r; ++k) {
        acc += taps[k] * (tmp.at(x, std::clamp(y + k - r, 0, h - 1)) - c);
      }
      out.at(x, y) = c + acc;
    }
  }
  return out;
}

FloatRaster gaussian_blur(const FloatRaster& img, double sigma) {
  if (!(sigma > 0.0)) return img;
  const auto taps = gaussian_taps(sigma);
  return convolve_separable(img, taps);
}

}  // namespace stainalign::kernels::serial
