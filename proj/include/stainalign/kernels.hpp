#pragma once

// Data-parallel inner loops. Everything in `kernels` is OpenMP-parallel;
// `kernels::serial` holds straightforward single-threaded reference versions
// kept for testing and benchmarking. The raster kernels match their reference
// bit for bit; nearest_two's reference accumulates in double instead.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "stainalign/raster.hpp"

namespace stainalign::kernels {

/// Normalised 1-D Gaussian taps, radius ceil(4 sigma). sigma <= 0 yields {1}.
std::vector<float> gaussian_taps(double sigma);

/// Separable convolution with clamp-to-edge borders. Each output is computed as
/// centre + sum_k w_k (v_k - centre), which leaves constant regions exact.
FloatRaster convolve_separable(const FloatRaster& img, std::span<const float> taps);
FloatRaster gaussian_blur(const FloatRaster& img, double sigma);

struct NearestTwo {
  int best = -1;
  int second = -1;
  float best_d2 = 0.0F;
  float second_d2 = 0.0F;
};

/// For every `dim`-sized row of `queries`, the two nearest rows of `refs` by
/// squared Euclidean distance. Ties resolve to the lower reference index.
std::vector<NearestTwo> nearest_two(std::span<const float> queries, std::span<const float> refs,
                                    int dim);

/// Number of worker threads OpenMP will use for the next parallel region.
int max_threads();
void set_max_threads(int n);

/// Inverse-mapping resample of an 8-bit raster: output pixel (u, v) takes the
/// bilinear sample of `src` at map(u, v). `map(x, y, flagged)` may set
/// `flagged`; the number of flagged pixels is written to `flagged_count`.
template <class MapFn>
Raster remap_bilinear(const Raster& src, Size out, MapFn&& map, std::uint8_t fill,
                      std::size_t* flagged_count = nullptr);

template <class MapFn>
FloatRaster remap_bilinear(const FloatRaster& src, Size out, MapFn&& map, float fill,
                           std::size_t* flagged_count = nullptr);

/// Nearest-neighbour resample of a binary mask; outside pixels are false.
template <class MapFn>
BinaryMask remap_nearest(const BinaryMask& src, Size out, MapFn&& map,
                         std::size_t* flagged_count = nullptr);

namespace serial {

FloatRaster convolve_separable(const FloatRaster& img, std::span<const float> taps);
FloatRaster gaussian_blur(const FloatRaster& img, double sigma);
std::vector<NearestTwo> nearest_two(std::span<const float> queries, std::span<const float> refs,
                                    int dim);

template <class MapFn>
Raster remap_bilinear(const Raster& src, Size out, MapFn&& map, std::uint8_t fill,
                      std::size_t* flagged_count = nullptr);

}  // namespace serial

// ---------------------------------------------------------------------------

namespace detail {

inline std::uint8_t to_u8(double v) {
  if (v <= 0.0) return 0;
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v));
}

template <class MapFn>
void remap_row_u8(const Raster& src, Raster& dst, int v, MapFn& map, std::uint8_t fill,
                  std::size_t& flagged) {
  const int channels = src.channels();
  for (int u = 0; u < dst.width(); ++u) {
    bool flag = false;
    const Point2 p = map(static_cast<double>(u), static_cast<double>(v), flag);
    if (flag) ++flagged;
    for (int c = 0; c < channels; ++c) {
      dst.at(u, v, c) = to_u8(bilinear_sample(src, c, p.x, p.y, fill));
    }
  }
}

}  // namespace detail

template <class MapFn>
Raster remap_bilinear(const Raster& src, Size out, MapFn&& map, std::uint8_t fill,
                      std::size_t* flagged_count) {
  Raster dst(out.width, out.height, src.channels(), fill);
  std::size_t flagged = 0;
#pragma omp parallel for schedule(static) reduction(+ : flagged)
  for (int v = 0; v < out.height; ++v) {
    detail::remap_row_u8(src, dst, v, map, fill, flagged);
  }
  if (flagged_count != nullptr) *flagged_count = flagged;
  return dst;
}

template <class MapFn>
FloatRaster remap_bilinear(const FloatRaster& src, Size out, MapFn&& map, float fill,
                           std::size_t* flagged_count) {
  FloatRaster dst(out.width, out.height, fill);
  std::size_t flagged = 0;
#pragma omp parallel for schedule(static) reduction(+ : flagged)
  for (int v = 0; v < out.height; ++v) {
    float* row = dst.row(v);
    for (int u = 0; u < out.width; ++u) {
      bool flag = false;
      const Point2 p = map(static_cast<double>(u), static_cast<double>(v), flag);
      if (flag) ++flagged;
      row[u] = static_cast<float>(bilinear_sample(src, p.x, p.y, fill));
    }
  }
  if (flagged_count != nullptr) *flagged_count = flagged;
  return dst;
}

template <class MapFn>
BinaryMask remap_nearest(const BinaryMask& src, Size out, MapFn&& map,
                         std::size_t* flagged_count) {
  BinaryMask dst(out.width, out.height, false);
  std::size_t flagged = 0;
#pragma omp parallel for schedule(static) reduction(+ : flagged)
  for (int v = 0; v < out.height; ++v) {
    for (int u = 0; u < out.width; ++u) {
      bool flag = false;
      const Point2 p = map(static_cast<double>(u), static_cast<double>(v), flag);
      if (flag) ++flagged;
      const double rx = std::floor(p.x + 0.5);
      const double ry = std::floor(p.y + 0.5);
      if (rx >= 0.0 && ry >= 0.0 && rx < src.width() && ry < src.height()) {
        dst.set(u, v, src.at(static_cast<int>(rx), static_cast<int>(ry)));
      }
    }
  }
  if (flagged_count != nullptr) *flagged_count = flagged;
  return dst;
}

template <class MapFn>
Raster serial::remap_bilinear(const Raster& src, Size out, MapFn&& map, std::uint8_t fill,
                              std::size_t* flagged_count) {
  Raster dst(out.width, out.height, src.channels(), fill);
  std::size_t flagged = 0;
  for (int v = 0; v < out.height; ++v) {
    detail::remap_row_u8(src, dst, v, map, fill, flagged);
  }
  if (flagged_count != nullptr) *flagged_count = flagged;
  return dst;
}

}  // namespace stainalign::kernels
