#include "stainalign/raster.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "stainalign/error.hpp"
#include "stainalign/kernels.hpp"

namespace stainalign {

namespace {

void check_dims(int width, int height) {
  if (width < 1 || height < 1) {
    throw Error(ErrorCode::invalid_argument, "raster dimensions must be positive, got " +
                                                 std::to_string(width) + "x" +
                                                 std::to_string(height));
  }
}

std::size_t pixel_count(int width, int height) {
  return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
}

}  // namespace

double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

Raster::Raster(int width, int height, int channels, std::uint8_t fill)
    : width_(width), height_(height), channels_(channels) {
  check_dims(width, height);
  if (channels != 1 && channels != 3) {
    throw Error(ErrorCode::invalid_channel, "raster must have 1 or 3 channels");
  }
  data_.assign(pixel_count(width, height) * channels, fill);
}

Raster::Raster(int width, int height, int channels, std::vector<std::uint8_t> data)
    : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
  check_dims(width, height);
  if (channels != 1 && channels != 3) {
    throw Error(ErrorCode::invalid_channel, "raster must have 1 or 3 channels");
  }
  if (data_.size() != pixel_count(width, height) * channels) {
    throw Error(ErrorCode::invalid_argument, "raster data length does not match dimensions");
  }
}

FloatRaster::FloatRaster(int width, int height, float fill) : width_(width), height_(height) {
  check_dims(width, height);
  data_.assign(pixel_count(width, height), fill);
}

FloatRaster::FloatRaster(int width, int height, std::vector<float> data)
    : width_(width), height_(height), data_(std::move(data)) {
  check_dims(width, height);
  if (data_.size() != pixel_count(width, height)) {
    throw Error(ErrorCode::invalid_argument, "float raster data length does not match dimensions");
  }
}

bool FloatRaster::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

BinaryMask::BinaryMask(int width, int height, bool fill) : width_(width), height_(height) {
  check_dims(width, height);
  bits_.assign(pixel_count(width, height), fill ? 1 : 0);
}

BinaryMask::BinaryMask(int width, int height, std::vector<std::uint8_t> bits)
    : width_(width), height_(height), bits_(std::move(bits)) {
  check_dims(width, height);
  if (bits_.size() != pixel_count(width, height)) {
    throw Error(ErrorCode::invalid_argument, "mask length does not match dimensions");
  }
  for (auto& b : bits_) b = b != 0 ? 1 : 0;
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

FloatRaster to_grayscale(const Raster& img) {
  if (img.channels() != 3) {
    throw Error(ErrorCode::invalid_channel, "to_grayscale expects a 3-channel raster");
  }
  FloatRaster out(img.width(), img.height());
  const auto src = img.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double r = src[3 * i];
    const double g = src[3 * i + 1];
    const double b = src[3 * i + 2];
    // Equal channels must come back exactly.
    if (src[3 * i] == src[3 * i + 1] && src[3 * i] == src[3 * i + 2]) {
      dst[i] = static_cast<float>(r);
    } else {
      dst[i] = static_cast<float>(0.299 * r + 0.587 * g + 0.114 * b);
    }
  }
  return out;
}

FloatRaster channel_as_float(const Raster& img, int channel) {
  if (channel < 0 || channel >= img.channels()) {
    throw Error(ErrorCode::invalid_channel, "channel index out of range");
  }
  FloatRaster out(img.width(), img.height());
  const auto src = img.data();
  auto dst = out.data();
  const auto stride = static_cast<std::size_t>(img.channels());
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i * stride + channel];
  return out;
}

namespace {

template <class Get>
double bilinear(int width, int height, double x, double y, double fill, Get&& get) {
  // round-off from a transform chain must not push border pixels outside
  constexpr double kEdge = 1e-9;
  if (!(x >= -kEdge && y >= -kEdge && x <= width - 1 + kEdge && y <= height - 1 + kEdge)) return fill;
  x = std::clamp(x, 0.0, width - 1.0);
  y = std::clamp(y, 0.0, height - 1.0);
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const double fx = x - x0;
  const double fy = y - y0;
  const int x1 = x0 + 1 < width ? x0 + 1 : x0;
  const int y1 = y0 + 1 < height ? y0 + 1 : y0;
  if (fx == 0.0 && fy == 0.0) return get(x0, y0);
  const double top = get(x0, y0) + fx * (get(x1, y0) - get(x0, y0));
  const double bottom = get(x0, y1) + fx * (get(x1, y1) - get(x0, y1));
  return top + fy * (bottom - top);
}

}  // namespace

double bilinear_sample(const FloatRaster& img, double x, double y, double fill) {
  return bilinear(img.width(), img.height(), x, y, fill,
                  [&](int px, int py) -> double { return img.at(px, py); });
}

double bilinear_sample(const Raster& img, int channel, double x, double y, double fill) {
  return bilinear(img.width(), img.height(), x, y, fill,
                  [&](int px, int py) -> double { return img.at(px, py, channel); });
}

FloatRaster downscale(const FloatRaster& img, double factor) {
  if (!(factor >= 1.0)) {
    throw Error(ErrorCode::invalid_argument, "downscale factor must be >= 1");
  }
  if (factor == 1.0) return img;
  const FloatRaster blurred = kernels::gaussian_blur(img, 0.5 * factor);
  const int w = static_cast<int>(std::ceil(img.width() / factor));
  const int h = static_cast<int>(std::ceil(img.height() / factor));
  FloatRaster out(w, h);
#pragma omp parallel for schedule(static)
  for (int v = 0; v < h; ++v) {
    const double sy = std::clamp(downscale_source_coord(v, factor), 0.0, img.height() - 1.0);
    for (int u = 0; u < w; ++u) {
      const double sx = std::clamp(downscale_source_coord(u, factor), 0.0, img.width() - 1.0);
      out.at(u, v) = static_cast<float>(bilinear_sample(blurred, sx, sy));
    }
  }
  return out;
}

Raster downscale(const Raster& img, double factor) {
  if (!(factor >= 1.0)) {
    throw Error(ErrorCode::invalid_argument, "downscale factor must be >= 1");
  }
  if (factor == 1.0) return img;
  const int w = static_cast<int>(std::ceil(img.width() / factor));
  const int h = static_cast<int>(std::ceil(img.height() / factor));
  Raster out(w, h, img.channels());
  for (int c = 0; c < img.channels(); ++c) {
    const FloatRaster plane = downscale(channel_as_float(img, c), factor);
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) out.at(u, v, c) = kernels::detail::to_u8(plane.at(u, v));
    }
  }
  return out;
}

}  // namespace stainalign
