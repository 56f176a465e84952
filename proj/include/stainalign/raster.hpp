#pragma once

// Image containers shared by every module. Coordinates follow one convention
// throughout the library: row-major storage, origin at the top-left pixel
// centre, x to the right, y downward.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace stainalign {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

inline Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
inline Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
double distance(Point2 a, Point2 b);

struct Size {
  int width = 0;
  int height = 0;

  friend bool operator==(const Size&, const Size&) = default;
};

/// 8-bit image with 1 or 3 interleaved channels.
class Raster {
 public:
  Raster(int width, int height, int channels, std::uint8_t fill = 0);
  Raster(int width, int height, int channels, std::vector<std::uint8_t> data);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  Size size() const noexcept { return {width_, height_}; }

  std::uint8_t at(int x, int y, int c = 0) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  std::uint8_t& at(int x, int y, int c = 0) {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  std::span<const std::uint8_t> data() const noexcept { return data_; }
  std::span<std::uint8_t> data() noexcept { return data_; }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  int width_;
  int height_;
  int channels_;
  std::vector<std::uint8_t> data_;
};

/// Single-channel real-valued image; intensities conventionally in [0, 255].
class FloatRaster {
 public:
  FloatRaster(int width, int height, float fill = 0.0F);
  FloatRaster(int width, int height, std::vector<float> data);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  Size size() const noexcept { return {width_, height_}; }

  float at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  float& at(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  const float* row(int y) const { return data_.data() + static_cast<std::size_t>(y) * width_; }
  float* row(int y) { return data_.data() + static_cast<std::size_t>(y) * width_; }

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }

  bool all_finite() const;

  friend bool operator==(const FloatRaster&, const FloatRaster&) = default;

 private:
  int width_;
  int height_;
  std::vector<float> data_;
};

class BinaryMask {
 public:
  BinaryMask(int width, int height, bool fill = false);
  BinaryMask(int width, int height, std::vector<std::uint8_t> bits);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  Size size() const noexcept { return {width_, height_}; }

  bool at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int x, int y, bool v) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }

  /// One byte per pixel, 0 or 1.
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  std::size_t count() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> bits_;
};

/// Luminance 0.299 R + 0.587 G + 0.114 B. Throws invalid_channel on 1-channel input.
FloatRaster to_grayscale(const Raster& img);

/// One channel of `img` converted to real values.
FloatRaster channel_as_float(const Raster& img, int channel);

/// Bilinear interpolation; coordinates outside [0, w-1] x [0, h-1] yield `fill`.
double bilinear_sample(const FloatRaster& img, double x, double y, double fill = 0.0);
double bilinear_sample(const Raster& img, int channel, double x, double y, double fill = 0.0);

/// Anti-aliased reduction: Gaussian pre-blur with sigma = 0.5 * factor, then
/// bilinear resampling onto a ceil(w / factor) x ceil(h / factor) grid whose
/// pixel centres map to (i + 0.5) * factor - 0.5 in the input.
Raster downscale(const Raster& img, double factor);
FloatRaster downscale(const FloatRaster& img, double factor);

/// Input coordinate sampled by output pixel `i` of a downscale by `factor`.
inline double downscale_source_coord(double i, double factor) { return (i + 0.5) * factor - 0.5; }

}  // namespace stainalign
