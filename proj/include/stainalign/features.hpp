#pragma once

// Scale-invariant keypoints: difference-of-Gaussians scale space, 3x3x3
// extrema with quadratic refinement, gradient-orientation assignment and
// 4x4x8 gradient-histogram descriptors.

#include <cstddef>
#include <span>
#include <vector>

#include "stainalign/raster.hpp"

namespace stainalign {

inline constexpr int kDescriptorSize = 128;

struct SiftParams {
  /// 0 = as many octaves as keep the smallest one >= 16 px.
  int octaves = 0;
  int scales_per_octave = 3;
  double base_sigma = 1.6;
  /// On DoG values of intensities normalised to [0, 1].
  double contrast_threshold = 0.03;
  double edge_ratio_threshold = 10.0;
  /// 0 = unlimited.
  int max_keypoints = 8000;

  void validate() const;
};

struct Keypoint {
  double x = 0.0;  ///< full-resolution pixels
  double y = 0.0;
  double scale = 0.0;  ///< blur sigma in full-resolution pixels
  double orientation = 0.0;  ///< radians in [0, 2pi)
  double response = 0.0;  ///< |DoG| at the refined extremum
  int octave = 0;
  double layer = 0.0;  ///< fractional scale index within the octave
};

/// Keypoints plus their descriptors, stored contiguously (128 floats each).
struct FeatureSet {
  std::vector<Keypoint> keypoints;
  std::vector<float> descriptors;

  std::size_t size() const noexcept { return keypoints.size(); }
  bool empty() const noexcept { return keypoints.empty(); }
  std::span<const float, kDescriptorSize> descriptor(std::size_t i) const {
    return std::span<const float, kDescriptorSize>(descriptors.data() + i * kDescriptorSize,
                                                   kDescriptorSize);
  }
  FeatureSet subset(std::span<const std::size_t> indices) const;
};

struct ScaleSpace {
  /// gaussian[o] holds scales_per_octave + 3 levels, dog[o] one fewer.
  /// Values are intensities / 255.
  std::vector<std::vector<FloatRaster>> gaussian;
  std::vector<std::vector<FloatRaster>> dog;
  int scales_per_octave = 3;
  double base_sigma = 1.6;

  int octaves() const noexcept { return static_cast<int>(gaussian.size()); }
  /// Blur of Gaussian level `level` of octave `octave`, in full-resolution pixels.
  double effective_sigma(int octave, double level) const;
};

/// Throws insufficient_resolution when min(width, height) < 16. Input
/// intensities are in [0, 255] and assumed pre-blurred at sigma 0.5.
ScaleSpace build_scale_space(const FloatRaster& img, const SiftParams& p);

/// Refined DoG extrema, coordinates in full-resolution pixels, orientation 0.
std::vector<Keypoint> detect_keypoints(const ScaleSpace& space, const SiftParams& p);

/// Assigns orientations (one keypoint per dominant histogram peak) and
/// computes descriptors. Keypoints too close to the border for the sampling
/// grid, or with no gradient energy, are dropped.
FeatureSet compute_descriptors(const ScaleSpace& space, std::span<const Keypoint> keypoints);

/// Descriptor of a single keypoint at the given orientation, or an empty
/// vector when the keypoint is dropped.
std::vector<float> describe(const ScaleSpace& space, const Keypoint& kp);

/// Full detector; keypoints sorted by descending response and truncated to
/// max_keypoints.
FeatureSet detect_and_describe(const FloatRaster& img, const SiftParams& p);

}  // namespace stainalign
