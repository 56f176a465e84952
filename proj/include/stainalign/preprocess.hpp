#pragma once

#include <array>
#include <string_view>

#include "stainalign/raster.hpp"

namespace stainalign {

/// Three unit-length optical-density vectors, one per stain (rows), with
/// columns holding the R, G, B components.
class StainMatrix {
 public:
  using Rows = std::array<std::array<double, 3>, 3>;

  /// Normalises each row to unit length. Throws degenerate_stain if a row is
  /// zero or the normalised matrix has |det| <= 1e-9.
  static StainMatrix from_rows(const Rows& rows);

  /// "h_e" (hematoxylin, eosin, residual), "h_dab" (hematoxylin, DAB,
  /// residual) or "h_e_dab" (hematoxylin, eosin, DAB). Vectors are the
  /// standard published optical-density vectors. Throws invalid_argument
  /// for unknown names.
  static StainMatrix preset(std::string_view name);

  const Rows& rows() const noexcept { return rows_; }
  const Rows& inverse() const noexcept { return inverse_; }
  double determinant() const noexcept;

  friend bool operator==(const StainMatrix& a, const StainMatrix& b) { return a.rows_ == b.rows_; }

 private:
  StainMatrix() = default;
  Rows rows_{};
  Rows inverse_{};
};

enum class ThresholdMethod { otsu, fixed };

struct PreprocessConfig {
  double low_percentile = 0.01;
  double high_percentile = 0.99;
  StainMatrix stain_matrix = StainMatrix::preset("h_e_dab");
  /// Density channel handed to feature detection; 0 is hematoxylin in every preset.
  int deconvolution_channel = 0;
  ThresholdMethod tissue_threshold_method = ThresholdMethod::otsu;
  /// Grayscale intensity below which a pixel counts as tissue (fixed method).
  double fixed_threshold = 200.0;

  /// Throws Error(config) when an invariant is violated.
  void validate() const;
};

/// Percentile linear stretch onto [0, 255] with clamping. A degenerate
/// percentile range returns the input unchanged.
FloatRaster enhance_contrast(const FloatRaster& img, double low_percentile, double high_percentile);

/// Value at fraction `p` of the sorted intensities, linearly interpolated.
double percentile(const FloatRaster& img, double p);

using StainDensities = std::array<FloatRaster, 3>;

/// Beer-Lambert unmixing: OD_c = -log10(max(I_c, 1) / 255), densities =
/// OD * inverse(m), clamped below at 0.
StainDensities color_deconvolve(const Raster& img, const StainMatrix& m);

/// The same unmixing for one pixel given as real-valued R, G, B intensities.
std::array<double, 3> deconvolve_pixel(const std::array<double, 3>& rgb, const StainMatrix& m);

/// Inverse of color_deconvolve: I_c = 255 * 10^-(densities * m), rounded.
Raster recompose(const StainDensities& densities, const StainMatrix& m);

/// Otsu threshold over a 256-bin histogram: the first bin t maximising the
/// between-class variance of {<= t} and {> t}.
int otsu_threshold(const std::array<std::size_t, 256>& histogram);

/// One pass of 3x3 majority vote over in-bounds neighbours; ties keep the centre.
BinaryMask majority_cleanup(const BinaryMask& mask);

/// Tissue = darker than the glass background. Threshold by Otsu on the
/// inverted-brightness histogram (or the fixed override), then majority
/// cleanup repeated until the mask stops changing.
BinaryMask tissue_mask(const Raster& img, const PreprocessConfig& cfg);

/// Deconvolved stain channel after contrast enhancement; the image SIFT runs on.
FloatRaster feature_channel(const Raster& img, const PreprocessConfig& cfg);

}  // namespace stainalign
