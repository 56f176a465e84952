#pragma once

// Affine and local-weighted-mean (LWM) transforms on points and rasters.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "stainalign/matching.hpp"
#include "stainalign/raster.hpp"

namespace stainalign {

Point2 affine_apply(const AffineModel& m, Point2 p);

/// Throws degenerate_model when |det| <= 1e-9.
AffineModel affine_invert(const AffineModel& m);

/// a after b: p -> a(b(p)).
AffineModel affine_compose(const AffineModel& a, const AffineModel& b);

/// Warps `src` (in the model's source frame) into a width x height target frame.
Raster warp_affine(const Raster& src, const AffineModel& m, int width, int height,
                   std::uint8_t fill = 0);
FloatRaster warp_affine(const FloatRaster& src, const AffineModel& m, int width, int height,
                        float fill = 0.0F);

/// Compactly supported blending weight 1 - 3R^2 + 2R^3 on [0, 1), 0 beyond.
double lwm_weight(double r);

struct LwmControlPoint {
  Point2 anchor;
  double radius = 0.0;
  /// Basis (1, x, y, x^2, xy, y^2) in absolute input coordinates.
  std::array<double, 6> coeffs_x{};
  std::array<double, 6> coeffs_y{};

  Point2 evaluate(Point2 p) const;
};

class LwmModel {
 public:
  LwmModel() = default;
  /// Validates radii and builds the spatial index. An empty control list is
  /// allowed here; applying such a model throws invalid_model.
  LwmModel(std::vector<LwmControlPoint> controls, int n_neighbors);

  const std::vector<LwmControlPoint>& controls() const noexcept { return controls_; }
  int n_neighbors() const noexcept { return n_neighbors_; }
  bool empty() const noexcept { return controls_.empty(); }

  /// Weighted mean of the polynomials whose influence disc contains p. When
  /// none does, the nearest control's polynomial is used and `extrapolated`
  /// is set.
  Point2 apply(Point2 p, bool* extrapolated = nullptr) const;

  /// Index of the anchor nearest to p (lowest index on ties).
  std::size_t nearest_control(Point2 p) const;

 private:
  std::vector<LwmControlPoint> controls_;
  int n_neighbors_ = 0;

  // Uniform grid over the union of influence discs; each cell lists, in
  // ascending order, the controls whose disc touches it.
  double grid_x0_ = 0.0;
  double grid_y0_ = 0.0;
  double cell_ = 1.0;
  int grid_w_ = 0;
  int grid_h_ = 0;
  std::vector<std::size_t> cell_start_;
  std::vector<std::size_t> cell_items_;

  // Anchors sorted by x for the nearest-control search.
  std::vector<std::size_t> by_x_;
};

/// Fits one local quadratic per pair over its n_neighbors nearest inputs
/// (itself included). pairs[i].source is the input, pairs[i].target the output.
/// Throws insufficient_control_points, invalid_argument (n < 6 or duplicate
/// anchors) or DegenerateNeighborhoodError.
LwmModel fit_lwm(std::span<const Correspondence> pairs, int n_neighbors);

Point2 lwm_apply(const LwmModel& model, Point2 p, bool* extrapolated = nullptr);

/// Output pixel (u, v) samples src at inverse_model(u, v). The number of
/// pixels that needed the nearest-control fallback goes to `extrapolated`.
Raster warp_lwm(const Raster& src, const LwmModel& inverse_model, int width, int height,
                std::uint8_t fill = 0, std::size_t* extrapolated = nullptr);
FloatRaster warp_lwm(const FloatRaster& src, const LwmModel& inverse_model, int width,
                     int height, float fill = 0.0F, std::size_t* extrapolated = nullptr);

namespace serial {

/// Brute-force evaluation over every control, in index order; the reference
/// for the indexed LwmModel::apply.
Point2 lwm_apply(const LwmModel& model, Point2 p, bool* extrapolated = nullptr);

}  // namespace serial

}  // namespace stainalign
