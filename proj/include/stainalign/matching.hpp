#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "stainalign/features.hpp"
#include "stainalign/raster.hpp"

namespace stainalign {

struct Correspondence {
  Point2 source;
  Point2 target;
  /// Nearest / second-nearest descriptor distance, in [0, 1].
  double ratio = 0.0;
  /// Indices into the originating feature sets; -1 when not applicable.
  int source_index = -1;
  int target_index = -1;

  friend bool operator==(const Correspondence&, const Correspondence&) = default;
};

/// Planar affine map (x, y) -> (a11 x + a12 y + tx, a21 x + a22 y + ty).
struct AffineModel {
  double a11 = 1.0;
  double a12 = 0.0;
  double a21 = 0.0;
  double a22 = 1.0;
  double tx = 0.0;
  double ty = 0.0;

  static AffineModel identity() { return {}; }
  static AffineModel translation(double dx, double dy) { return {1.0, 0.0, 0.0, 1.0, dx, dy}; }

  Point2 apply(Point2 p) const { return {a11 * p.x + a12 * p.y + tx, a21 * p.x + a22 * p.y + ty}; }
  double determinant() const { return a11 * a22 - a12 * a21; }

  friend bool operator==(const AffineModel&, const AffineModel&) = default;
};

struct FscParams {
  double loose_ratio = 0.85;
  double strict_ratio = 0.6;
  double inlier_tolerance = 5.0;
  int max_iterations = 20;
  int min_inliers = 6;

  void validate() const;
};

struct ConsensusResult {
  std::vector<Correspondence> inliers;
  /// Positions of the inliers within the tentative set, ascending.
  std::vector<std::size_t> inlier_indices;
  AffineModel model;
  int iterations = 0;
  bool converged = false;
};

/// Ratio-test matching of every descriptor in `a` against `b`, one-to-one on
/// the target side (lowest ratio wins). Result ordered by source index.
std::vector<Correspondence> match_descriptors(const FeatureSet& a, const FeatureSet& b,
                                              double ratio_threshold);

/// Ordinary least squares over target residuals, solved on centred and
/// isotropically scaled coordinates. Throws insufficient_correspondences for
/// fewer than 3 pairs and degenerate_configuration for collinear sources.
AffineModel estimate_affine_lsq(std::span<const Correspondence> matches);

/// Distance between the mapped source point and the target point.
double affine_residual(const AffineModel& m, const Correspondence& c);

/// Fast sample consensus. Seeds are the matches with ratio <= strict_ratio
/// (or the three best when fewer qualify); a deterministic sweep over
/// minimal subsets of the best seeds picks the hypothesis with the largest
/// support, whose seed-set consensus gives the least-squares starting model.
/// Inliers are then expanded and refit until the set stops changing or
/// max_iterations is reached. No randomness.
ConsensusResult fsc_filter(std::span<const Correspondence> tentative, const FscParams& p);

/// Same expansion loop, started from a known model instead of the seed stage.
ConsensusResult fsc_filter(std::span<const Correspondence> tentative, const FscParams& p,
                           const AffineModel& initial);

/// Classical RANSAC over random minimal samples; deterministic for a seed.
ConsensusResult ransac_filter(std::span<const Correspondence> tentative, double tolerance,
                              int iterations, std::uint64_t seed, int min_inliers = 3);

}  // namespace stainalign
