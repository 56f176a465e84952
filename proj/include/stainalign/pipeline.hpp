#pragma once

// Two-step registration: feature-based affine pre-alignment at a bounded
// working resolution, then per-band re-matching and an LWM refinement.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stainalign/error.hpp"
#include "stainalign/features.hpp"
#include "stainalign/geometry.hpp"
#include "stainalign/matching.hpp"
#include "stainalign/preprocess.hpp"
#include "stainalign/raster.hpp"

namespace stainalign {

struct PipelineConfig {
  int working_max_dim = 2048;
  PreprocessConfig preprocess;
  SiftParams sift;
  FscParams fsc;
  int lwm_neighbors = 12;
  int tile_count = 3;
  int min_points_per_tile = 6;

  void validate() const;
};

struct ResidualStats {
  std::size_t count = 0;
  double mean = 0.0;
  double rms = 0.0;
  double max = 0.0;
};

ResidualStats residual_stats(std::span<const double> residuals);

struct TileDiagnostics {
  int index = 0;
  double y_begin = 0.0;
  double y_end = 0.0;
  std::size_t source_keypoints = 0;
  std::size_t target_keypoints = 0;
  std::size_t tentative = 0;
  std::size_t inliers = 0;
  bool skipped = false;
  ResidualStats residuals;
};

struct Diagnostics {
  double scale_factor = 1.0;
  Size source_working;
  Size target_working;
  std::size_t source_keypoints = 0;
  std::size_t target_keypoints = 0;
  std::size_t tentative_matches = 0;
  std::size_t affine_inliers = 0;
  int affine_iterations = 0;
  bool affine_converged = false;
  ResidualStats affine_residuals;

  std::size_t refine_source_keypoints = 0;
  std::vector<TileDiagnostics> tiles;
  std::size_t merged_pairs = 0;
  std::size_t dropped_anchors = 0;
  std::size_t lwm_controls = 0;
  ResidualStats lwm_residuals;
  std::size_t extrapolated_pixels = 0;

  std::vector<std::string> warnings;
  bool degraded = false;
  std::string degraded_reason;
};

/// Pipeline failure that keeps the diagnostics gathered up to the failing stage.
class PipelineError : public Error {
 public:
  PipelineError(ErrorCode code, const std::string& message, Diagnostics diagnostics)
      : Error(code, message), diagnostics_(std::move(diagnostics)) {}

  const Diagnostics& diagnostics() const noexcept { return diagnostics_; }

 private:
  Diagnostics diagnostics_;
};

/// Everything needed to map between the two images at working resolution.
struct RegistrationTransform {
  /// Step 1, source -> target.
  AffineModel affine;
  /// Step 2, target -> pre-aligned source; absent in degraded mode.
  std::optional<LwmModel> lwm_inverse;
  /// Merged step-2 pairs, pre-aligned source -> target.
  std::vector<Correspondence> lwm_forward_pairs;
  /// Native pixels per working pixel (>= 1).
  double scale_factor = 1.0;
  Size source_size;
  Size target_size;

  /// Target working pixel -> source working pixel through the whole chain.
  Point2 target_to_source(Point2 p, bool* extrapolated = nullptr) const;
};

struct RegistrationResult {
  RegistrationTransform transform;
  Raster warped;
  Diagnostics diagnostics;
};

/// Output of the first step, kept around for the second.
struct Prealignment {
  AffineModel affine;
  /// Source RGB warped into the target working frame.
  Raster prealigned;
  /// Target at working resolution.
  Raster target;
  /// Preprocessed feature channels at working resolution, each in its own frame.
  FloatRaster source_channel;
  FloatRaster target_channel;
  FeatureSet target_features;
  Size source_size;
  double scale_factor = 1.0;
  Diagnostics diagnostics;
};

/// Common downscale factor bringing the larger of both images to max_dim (>= 1).
double working_scale(Size source, Size target, int max_dim);

/// Native <-> working coordinate maps for a downscale factor.
Point2 to_working(Point2 native, double factor);
Point2 to_native(Point2 working, double factor);

/// Indices of the keypoints falling in each of `count` equal horizontal bands
/// of an image `height` pixels tall. Each keypoint lands in exactly one band.
std::vector<std::vector<std::size_t>> partition_keypoints(std::span<const Keypoint> keypoints,
                                                          int height, int count);

/// Step 1. Throws insufficient_resolution for working images under 256 px,
/// and PipelineError(prealignment_failed) when no affine consensus is found.
Prealignment prealign(const Raster& source, const Raster& target, const PipelineConfig& cfg);

/// Step 2. Throws PipelineError(refinement_failed) when the merged control
/// set is too small for the LWM fit.
RegistrationResult refine_nonrigid(const Prealignment& pre, const PipelineConfig& cfg);

/// Both steps; a refinement failure degrades to the affine-only result.
RegistrationResult register_images(const Raster& source, const Raster& target,
                                   const PipelineConfig& cfg);

}  // namespace stainalign
