#pragma once

// Registration quality metrics and synthetic ground-truth pairs.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stainalign/matching.hpp"
#include "stainalign/pipeline.hpp"
#include "stainalign/preprocess.hpp"
#include "stainalign/raster.hpp"

namespace stainalign {

struct Metrics {
  double jaccard = 0.0;
  std::optional<double> control_rmse;
  std::optional<double> landmark_mean_error;
  std::optional<double> landmark_rmse;
  std::optional<double> landmark_max_error;
  double extrapolated_fraction = 0.0;
  /// Set when both masks were empty and the Jaccard index fell back to 1.
  std::string note;
};

/// |a & b| / |a | b|; two empty masks give 1. Throws shape on size mismatch.
double jaccard(const BinaryMask& a, const BinaryMask& b);

struct LandmarkStats {
  double mean = 0.0;
  double rmse = 0.0;
  double max = 0.0;
};

/// Distances between map(source) and target over the pairs. Throws
/// invalid_argument when `pairs` is empty.
LandmarkStats landmark_error(const std::function<Point2(Point2)>& map,
                             std::span<const Correspondence> pairs);

/// Landmark CSV: one "x_src,y_src,x_tgt,y_tgt" line per pair; blank lines and
/// lines starting with '#' are ignored, as is a non-numeric header line.
std::vector<Correspondence> parse_landmarks_csv(const std::string& text);

struct SynthSpec {
  /// Radians, about the image centre.
  double rotation = 0.0;
  double scale = 1.0;
  Point2 translation;
  double deform_amplitude = 0.0;
  double deform_wavelength = 256.0;
  std::optional<std::pair<StainMatrix, StainMatrix>> recolor;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Exact target -> source correspondence of a synthetic pair:
/// map(p) = affine(p + d(p)) with d(p) = amplitude * (sin(2 pi y / wavelength + phase_x),
///                                                     sin(2 pi x / wavelength + phase_y)).
struct GroundTruth {
  AffineModel affine;
  double amplitude = 0.0;
  double wavelength = 1.0;
  double phase_x = 0.0;
  double phase_y = 0.0;

  Point2 displacement(Point2 p) const;
  Point2 map(Point2 target) const;
  /// Source -> target, by Newton iteration on the displacement.
  Point2 inverse(Point2 source) const;
};

struct SynthPair {
  Raster source;
  Raster target;
  GroundTruth truth;
  /// Affine part of the truth (target -> source).
  AffineModel truth_affine;
};

/// Ground truth for a spec on an image of the given size.
GroundTruth make_ground_truth(const SynthSpec& spec, Size size);

/// target = base; source is base resampled so that source(truth(p)) = base(p),
/// white outside the frame, then optionally recoloured. Throws invalid_argument
/// for an invalid spec or when under 70% of the base tissue stays in frame.
SynthPair synth_pair(const Raster& base, const SynthSpec& spec);

/// Procedural H&E-like tissue section on a white background: an irregular
/// slab with lumens, a smooth eosin field and scattered nuclei.
Raster make_tissue_phantom(int size, std::uint64_t seed);

struct EvaluationInputs {
  /// Target -> source ground truth in working coordinates.
  std::function<Point2(Point2)> truth;
  /// Source -> target landmark pairs in working coordinates.
  std::vector<Correspondence> landmarks;
};

/// Warps source_mask into the target frame through the transform chain
/// (nearest neighbour) and scores it against target_mask. Masks are at
/// working resolution.
Metrics evaluate(const RegistrationTransform& transform, const BinaryMask& source_mask,
                 const BinaryMask& target_mask, const EvaluationInputs& extra = {});

/// source_mask carried into the target frame by the transform chain.
BinaryMask warp_mask(const RegistrationTransform& transform, const BinaryMask& source_mask,
                     Size target_size, std::size_t* extrapolated = nullptr);

/// "pair_id,jaccard,rmse,extrapolated_fraction"; absent rmse is left empty.
std::string metrics_csv_row(const std::string& pair_id, const Metrics& m);
std::string metrics_csv_header();

}  // namespace stainalign
