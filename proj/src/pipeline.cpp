#include "stainalign/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "stainalign/error.hpp"

namespace stainalign {

namespace {

constexpr int kMinWorkingDim = 256;
// Slides are brightfield: unmapped areas of a warped RGB image read as glass.
constexpr std::uint8_t kRgbFill = 255;

bool is_consensus_error(ErrorCode c) {
  return c == ErrorCode::consensus_failure || c == ErrorCode::degenerate_configuration ||
         c == ErrorCode::insufficient_correspondences;
}

std::vector<double> residuals_of(const AffineModel& m, std::span<const Correspondence> pairs) {
  std::vector<double> r;
  r.reserve(pairs.size());
  for (const auto& c : pairs) r.push_back(affine_residual(m, c));
  return r;
}

// Drops pairs whose target point repeats an earlier one (multi-orientation
// keypoints share a location); LWM anchors must be distinct.
std::vector<Correspondence> unique_targets(std::vector<Correspondence> pairs) {
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& pa = pairs[a].target;
    const auto& pb = pairs[b].target;
    if (pa.x != pb.x) return pa.x < pb.x;
    if (pa.y != pb.y) return pa.y < pb.y;
    return a < b;
  });
  std::vector<bool> keep(pairs.size(), true);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (!keep[order[i]]) continue;
    const Point2 p = pairs[order[i]].target;
    for (std::size_t j = i + 1; j < order.size() && pairs[order[j]].target.x - p.x < 1e-6; ++j) {
      const std::size_t other = order[j];
      if (keep[other] && distance(p, pairs[other].target) < 1e-6) {
        // Keep whichever came first in merge order.
        if (other > order[i]) {
          keep[other] = false;
        } else {
          keep[order[i]] = false;
          break;
        }
      }
    }
  }
  std::vector<Correspondence> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (keep[i]) out.push_back(pairs[i]);
  }
  return out;
}

}  // namespace

void PipelineConfig::validate() const {
  if (working_max_dim < kMinWorkingDim) {
    throw Error(ErrorCode::config, "working_max_dim must be at least 256");
  }
  if (tile_count < 1) throw Error(ErrorCode::config, "tile_count must be at least 1");
  if (lwm_neighbors < 6) throw Error(ErrorCode::config, "lwm_neighbors must be at least 6");
  if (min_points_per_tile < 3) throw Error(ErrorCode::config, "min_points_per_tile must be at least 3");
  preprocess.validate();
  sift.validate();
  fsc.validate();
}

ResidualStats residual_stats(std::span<const double> residuals) {
  ResidualStats s;
  s.count = residuals.size();
  if (residuals.empty()) return s;
  double sum = 0.0;
  double sq = 0.0;
  for (double r : residuals) {
    sum += r;
    sq += r * r;
    s.max = std::max(s.max, r);
  }
  s.mean = sum / static_cast<double>(residuals.size());
  s.rms = std::sqrt(sq / static_cast<double>(residuals.size()));
  return s;
}

Point2 RegistrationTransform::target_to_source(Point2 p, bool* extrapolated) const {
  Point2 q = p;
  if (lwm_inverse) {
    q = lwm_inverse->apply(p, extrapolated);
  } else if (extrapolated != nullptr) {
    *extrapolated = false;
  }
  return affine_invert(affine).apply(q);
}

double working_scale(Size source, Size target, int max_dim) {
  const int largest = std::max({source.width, source.height, target.width, target.height});
  const double f = static_cast<double>(largest) / static_cast<double>(max_dim);
  return f > 1.0 ? f : 1.0;
}

Point2 to_working(Point2 native, double factor) {
  return {(native.x + 0.5) / factor - 0.5, (native.y + 0.5) / factor - 0.5};
}

Point2 to_native(Point2 working, double factor) {
  return {downscale_source_coord(working.x, factor), downscale_source_coord(working.y, factor)};
}

std::vector<std::vector<std::size_t>> partition_keypoints(std::span<const Keypoint> keypoints,
                                                          int height, int count) {
  if (count < 1 || height < 1) throw Error(ErrorCode::invalid_argument, "bad partition");
  std::vector<std::vector<std::size_t>> bands(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < keypoints.size(); ++i) {
    const double t = keypoints[i].y * count / height;
    const int k = std::clamp(static_cast<int>(std::floor(t)), 0, count - 1);
    bands[static_cast<std::size_t>(k)].push_back(i);
  }
  return bands;
}

Prealignment prealign(const Raster& source, const Raster& target, const PipelineConfig& cfg) {
  cfg.validate();
  const double f = working_scale(source.size(), target.size(), cfg.working_max_dim);
  Raster src = downscale(source, f);
  Raster tgt = downscale(target, f);
  if (std::min({src.width(), src.height(), tgt.width(), tgt.height()}) < kMinWorkingDim) {
    throw Error(ErrorCode::insufficient_resolution,
                "images must be at least 256 px in both dimensions at working resolution");
  }

  Diagnostics diag;
  diag.scale_factor = f;
  diag.source_working = src.size();
  diag.target_working = tgt.size();

  FloatRaster src_channel = feature_channel(src, cfg.preprocess);
  FloatRaster tgt_channel = feature_channel(tgt, cfg.preprocess);
  const FeatureSet sf = detect_and_describe(src_channel, cfg.sift);
  FeatureSet tf = detect_and_describe(tgt_channel, cfg.sift);
  diag.source_keypoints = sf.size();
  diag.target_keypoints = tf.size();

  const auto tentative = match_descriptors(sf, tf, cfg.fsc.loose_ratio);
  diag.tentative_matches = tentative.size();

  ConsensusResult cons;
  try {
    cons = fsc_filter(tentative, cfg.fsc);
  } catch (const Error& e) {
    if (!is_consensus_error(e.code())) throw;
    throw PipelineError(ErrorCode::prealignment_failed,
                        std::string("pre-alignment failed: ") + e.what() + " (" +
                            std::to_string(sf.size()) + "/" + std::to_string(tf.size()) +
                            " keypoints, " + std::to_string(tentative.size()) +
                            " tentative matches)",
                        diag);
  }
  diag.affine_inliers = cons.inliers.size();
  diag.affine_iterations = cons.iterations;
  diag.affine_converged = cons.converged;
  const auto res = residuals_of(cons.model, cons.inliers);
  diag.affine_residuals = residual_stats(res);

  Raster prealigned = warp_affine(src, cons.model, tgt.width(), tgt.height(), kRgbFill);
  const Size source_size = src.size();
  return Prealignment{cons.model,
                      std::move(prealigned),
                      std::move(tgt),
                      std::move(src_channel),
                      std::move(tgt_channel),
                      std::move(tf),
                      source_size,
                      f,
                      std::move(diag)};
}

RegistrationResult refine_nonrigid(const Prealignment& pre, const PipelineConfig& cfg) {
  cfg.validate();
  Diagnostics diag = pre.diagnostics;
  const int tw = pre.target.width();
  const int th = pre.target.height();

  // Density 0 is glass, so the fill adds no spurious edges.
  const FloatRaster moved = warp_affine(pre.source_channel, pre.affine, tw, th, 0.0F);
  const FeatureSet sf = detect_and_describe(moved, cfg.sift);
  const FeatureSet& tf = pre.target_features;
  diag.refine_source_keypoints = sf.size();

  const auto sbands = partition_keypoints(sf.keypoints, th, cfg.tile_count);
  const auto tbands = partition_keypoints(tf.keypoints, th, cfg.tile_count);

  std::vector<Correspondence> merged;
  for (int k = 0; k < cfg.tile_count; ++k) {
    const auto& sidx = sbands[static_cast<std::size_t>(k)];
    const auto& tidx = tbands[static_cast<std::size_t>(k)];
    TileDiagnostics td;
    td.index = k;
    td.y_begin = static_cast<double>(k) * th / cfg.tile_count;
    td.y_end = static_cast<double>(k + 1) * th / cfg.tile_count;
    td.source_keypoints = sidx.size();
    td.target_keypoints = tidx.size();

    auto tentative = match_descriptors(sf.subset(sidx), tf.subset(tidx), cfg.fsc.loose_ratio);
    for (auto& c : tentative) {
      c.source_index = static_cast<int>(sidx[static_cast<std::size_t>(c.source_index)]);
      c.target_index = static_cast<int>(tidx[static_cast<std::size_t>(c.target_index)]);
    }
    td.tentative = tentative.size();

    std::optional<ConsensusResult> cons;
    if (tentative.size() >= static_cast<std::size_t>(cfg.min_points_per_tile)) {
      try {
        cons = fsc_filter(tentative, cfg.fsc, AffineModel::identity());
      } catch (const Error& e) {
        if (!is_consensus_error(e.code())) throw;
      }
    }
    if (!cons || cons->inliers.size() < static_cast<std::size_t>(cfg.min_points_per_tile)) {
      td.skipped = true;
      td.inliers = cons ? cons->inliers.size() : 0;
      diag.warnings.push_back("portion " + std::to_string(k) + " skipped: " +
                              std::to_string(td.inliers) + " inliers from " +
                              std::to_string(tentative.size()) + " tentative matches (need " +
                              std::to_string(cfg.min_points_per_tile) + ")");
      diag.tiles.push_back(td);
      continue;
    }
    auto inliers = cons->inliers;
    td.inliers = inliers.size();
    const auto res = residuals_of(cons->model, inliers);
    td.residuals = residual_stats(res);
    // Target keypoints are stored by descending response, so index = rank.
    std::stable_sort(inliers.begin(), inliers.end(), [](const Correspondence& a, const Correspondence& b) {
      return a.target_index < b.target_index;
    });
    merged.insert(merged.end(), inliers.begin(), inliers.end());
    diag.tiles.push_back(td);
  }

  merged = unique_targets(std::move(merged));
  diag.merged_pairs = merged.size();

  auto fail = [&](const std::string& why) {
    return PipelineError(ErrorCode::refinement_failed, why, diag);
  };
  if (merged.size() < static_cast<std::size_t>(cfg.lwm_neighbors)) {
    throw fail("refinement failed: " + std::to_string(merged.size()) +
               " merged control pairs, need " + std::to_string(cfg.lwm_neighbors));
  }

  std::optional<LwmModel> lwm;
  while (!lwm) {
    if (merged.size() < static_cast<std::size_t>(cfg.lwm_neighbors)) {
      throw fail("refinement failed: only " + std::to_string(merged.size()) +
                 " control pairs left after dropping degenerate neighbourhoods");
    }
    std::vector<Correspondence> swapped;
    swapped.reserve(merged.size());
    for (const auto& c : merged) {
      swapped.push_back({c.target, c.source, c.ratio, c.target_index, c.source_index});
    }
    try {
      lwm = fit_lwm(swapped, cfg.lwm_neighbors);
    } catch (const DegenerateNeighborhoodError& e) {
      merged.erase(merged.begin() + static_cast<std::ptrdiff_t>(e.anchor_index()));
      ++diag.dropped_anchors;
    }
  }
  diag.lwm_controls = lwm->controls().size();

  std::vector<double> fit_res;
  fit_res.reserve(merged.size());
  for (const auto& c : merged) fit_res.push_back(distance(lwm->apply(c.target), c.source));
  diag.lwm_residuals = residual_stats(fit_res);

  std::size_t extrapolated = 0;
  Raster warped = warp_lwm(pre.prealigned, *lwm, tw, th, kRgbFill, &extrapolated);
  diag.extrapolated_pixels = extrapolated;

  RegistrationTransform t;
  t.affine = pre.affine;
  t.lwm_inverse = std::move(lwm);
  t.lwm_forward_pairs = std::move(merged);
  t.scale_factor = pre.scale_factor;
  t.source_size = pre.source_size;
  t.target_size = {tw, th};
  return RegistrationResult{std::move(t), std::move(warped), std::move(diag)};
}

RegistrationResult register_images(const Raster& source, const Raster& target,
                                   const PipelineConfig& cfg) {
  Prealignment pre = prealign(source, target, cfg);
  try {
    return refine_nonrigid(pre, cfg);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::config) throw;
    const auto* pe = dynamic_cast<const PipelineError*>(&e);
    Diagnostics diag = pe != nullptr ? pe->diagnostics() : pre.diagnostics;
    diag.degraded = true;
    diag.degraded_reason = e.what();
    diag.warnings.push_back("non-rigid refinement unavailable; returning the affine-only result");
    RegistrationTransform t;
    t.affine = pre.affine;
    t.scale_factor = pre.scale_factor;
    t.source_size = pre.source_size;
    t.target_size = pre.target.size();
    return RegistrationResult{std::move(t), std::move(pre.prealigned), std::move(diag)};
  }
}

}  // namespace stainalign
