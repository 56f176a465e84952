#include "stainalign/matching.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <string>

#include "stainalign/error.hpp"
#include "stainalign/kernels.hpp"

namespace stainalign {

namespace {

constexpr double kMinDeterminant = 1e-6;
// Seeds taken into the minimal-subset sweep; C(24, 3) = 2024 hypotheses.
constexpr std::size_t kMaxSweepSeeds = 24;

struct Normalizer {
  double cx = 0.0;
  double cy = 0.0;
  double scale = 1.0;

  Eigen::Vector2d apply(Point2 p) const { return {(p.x - cx) * scale, (p.y - cy) * scale}; }
};

template <class Get>
Normalizer make_normalizer(std::span<const Correspondence> m, Get&& get) {
  Normalizer n;
  for (const auto& c : m) {
    n.cx += get(c).x;
    n.cy += get(c).y;
  }
  n.cx /= static_cast<double>(m.size());
  n.cy /= static_cast<double>(m.size());
  double mean_dist = 0.0;
  for (const auto& c : m) mean_dist += std::hypot(get(c).x - n.cx, get(c).y - n.cy);
  mean_dist /= static_cast<double>(m.size());
  n.scale = mean_dist > 0.0 ? std::numbers::sqrt2 / mean_dist : 1.0;
  return n;
}

std::vector<std::size_t> select_inliers(std::span<const Correspondence> tentative,
                                        const AffineModel& m, double tolerance) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tentative.size(); ++i) {
    if (affine_residual(m, tentative[i]) <= tolerance) out.push_back(i);
  }
  return out;
}

std::vector<Correspondence> gather(std::span<const Correspondence> all,
                                   std::span<const std::size_t> idx) {
  std::vector<Correspondence> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

// Exact fit through three pairs, or nullopt when the source triangle is degenerate.
std::optional<AffineModel> affine_from_three(const Correspondence& p, const Correspondence& q,
                                             const Correspondence& r) {
  const double ux = q.source.x - p.source.x;
  const double uy = q.source.y - p.source.y;
  const double vx = r.source.x - p.source.x;
  const double vy = r.source.y - p.source.y;
  const double det = ux * vy - uy * vx;
  const double scale = std::max({ux * ux + uy * uy, vx * vx + vy * vy, 1e-300});
  if (std::abs(det) < 1e-9 * scale) return std::nullopt;
  const double ax = q.target.x - p.target.x;
  const double ay = q.target.y - p.target.y;
  const double bx = r.target.x - p.target.x;
  const double by = r.target.y - p.target.y;
  // [a b] = L [u v]  =>  L = [a b] [u v]^-1
  AffineModel m;
  m.a11 = (ax * vy - bx * uy) / det;
  m.a12 = (bx * ux - ax * vx) / det;
  m.a21 = (ay * vy - by * uy) / det;
  m.a22 = (by * ux - ay * vx) / det;
  m.tx = p.target.x - (m.a11 * p.source.x + m.a12 * p.source.y);
  m.ty = p.target.y - (m.a21 * p.source.x + m.a22 * p.source.y);
  if (!(std::abs(m.determinant()) > kMinDeterminant)) return std::nullopt;
  return m;
}

void require_valid_model(const AffineModel& m) {
  if (!(std::abs(m.determinant()) > kMinDeterminant) || !std::isfinite(m.tx) ||
      !std::isfinite(m.ty)) {
    throw Error(ErrorCode::degenerate_configuration, "consensus model is degenerate (|det| <= 1e-6)");
  }
}

ConsensusResult expand(std::span<const Correspondence> tentative, const FscParams& p,
                       AffineModel model) {
  std::vector<std::size_t> current = select_inliers(tentative, model, p.inlier_tolerance);
  ConsensusResult result;
  while (result.iterations < p.max_iterations) {
    ++result.iterations;
    if (current.size() < 3) break;
    const auto subset = gather(tentative, current);
    const AffineModel refit = estimate_affine_lsq(subset);
    auto next = select_inliers(tentative, refit, p.inlier_tolerance);
    model = refit;
    if (next == current) {
      result.converged = true;
      break;
    }
    current = std::move(next);
  }
  if (current.size() < static_cast<std::size_t>(p.min_inliers)) {
    throw Error(ErrorCode::consensus_failure,
                "consensus found " + std::to_string(current.size()) + " inliers, need " +
                    std::to_string(p.min_inliers));
  }
  require_valid_model(model);
  result.model = model;
  result.inliers = gather(tentative, current);
  result.inlier_indices = std::move(current);
  return result;
}

}  // namespace

void FscParams::validate() const {
  if (!(strict_ratio <= loose_ratio) || !(inlier_tolerance > 0.0) || min_inliers < 3 ||
      max_iterations < 1) {
    throw Error(ErrorCode::config,
                "FSC parameters must satisfy strict_ratio <= loose_ratio, inlier_tolerance > 0, "
                "min_inliers >= 3, max_iterations >= 1");
  }
}

std::vector<Correspondence> match_descriptors(const FeatureSet& a, const FeatureSet& b,
                                              double ratio_threshold) {
  if (a.empty() || b.empty()) return {};
  const auto nn = kernels::nearest_two(a.descriptors, b.descriptors, kDescriptorSize);

  // target index -> (ratio, source index) of the winning claim
  std::map<int, std::pair<double, int>> claims;
  for (std::size_t q = 0; q < nn.size(); ++q) {
    const auto& r = nn[q];
    if (r.best < 0 || r.second < 0) continue;
    double ratio = 1.0;
    if (r.second_d2 > 0.0F) ratio = std::sqrt(static_cast<double>(r.best_d2) / r.second_d2);
    if (!(ratio <= ratio_threshold)) continue;
    auto [it, inserted] = claims.try_emplace(r.best, ratio, static_cast<int>(q));
    if (!inserted && ratio < it->second.first) it->second = {ratio, static_cast<int>(q)};
  }

  std::vector<Correspondence> out;
  out.reserve(claims.size());
  for (const auto& [target, claim] : claims) {
    const auto& ks = a.keypoints[static_cast<std::size_t>(claim.second)];
    const auto& kt = b.keypoints[static_cast<std::size_t>(target)];
    out.push_back({{ks.x, ks.y}, {kt.x, kt.y}, std::clamp(claim.first, 0.0, 1.0), claim.second,
                   target});
  }
  std::sort(out.begin(), out.end(),
            [](const Correspondence& l, const Correspondence& r) { return l.source_index < r.source_index; });
  return out;
}

AffineModel estimate_affine_lsq(std::span<const Correspondence> matches) {
  if (matches.size() < 3) {
    throw Error(ErrorCode::insufficient_correspondences,
                "affine fit needs at least 3 correspondences, got " + std::to_string(matches.size()));
  }
  const Normalizer ns = make_normalizer(matches, [](const Correspondence& c) { return c.source; });
  const Normalizer nt = make_normalizer(matches, [](const Correspondence& c) { return c.target; });

  const auto n = static_cast<Eigen::Index>(matches.size());
  Eigen::MatrixXd design(n, 3);
  Eigen::MatrixXd rhs(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& c = matches[static_cast<std::size_t>(i)];
    const Eigen::Vector2d s = ns.apply(c.source);
    const Eigen::Vector2d t = nt.apply(c.target);
    design(i, 0) = s.x();
    design(i, 1) = s.y();
    design(i, 2) = 1.0;
    rhs(i, 0) = t.x();
    rhs(i, 1) = t.y();
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (!(sv(2) > 1e-10 * sv(0))) {
    throw Error(ErrorCode::degenerate_configuration, "source points are collinear");
  }
  const Eigen::MatrixXd sol = svd.solve(rhs);  // 3 x 2: rows = [x, y, 1] coefficients

  // Undo the normalisations: t = ct + (B * ss * (p - cs) + b) / st.
  const double k = ns.scale / nt.scale;
  AffineModel m;
  m.a11 = sol(0, 0) * k;
  m.a12 = sol(1, 0) * k;
  m.a21 = sol(0, 1) * k;
  m.a22 = sol(1, 1) * k;
  m.tx = nt.cx + sol(2, 0) / nt.scale - (m.a11 * ns.cx + m.a12 * ns.cy);
  m.ty = nt.cy + sol(2, 1) / nt.scale - (m.a21 * ns.cx + m.a22 * ns.cy);
  return m;
}

double affine_residual(const AffineModel& m, const Correspondence& c) {
  const Point2 mapped = m.apply(c.source);
  return std::hypot(mapped.x - c.target.x, mapped.y - c.target.y);
}

ConsensusResult fsc_filter(std::span<const Correspondence> tentative, const FscParams& p) {
  p.validate();
  if (tentative.size() < static_cast<std::size_t>(std::max(p.min_inliers, 3))) {
    throw Error(ErrorCode::consensus_failure,
                "only " + std::to_string(tentative.size()) + " tentative matches, need " +
                    std::to_string(p.min_inliers));
  }

  std::vector<std::size_t> by_ratio(tentative.size());
  std::iota(by_ratio.begin(), by_ratio.end(), std::size_t{0});
  std::stable_sort(by_ratio.begin(), by_ratio.end(), [&](std::size_t a, std::size_t b) {
    return tentative[a].ratio < tentative[b].ratio;
  });
  std::vector<std::size_t> seeds;
  for (std::size_t i : by_ratio) {
    if (tentative[i].ratio <= p.strict_ratio) seeds.push_back(i);
  }
  if (seeds.size() < 3) seeds.assign(by_ratio.begin(), by_ratio.begin() + 3);

  const std::size_t k = std::min(seeds.size(), kMaxSweepSeeds);
  std::optional<AffineModel> best;
  std::size_t best_support = 0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      for (std::size_t l = j + 1; l < k; ++l) {
        const auto hyp = affine_from_three(tentative[seeds[i]], tentative[seeds[j]],
                                           tentative[seeds[l]]);
        if (!hyp) continue;
        std::size_t support = 0;
        for (const auto& c : tentative) {
          if (affine_residual(*hyp, c) <= p.inlier_tolerance) ++support;
        }
        if (!best || support > best_support) {
          best = hyp;
          best_support = support;
        }
      }
    }
  }
  if (!best) {
    throw Error(ErrorCode::degenerate_configuration, "all seed triples are collinear");
  }

  std::vector<Correspondence> seed_consensus;
  for (std::size_t i : seeds) {
    if (affine_residual(*best, tentative[i]) <= p.inlier_tolerance) {
      seed_consensus.push_back(tentative[i]);
    }
  }
  AffineModel start = *best;
  if (seed_consensus.size() >= 3) {
    try {
      start = estimate_affine_lsq(seed_consensus);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::degenerate_configuration) throw;
    }
  }
  return expand(tentative, p, start);
}

ConsensusResult fsc_filter(std::span<const Correspondence> tentative, const FscParams& p,
                           const AffineModel& initial) {
  p.validate();
  if (tentative.size() < static_cast<std::size_t>(p.min_inliers)) {
    throw Error(ErrorCode::consensus_failure,
                "only " + std::to_string(tentative.size()) + " tentative matches, need " +
                    std::to_string(p.min_inliers));
  }
  return expand(tentative, p, initial);
}

ConsensusResult ransac_filter(std::span<const Correspondence> tentative, double tolerance,
                              int iterations, std::uint64_t seed, int min_inliers) {
  if (tentative.size() < 3) {
    throw Error(ErrorCode::consensus_failure, "RANSAC needs at least 3 tentative matches");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, tentative.size() - 1);
  std::vector<std::size_t> best;
  for (int it = 0; it < iterations; ++it) {
    const std::size_t a = pick(rng);
    std::size_t b = pick(rng);
    std::size_t c = pick(rng);
    if (a == b || a == c || b == c) continue;
    const auto hyp = affine_from_three(tentative[a], tentative[b], tentative[c]);
    if (!hyp) continue;
    auto support = select_inliers(tentative, *hyp, tolerance);
    if (support.size() > best.size()) best = std::move(support);
  }
  if (best.size() < 3) {
    throw Error(ErrorCode::consensus_failure, "RANSAC found no non-degenerate hypothesis");
  }
  const auto subset = gather(tentative, best);
  const AffineModel model = estimate_affine_lsq(subset);
  auto inliers = select_inliers(tentative, model, tolerance);
  if (inliers.size() < static_cast<std::size_t>(std::max(min_inliers, 3))) {
    throw Error(ErrorCode::consensus_failure,
                "RANSAC consensus has " + std::to_string(inliers.size()) + " inliers");
  }
  require_valid_model(model);
  ConsensusResult result;
  result.model = model;
  result.inliers = gather(tentative, inliers);
  result.inlier_indices = std::move(inliers);
  result.iterations = iterations;
  result.converged = true;
  return result;
}

}  // namespace stainalign
