#include "stainalign/features.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <tuple>

#include "stainalign/error.hpp"
#include "stainalign/kernels.hpp"

namespace stainalign {

namespace {

constexpr int kMinOctaveSize = 16;
constexpr double kAssumedInputBlur = 0.5;
constexpr int kBorder = 5;
constexpr int kMaxInterpolationSteps = 5;

constexpr int kOrientationBins = 36;
constexpr double kOrientationSigmaFactor = 1.5;
constexpr double kOrientationRadiusFactor = 3.0 * kOrientationSigmaFactor;
constexpr double kOrientationPeakRatio = 0.8;

constexpr int kDescWidth = 4;
constexpr int kDescBins = 8;
constexpr double kDescScaleFactor = 3.0;
constexpr double kDescClamp = 0.2;

constexpr double kTwoPi = 2.0 * std::numbers::pi;

FloatRaster halve(const FloatRaster& img) {
  const int w = (img.width() + 1) / 2;
  const int h = (img.height() + 1) / 2;
  FloatRaster out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) out.at(x, y) = img.at(2 * x, 2 * y);
  }
  return out;
}

FloatRaster subtract(const FloatRaster& a, const FloatRaster& b) {
  FloatRaster out(a.width(), a.height());
  const auto pa = a.data();
  const auto pb = b.data();
  auto po = out.data();
  for (std::size_t i = 0; i < po.size(); ++i) po[i] = pa[i] - pb[i];
  return out;
}

double wrap_angle(double a) {
  a = std::fmod(a, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  if (a >= kTwoPi) a = 0.0;
  return a;
}

// ---- refinement -------------------------------------------------------------

struct Candidate {
  int octave;
  int level;
  int x;
  int y;
};

std::optional<Keypoint> refine(const ScaleSpace& space, const SiftParams& p, Candidate c) {
  const auto& dogs = space.dog[c.octave];
  const int S = space.scales_per_octave;
  const int w = dogs[0].width();
  const int h = dogs[0].height();

  Eigen::Vector3d offset = Eigen::Vector3d::Zero();
  Eigen::Vector3d grad;
  int step = 0;
  for (; step < kMaxInterpolationSteps; ++step) {
    const auto& prev = dogs[c.level - 1];
    const auto& cur = dogs[c.level];
    const auto& next = dogs[c.level + 1];
    const double v = cur.at(c.x, c.y);
    grad << 0.5 * (cur.at(c.x + 1, c.y) - cur.at(c.x - 1, c.y)),
        0.5 * (cur.at(c.x, c.y + 1) - cur.at(c.x, c.y - 1)),
        0.5 * (next.at(c.x, c.y) - prev.at(c.x, c.y));
    const double dxx = cur.at(c.x + 1, c.y) + cur.at(c.x - 1, c.y) - 2.0 * v;
    const double dyy = cur.at(c.x, c.y + 1) + cur.at(c.x, c.y - 1) - 2.0 * v;
    const double dss = next.at(c.x, c.y) + prev.at(c.x, c.y) - 2.0 * v;
    const double dxy = 0.25 * (cur.at(c.x + 1, c.y + 1) - cur.at(c.x - 1, c.y + 1) -
                               cur.at(c.x + 1, c.y - 1) + cur.at(c.x - 1, c.y - 1));
    const double dxs = 0.25 * (next.at(c.x + 1, c.y) - next.at(c.x - 1, c.y) -
                               prev.at(c.x + 1, c.y) + prev.at(c.x - 1, c.y));
    const double dys = 0.25 * (next.at(c.x, c.y + 1) - next.at(c.x, c.y - 1) -
                               prev.at(c.x, c.y + 1) + prev.at(c.x, c.y - 1));
    Eigen::Matrix3d hess;
    hess << dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss;
    const auto lu = hess.fullPivLu();
    if (!lu.isInvertible()) return std::nullopt;
    offset = -lu.solve(grad);

    if (std::abs(offset(0)) < 0.5 && std::abs(offset(1)) < 0.5 && std::abs(offset(2)) < 0.5) {
      break;
    }
    if (!offset.allFinite() || offset.cwiseAbs().maxCoeff() > 1e6) return std::nullopt;
    c.x += static_cast<int>(std::lround(offset(0)));
    c.y += static_cast<int>(std::lround(offset(1)));
    c.level += static_cast<int>(std::lround(offset(2)));
    if (c.level < 1 || c.level > S || c.x < kBorder || c.x >= w - kBorder || c.y < kBorder ||
        c.y >= h - kBorder) {
      return std::nullopt;
    }
  }
  if (step >= kMaxInterpolationSteps) return std::nullopt;

  const auto& cur = dogs[c.level];
  const double contrast = cur.at(c.x, c.y) + 0.5 * grad.dot(offset);
  if (std::abs(contrast) < p.contrast_threshold) return std::nullopt;

  const double v = cur.at(c.x, c.y);
  const double dxx = cur.at(c.x + 1, c.y) + cur.at(c.x - 1, c.y) - 2.0 * v;
  const double dyy = cur.at(c.x, c.y + 1) + cur.at(c.x, c.y - 1) - 2.0 * v;
  const double dxy = 0.25 * (cur.at(c.x + 1, c.y + 1) - cur.at(c.x - 1, c.y + 1) -
                             cur.at(c.x + 1, c.y - 1) + cur.at(c.x - 1, c.y - 1));
  const double tr = dxx + dyy;
  const double det = dxx * dyy - dxy * dxy;
  const double r = p.edge_ratio_threshold;
  if (det <= 0.0 || tr * tr * r >= (r + 1.0) * (r + 1.0) * det) return std::nullopt;

  const double octave_scale = std::ldexp(1.0, c.octave);
  Keypoint kp;
  kp.octave = c.octave;
  kp.layer = c.level + offset(2);
  kp.x = (c.x + offset(0)) * octave_scale;
  kp.y = (c.y + offset(1)) * octave_scale;
  kp.scale = space.effective_sigma(c.octave, kp.layer);
  kp.response = std::abs(contrast);
  return kp;
}

bool is_extremum(const ScaleSpace& space, int o, int s, int x, int y) {
  const auto& dogs = space.dog[o];
  const float v = dogs[s].at(x, y);
  const bool want_max = v > 0.0F;
  for (int ds = -1; ds <= 1; ++ds) {
    const auto& layer = dogs[s + ds];
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (ds == 0 && dy == 0 && dx == 0) continue;
        const float n = layer.at(x + dx, y + dy);
        if (want_max ? !(v > n) : !(v < n)) return false;
      }
    }
  }
  return true;
}

// ---- orientation & descriptor -------------------------------------------------

const FloatRaster& level_image(const ScaleSpace& space, const Keypoint& kp) {
  const int S = space.scales_per_octave;
  const int level = std::clamp(static_cast<int>(std::lround(kp.layer)), 0, S + 2);
  return space.gaussian[static_cast<std::size_t>(kp.octave)][static_cast<std::size_t>(level)];
}

double octave_sigma(const ScaleSpace& space, const Keypoint& kp) {
  return space.base_sigma * std::exp2(kp.layer / space.scales_per_octave);
}

std::vector<double> dominant_orientations(const ScaleSpace& space, const Keypoint& kp) {
  const FloatRaster& img = level_image(space, kp);
  const double octave_scale = std::ldexp(1.0, kp.octave);
  const int cx = static_cast<int>(std::lround(kp.x / octave_scale));
  const int cy = static_cast<int>(std::lround(kp.y / octave_scale));
  const double sigma = kOrientationSigmaFactor * octave_sigma(space, kp);
  const int radius = static_cast<int>(std::lround(kOrientationRadiusFactor * octave_sigma(space, kp)));
  const double expf_scale = -1.0 / (2.0 * sigma * sigma);

  std::array<double, kOrientationBins> hist{};
  for (int i = -radius; i <= radius; ++i) {
    const int y = cy + i;
    if (y <= 0 || y >= img.height() - 1) continue;
    for (int j = -radius; j <= radius; ++j) {
      const int x = cx + j;
      if (x <= 0 || x >= img.width() - 1) continue;
      const double dx = img.at(x + 1, y) - img.at(x - 1, y);
      const double dy = img.at(x, y + 1) - img.at(x, y - 1);
      const double mag = std::sqrt(dx * dx + dy * dy);
      if (mag == 0.0) continue;
      const double weight = std::exp((i * i + j * j) * expf_scale);
      int bin = static_cast<int>(std::lround(wrap_angle(std::atan2(dy, dx)) *
                                             (kOrientationBins / kTwoPi)));
      if (bin >= kOrientationBins) bin -= kOrientationBins;
      hist[static_cast<std::size_t>(bin)] += weight * mag;
    }
  }

  std::array<double, kOrientationBins> smooth{};
  for (int b = 0; b < kOrientationBins; ++b) {
    auto at = [&](int k) { return hist[static_cast<std::size_t>((k + kOrientationBins) % kOrientationBins)]; };
    smooth[static_cast<std::size_t>(b)] =
        (at(b - 2) + at(b + 2)) * (1.0 / 16.0) + (at(b - 1) + at(b + 1)) * (4.0 / 16.0) +
        at(b) * (6.0 / 16.0);
  }
  const double max_value = *std::max_element(smooth.begin(), smooth.end());
  std::vector<double> result;
  if (!(max_value > 0.0)) return result;
  for (int b = 0; b < kOrientationBins; ++b) {
    const double c = smooth[static_cast<std::size_t>(b)];
    const double l = smooth[static_cast<std::size_t>((b + kOrientationBins - 1) % kOrientationBins)];
    const double r = smooth[static_cast<std::size_t>((b + 1) % kOrientationBins)];
    if (c > l && c > r && c >= kOrientationPeakRatio * max_value) {
      const double denom = l - 2.0 * c + r;
      const double shift = denom != 0.0 ? 0.5 * (l - r) / denom : 0.0;
      result.push_back(wrap_angle((b + shift) * (kTwoPi / kOrientationBins)));
    }
  }
  return result;
}

// Rescales to unit norm with no element above kDescClamp, i.e. the fixed
// point of repeated clamp-and-renormalise. Returns false if no such vector
// exists (fewer than 1 / clamp^2 nonzero elements) or the input is flat.
bool normalize_descriptor(std::vector<double>& v) {
  double sq = 0.0;
  for (double e : v) sq += e * e;
  if (!(sq > 0.0)) return false;

  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  // suffix[k] = sum of squares of sorted[k..]
  std::vector<double> suffix(sorted.size() + 1, 0.0);
  for (std::size_t k = sorted.size(); k-- > 0;) suffix[k] = suffix[k + 1] + sorted[k] * sorted[k];

  const double c2 = kDescClamp * kDescClamp;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    // k elements saturate at the clamp; the rest scale by s.
    const double remaining = 1.0 - static_cast<double>(k) * c2;
    if (remaining <= 0.0 || suffix[k] <= 0.0) return false;
    const double s = std::sqrt(remaining / suffix[k]);
    const bool rest_below = s * sorted[k] <= kDescClamp;
    const bool clamped_above = k == 0 || s * sorted[k - 1] >= kDescClamp;
    if (rest_below && clamped_above) {
      for (double& e : v) e = std::min(e * s, kDescClamp);
      return true;
    }
  }
  return false;
}

}  // namespace

void SiftParams::validate() const {
  if (octaves < 0 || scales_per_octave < 1 || !(base_sigma > 0.0) ||
      !(edge_ratio_threshold > 1.0) || !(contrast_threshold >= 0.0) || max_keypoints < 0) {
    throw Error(ErrorCode::config, "invalid SIFT parameters");
  }
}

FeatureSet FeatureSet::subset(std::span<const std::size_t> indices) const {
  FeatureSet out;
  out.keypoints.reserve(indices.size());
  out.descriptors.reserve(indices.size() * kDescriptorSize);
  for (std::size_t i : indices) {
    out.keypoints.push_back(keypoints[i]);
    const auto d = descriptor(i);
    out.descriptors.insert(out.descriptors.end(), d.begin(), d.end());
  }
  return out;
}

double ScaleSpace::effective_sigma(int octave, double level) const {
  return base_sigma * std::exp2(octave + level / scales_per_octave);
}

ScaleSpace build_scale_space(const FloatRaster& img, const SiftParams& p) {
  p.validate();
  if (std::min(img.width(), img.height()) < kMinOctaveSize) {
    throw Error(ErrorCode::insufficient_resolution,
                "image must be at least " + std::to_string(kMinOctaveSize) +
                    " px in each dimension for feature detection");
  }
  int octaves = 1;
  for (int d = std::min(img.width(), img.height()); (d + 1) / 2 >= kMinOctaveSize; d = (d + 1) / 2) {
    ++octaves;
  }
  if (p.octaves > 0) octaves = std::min(octaves, p.octaves);

  ScaleSpace space;
  space.scales_per_octave = p.scales_per_octave;
  space.base_sigma = p.base_sigma;
  const int S = p.scales_per_octave;
  const int levels = S + 3;

  // Incremental blur taking level s-1 to level s (octave-relative sigmas).
  std::vector<double> increments(static_cast<std::size_t>(levels), 0.0);
  for (int s = 1; s < levels; ++s) {
    const double prev = p.base_sigma * std::exp2(static_cast<double>(s - 1) / S);
    const double cur = p.base_sigma * std::exp2(static_cast<double>(s) / S);
    increments[static_cast<std::size_t>(s)] = std::sqrt(cur * cur - prev * prev);
  }

  FloatRaster base(img.width(), img.height());
  {
    const auto src = img.data();
    auto dst = base.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i] * (1.0F / 255.0F);
  }
  const double initial = std::sqrt(std::max(
      p.base_sigma * p.base_sigma - kAssumedInputBlur * kAssumedInputBlur, 0.01));
  base = kernels::gaussian_blur(base, initial);

  for (int o = 0; o < octaves; ++o) {
    std::vector<FloatRaster> gauss;
    gauss.reserve(static_cast<std::size_t>(levels));
    if (o == 0) {
      gauss.push_back(std::move(base));
    } else {
      gauss.push_back(halve(space.gaussian[static_cast<std::size_t>(o - 1)][static_cast<std::size_t>(S)]));
    }
    for (int s = 1; s < levels; ++s) {
      gauss.push_back(kernels::gaussian_blur(gauss.back(), increments[static_cast<std::size_t>(s)]));
    }
    std::vector<FloatRaster> dog;
    dog.reserve(static_cast<std::size_t>(levels - 1));
    for (int s = 0; s + 1 < levels; ++s) {
      dog.push_back(subtract(gauss[static_cast<std::size_t>(s + 1)], gauss[static_cast<std::size_t>(s)]));
    }
    space.gaussian.push_back(std::move(gauss));
    space.dog.push_back(std::move(dog));
  }
  return space;
}

std::vector<Keypoint> detect_keypoints(const ScaleSpace& space, const SiftParams& p) {
  const int S = space.scales_per_octave;
  const float prelim = static_cast<float>(0.5 * p.contrast_threshold);
  std::vector<Keypoint> found;

  for (int o = 0; o < space.octaves(); ++o) {
    const auto& dogs = space.dog[static_cast<std::size_t>(o)];
    const int w = dogs[0].width();
    const int h = dogs[0].height();
    for (int s = 1; s <= S; ++s) {
      const auto& layer = dogs[static_cast<std::size_t>(s)];
      std::vector<std::vector<Keypoint>> rows(static_cast<std::size_t>(std::max(h, 0)));
#pragma omp parallel for schedule(dynamic, 8)
      for (int y = kBorder; y < h - kBorder; ++y) {
        for (int x = kBorder; x < w - kBorder; ++x) {
          if (std::abs(layer.at(x, y)) < prelim) continue;
          if (!is_extremum(space, o, s, x, y)) continue;
          if (auto kp = refine(space, p, Candidate{o, s, x, y})) {
            rows[static_cast<std::size_t>(y)].push_back(*kp);
          }
        }
      }
      for (auto& r : rows) found.insert(found.end(), r.begin(), r.end());
    }
  }
  return found;
}

std::vector<float> describe(const ScaleSpace& space, const Keypoint& kp) {
  const FloatRaster& img = level_image(space, kp);
  const double octave_scale = std::ldexp(1.0, kp.octave);
  const double ox = kp.x / octave_scale;
  const double oy = kp.y / octave_scale;
  const int xi = static_cast<int>(std::lround(ox));
  const int yi = static_cast<int>(std::lround(oy));

  const double hist_width = kDescScaleFactor * octave_sigma(space, kp);
  const int margin =
      static_cast<int>(std::ceil(hist_width * (kDescWidth / 2.0) * std::numbers::sqrt2));
  if (xi - margin < 1 || yi - margin < 1 || xi + margin > img.width() - 2 ||
      yi + margin > img.height() - 2) {
    return {};
  }

  const int radius = static_cast<int>(
      std::lround(hist_width * (kDescWidth + 1) * std::numbers::sqrt2 * 0.5));
  const double cos_t = std::cos(kp.orientation) / hist_width;
  const double sin_t = std::sin(kp.orientation) / hist_width;
  const double bins_per_rad = kDescBins / kTwoPi;
  const double exp_scale = -1.0 / (kDescWidth * kDescWidth * 0.5);

  constexpr int kRows = kDescWidth + 2;
  constexpr int kOri = kDescBins + 2;
  std::array<double, kRows * kRows * kOri> hist{};

  for (int i = -radius; i <= radius; ++i) {
    for (int j = -radius; j <= radius; ++j) {
      // Offset expressed in the keypoint's rotated frame, in histogram-cell units.
      const double c_rot = j * cos_t + i * sin_t;
      const double r_rot = -j * sin_t + i * cos_t;
      const double rbin = r_rot + kDescWidth / 2.0 - 0.5;
      const double cbin = c_rot + kDescWidth / 2.0 - 0.5;
      if (!(rbin > -1.0 && rbin < kDescWidth && cbin > -1.0 && cbin < kDescWidth)) continue;
      const int y = yi + i;
      const int x = xi + j;
      if (y <= 0 || y >= img.height() - 1 || x <= 0 || x >= img.width() - 1) continue;

      const double dx = img.at(x + 1, y) - img.at(x - 1, y);
      const double dy = img.at(x, y + 1) - img.at(x, y - 1);
      const double mag = std::sqrt(dx * dx + dy * dy);
      if (mag == 0.0) continue;
      const double ori = wrap_angle(std::atan2(dy, dx) - kp.orientation);
      const double weight = std::exp((c_rot * c_rot + r_rot * r_rot) * exp_scale);
      const double obin = ori * bins_per_rad;

      const int r0 = static_cast<int>(std::floor(rbin));
      const int c0 = static_cast<int>(std::floor(cbin));
      int o0 = static_cast<int>(std::floor(obin));
      const double fr = rbin - r0;
      const double fc = cbin - c0;
      const double fo = obin - o0;
      if (o0 < 0) o0 += kDescBins;
      if (o0 >= kDescBins) o0 -= kDescBins;

      const double v = mag * weight;
      const double v_r1 = v * fr;
      const double v_r0 = v - v_r1;
      const double v_rc11 = v_r1 * fc;
      const double v_rc10 = v_r1 - v_rc11;
      const double v_rc01 = v_r0 * fc;
      const double v_rc00 = v_r0 - v_rc01;
      const double v_rco111 = v_rc11 * fo;
      const double v_rco110 = v_rc11 - v_rco111;
      const double v_rco101 = v_rc10 * fo;
      const double v_rco100 = v_rc10 - v_rco101;
      const double v_rco011 = v_rc01 * fo;
      const double v_rco010 = v_rc01 - v_rco011;
      const double v_rco001 = v_rc00 * fo;
      const double v_rco000 = v_rc00 - v_rco001;

      const int idx = ((r0 + 1) * kRows + c0 + 1) * kOri + o0;
      hist[static_cast<std::size_t>(idx)] += v_rco000;
      hist[static_cast<std::size_t>(idx + 1)] += v_rco001;
      hist[static_cast<std::size_t>(idx + kOri)] += v_rco010;
      hist[static_cast<std::size_t>(idx + kOri + 1)] += v_rco011;
      hist[static_cast<std::size_t>(idx + kRows * kOri)] += v_rco100;
      hist[static_cast<std::size_t>(idx + kRows * kOri + 1)] += v_rco101;
      hist[static_cast<std::size_t>(idx + (kRows + 1) * kOri)] += v_rco110;
      hist[static_cast<std::size_t>(idx + (kRows + 1) * kOri + 1)] += v_rco111;
    }
  }

  std::vector<double> desc(kDescriptorSize);
  for (int r = 0; r < kDescWidth; ++r) {
    for (int c = 0; c < kDescWidth; ++c) {
      const int idx = ((r + 1) * kRows + (c + 1)) * kOri;
      hist[static_cast<std::size_t>(idx)] += hist[static_cast<std::size_t>(idx + kDescBins)];
      hist[static_cast<std::size_t>(idx + 1)] += hist[static_cast<std::size_t>(idx + kDescBins + 1)];
      for (int k = 0; k < kDescBins; ++k) {
        desc[static_cast<std::size_t>((r * kDescWidth + c) * kDescBins + k)] =
            hist[static_cast<std::size_t>(idx + k)];
      }
    }
  }
  if (!normalize_descriptor(desc)) return {};
  return std::vector<float>(desc.begin(), desc.end());
}

FeatureSet compute_descriptors(const ScaleSpace& space, std::span<const Keypoint> keypoints) {
  const auto n = static_cast<std::ptrdiff_t>(keypoints.size());
  std::vector<std::vector<std::pair<Keypoint, std::vector<float>>>> per_kp(keypoints.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const Keypoint& base = keypoints[static_cast<std::size_t>(i)];
    for (double ori : dominant_orientations(space, base)) {
      Keypoint kp = base;
      kp.orientation = ori;
      auto d = describe(space, kp);
      if (!d.empty()) per_kp[static_cast<std::size_t>(i)].emplace_back(kp, std::move(d));
    }
  }
  FeatureSet out;
  for (auto& list : per_kp) {
    for (auto& [kp, d] : list) {
      out.keypoints.push_back(kp);
      out.descriptors.insert(out.descriptors.end(), d.begin(), d.end());
    }
  }
  return out;
}

FeatureSet detect_and_describe(const FloatRaster& img, const SiftParams& p) {
  const ScaleSpace space = build_scale_space(img, p);
  const auto keypoints = detect_keypoints(space, p);
  FeatureSet described = compute_descriptors(space, keypoints);

  std::vector<std::size_t> order(described.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto& kps = described.keypoints;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Keypoint& ka = kps[a];
    const Keypoint& kb = kps[b];
    if (ka.response != kb.response) return ka.response > kb.response;
    return std::tie(ka.y, ka.x, ka.scale, ka.orientation, a) <
           std::tie(kb.y, kb.x, kb.scale, kb.orientation, b);
  });
  if (p.max_keypoints > 0 && order.size() > static_cast<std::size_t>(p.max_keypoints)) {
    order.resize(static_cast<std::size_t>(p.max_keypoints));
  }
  return described.subset(order);
}

}  // namespace stainalign
