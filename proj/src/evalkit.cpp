#include "stainalign/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <random>
#include <sstream>

#include "stainalign/error.hpp"
#include "stainalign/geometry.hpp"
#include "stainalign/kernels.hpp"

namespace stainalign {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool parse_row(const std::string& line, std::array<double, 4>& out) {
  std::string s = line;
  std::replace(s.begin(), s.end(), ';', ',');
  std::istringstream in(s);
  std::string field;
  int n = 0;
  while (std::getline(in, field, ',')) {
    if (n >= 4) return false;
    const char* begin = field.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end == begin) return false;
    while (*end == ' ' || *end == '\t' || *end == '\r') ++end;
    if (*end != '\0' || !std::isfinite(v)) return false;
    out[static_cast<std::size_t>(n++)] = v;
  }
  return n == 4;
}

}  // namespace

double jaccard(const BinaryMask& a, const BinaryMask& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::shape, "jaccard: masks are " + std::to_string(a.width()) + "x" +
                                      std::to_string(a.height()) + " and " +
                                      std::to_string(b.width()) + "x" + std::to_string(b.height()));
  }
  const auto ab = a.bits();
  const auto bb = b.bits();
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < ab.size(); ++i) {
    inter += static_cast<std::size_t>(ab[i] & bb[i]);
    uni += static_cast<std::size_t>(ab[i] | bb[i]);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

LandmarkStats landmark_error(const std::function<Point2(Point2)>& map,
                             std::span<const Correspondence> pairs) {
  if (pairs.empty()) throw Error(ErrorCode::invalid_argument, "landmark_error needs at least one pair");
  LandmarkStats s;
  double sq = 0.0;
  for (const auto& c : pairs) {
    const double d = distance(map(c.source), c.target);
    s.mean += d;
    sq += d * d;
    s.max = std::max(s.max, d);
  }
  const auto n = static_cast<double>(pairs.size());
  s.mean /= n;
  s.rmse = std::sqrt(sq / n);
  return s;
}

std::vector<Correspondence> parse_landmarks_csv(const std::string& text) {
  std::vector<Correspondence> out;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    std::array<double, 4> v{};
    if (!parse_row(line, v)) {
      char* end = nullptr;
      (void)std::strtod(line.c_str() + start, &end);
      if (first && end == line.c_str() + start) {
        first = false;
        continue;  // header
      }
      throw Error(ErrorCode::invalid_argument,
                  "landmark CSV line " + std::to_string(line_no) + " is not x_src,y_src,x_tgt,y_tgt");
    }
    first = false;
    out.push_back({{v[0], v[1]}, {v[2], v[3]}, 0.0, -1, -1});
  }
  return out;
}

void SynthSpec::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw Error(ErrorCode::invalid_argument, "synth spec: scale must be positive");
  }
  if (!std::isfinite(rotation) || !std::isfinite(translation.x) || !std::isfinite(translation.y)) {
    throw Error(ErrorCode::invalid_argument, "synth spec: non-finite rotation or translation");
  }
  if (!(deform_amplitude >= 0.0) || !std::isfinite(deform_amplitude)) {
    throw Error(ErrorCode::invalid_argument, "synth spec: deform_amplitude must be >= 0");
  }
  if (!(deform_wavelength > 2.0 * deform_amplitude) || !std::isfinite(deform_wavelength)) {
    throw Error(ErrorCode::invalid_argument,
                "synth spec: deform_wavelength must exceed twice deform_amplitude");
  }
}

Point2 GroundTruth::displacement(Point2 p) const {
  const double k = kTwoPi / wavelength;
  return {amplitude * std::sin(k * p.y + phase_x), amplitude * std::sin(k * p.x + phase_y)};
}

Point2 GroundTruth::map(Point2 target) const { return affine.apply(target + displacement(target)); }

Point2 GroundTruth::inverse(Point2 source) const {
  const Point2 w = affine_invert(affine).apply(source);
  Point2 p = w;
  const double k = kTwoPi / wavelength;
  for (int it = 0; it < 30; ++it) {
    const Point2 d = displacement(p);
    const double fx = p.x + d.x - w.x;
    const double fy = p.y + d.y - w.y;
    if (std::abs(fx) + std::abs(fy) < 1e-12) break;
    // Jacobian of p + d(p) is [[1, a], [b, 1]].
    const double a = amplitude * k * std::cos(k * p.y + phase_x);
    const double b = amplitude * k * std::cos(k * p.x + phase_y);
    const double det = 1.0 - a * b;
    p.x -= (fx - a * fy) / det;
    p.y -= (fy - b * fx) / det;
  }
  return p;
}

GroundTruth make_ground_truth(const SynthSpec& spec, Size size) {
  spec.validate();
  const double cx = (size.width - 1) / 2.0;
  const double cy = (size.height - 1) / 2.0;
  const double c = std::cos(spec.rotation) * spec.scale;
  const double s = std::sin(spec.rotation) * spec.scale;
  GroundTruth t;
  t.affine.a11 = c;
  t.affine.a12 = -s;
  t.affine.a21 = s;
  t.affine.a22 = c;
  t.affine.tx = cx - (c * cx - s * cy) + spec.translation.x;
  t.affine.ty = cy - (s * cx + c * cy) + spec.translation.y;
  t.amplitude = spec.deform_amplitude;
  t.wavelength = spec.deform_wavelength;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  t.phase_x = phase(rng);
  t.phase_y = phase(rng);
  return t;
}

SynthPair synth_pair(const Raster& base, const SynthSpec& spec) {
  const GroundTruth truth = make_ground_truth(spec, base.size());
  const int w = base.width();
  const int h = base.height();

  const BinaryMask tissue = tissue_mask(base, PreprocessConfig{});
  const bool any_tissue = tissue.count() > 0;
  std::size_t total = 0;
  std::size_t inside = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (any_tissue && !tissue.at(x, y)) continue;
      ++total;
      const Point2 q = truth.map({static_cast<double>(x), static_cast<double>(y)});
      if (q.x >= 0.0 && q.y >= 0.0 && q.x <= w - 1 && q.y <= h - 1) ++inside;
    }
  }
  if (10 * inside < 7 * total) {
    throw Error(ErrorCode::invalid_argument,
                "synth spec moves more than 30% of the tissue out of frame");
  }

  Raster source = kernels::remap_bilinear(
      base, base.size(), [&truth](double u, double v, bool&) { return truth.inverse({u, v}); },
      std::uint8_t{255});
  if (spec.recolor) {
    if (source.channels() != 3) {
      throw Error(ErrorCode::invalid_channel, "recolouring needs a 3-channel base image");
    }
    source = recompose(color_deconvolve(source, spec.recolor->first), spec.recolor->second);
  }
  return SynthPair{std::move(source), base, truth, truth.affine};
}

Raster make_tissue_phantom(int size, std::uint64_t seed) {
  if (size < 64) throw Error(ErrorCode::invalid_argument, "phantom size must be at least 64");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const double n = size;
  const double c = (n - 1.0) / 2.0;
  const double r0 = 0.34 * n;

  struct Harmonic {
    int k;
    double amp;
    double phase;
  };
  std::vector<Harmonic> outline;
  for (int k = 2; k <= 6; ++k) outline.push_back({k, uniform(0.0, 0.12) / k, uniform(0.0, kTwoPi)});
  auto boundary = [&](double theta) {
    double r = 1.0;
    for (const auto& hm : outline) r += hm.amp * std::sin(hm.k * theta + hm.phase);
    return r0 * r;
  };

  struct Ellipse {
    double x, y, a, b, cos_t, sin_t, value;
    bool contains(double px, double py, double grow = 1.0) const {
      const double dx = px - x;
      const double dy = py - y;
      const double u = (dx * cos_t + dy * sin_t) / (a * grow);
      const double v = (-dx * sin_t + dy * cos_t) / (b * grow);
      return u * u + v * v <= 1.0;
    }
  };
  auto make_ellipse = [&](double x, double y, double radius, double value) {
    const double t = uniform(0.0, std::numbers::pi);
    return Ellipse{x, y, radius, radius * uniform(0.6, 1.0), std::cos(t), std::sin(t), value};
  };

  std::vector<Ellipse> lumens;
  const int lumen_count = 8 + static_cast<int>(rng() % 5);
  for (int i = 0; i < lumen_count; ++i) {
    const double rho = r0 * std::sqrt(uniform(0.0, 1.0)) * 0.75;
    const double phi = uniform(0.0, kTwoPi);
    lumens.push_back(make_ellipse(c + rho * std::cos(phi), c + rho * std::sin(phi),
                                  uniform(0.025, 0.06) * n, 0.0));
  }
  auto in_tissue = [&](double x, double y) {
    const double dx = x - c;
    const double dy = y - c;
    if (std::hypot(dx, dy) > boundary(std::atan2(dy, dx))) return false;
    for (const auto& l : lumens) {
      if (l.contains(x, y)) return false;
    }
    return true;
  };

  // Smooth eosin variation from a coarse random lattice.
  constexpr int kLattice = 12;
  std::vector<double> lattice(kLattice * kLattice);
  for (auto& v : lattice) v = unit(rng);
  auto eosin_field = [&](double x, double y) {
    const double gx = x / (n - 1.0) * (kLattice - 1);
    const double gy = y / (n - 1.0) * (kLattice - 1);
    const int ix = std::min(static_cast<int>(gx), kLattice - 2);
    const int iy = std::min(static_cast<int>(gy), kLattice - 2);
    const double fx = gx - ix;
    const double fy = gy - iy;
    const auto at = [&](int i, int j) { return lattice[static_cast<std::size_t>(j * kLattice + i)]; };
    const double top = at(ix, iy) + fx * (at(ix + 1, iy) - at(ix, iy));
    const double bottom = at(ix, iy + 1) + fx * (at(ix + 1, iy + 1) - at(ix, iy + 1));
    return top + fy * (bottom - top);
  };

  FloatRaster dh(size, size, 0.0F);
  FloatRaster de(size, size, 0.0F);
  double area = 0.0;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (!in_tissue(x, y)) continue;
      area += 1.0;
      de.at(x, y) = static_cast<float>(0.18 + 0.30 * eosin_field(x, y));
      dh.at(x, y) = 0.06F;
    }
  }

  const auto nuclei = static_cast<int>(area / 400.0);
  for (int placed = 0, tries = 0; placed < nuclei && tries < 50 * nuclei + 100; ++tries) {
    const double x = uniform(0.0, n - 1.0);
    const double y = uniform(0.0, n - 1.0);
    if (!in_tissue(x, y)) continue;
    ++placed;
    const Ellipse e = make_ellipse(x, y, uniform(2.5, 5.5), uniform(0.5, 1.0));
    const int x0 = std::max(0, static_cast<int>(std::floor(x - e.a - 1)));
    const int x1 = std::min(size - 1, static_cast<int>(std::ceil(x + e.a + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(y - e.a - 1)));
    const int y1 = std::min(size - 1, static_cast<int>(std::ceil(y + e.a + 1)));
    for (int yy = y0; yy <= y1; ++yy) {
      for (int xx = x0; xx <= x1; ++xx) {
        if (e.contains(xx, yy)) dh.at(xx, yy) = std::max(dh.at(xx, yy), static_cast<float>(e.value));
      }
    }
  }

  dh = kernels::gaussian_blur(dh, 1.0);
  de = kernels::gaussian_blur(de, 1.0);
  const StainMatrix he = StainMatrix::preset("h_e");
  const auto& rows = he.rows();
  Raster out(size, size, 3);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        const double od = dh.at(x, y) * rows[0][ch] + de.at(x, y) * rows[1][ch];
        out.at(x, y, ch) = kernels::detail::to_u8(255.0 * std::pow(10.0, -od));
      }
    }
  }
  return out;
}

BinaryMask warp_mask(const RegistrationTransform& transform, const BinaryMask& source_mask,
                     Size target_size, std::size_t* extrapolated) {
  const AffineModel inv = affine_invert(transform.affine);
  const LwmModel* lwm = transform.lwm_inverse ? &*transform.lwm_inverse : nullptr;
  return kernels::remap_nearest(
      source_mask, target_size,
      [&](double u, double v, bool& flag) {
        const Point2 q = lwm != nullptr ? lwm->apply({u, v}, &flag) : Point2{u, v};
        return inv.apply(q);
      },
      extrapolated);
}

Metrics evaluate(const RegistrationTransform& transform, const BinaryMask& source_mask,
                 const BinaryMask& target_mask, const EvaluationInputs& extra) {
  if (target_mask.size() != transform.target_size || source_mask.size() != transform.source_size) {
    throw Error(ErrorCode::shape, "evaluate: masks do not match the working image sizes");
  }
  Metrics m;
  std::size_t extrapolated = 0;
  const BinaryMask warped = warp_mask(transform, source_mask, target_mask.size(), &extrapolated);
  m.jaccard = jaccard(warped, target_mask);
  if (warped.count() == 0 && target_mask.count() == 0) {
    m.note = "both masks empty; jaccard defined as 1";
  }
  const double pixels = static_cast<double>(target_mask.width()) * target_mask.height();
  m.extrapolated_fraction = static_cast<double>(extrapolated) / pixels;

  if (extra.truth && transform.lwm_inverse && !transform.lwm_forward_pairs.empty()) {
    double sq = 0.0;
    for (const auto& c : transform.lwm_forward_pairs) {
      const Point2 est = transform.target_to_source(c.target);
      const Point2 truth = extra.truth(c.target);
      const double d = distance(est, truth);
      sq += d * d;
    }
    m.control_rmse = std::sqrt(sq / static_cast<double>(transform.lwm_forward_pairs.size()));
  }

  if (!extra.landmarks.empty()) {
    std::optional<LwmModel> forward;
    if (transform.lwm_inverse) {
      try {
        forward = fit_lwm(transform.lwm_forward_pairs, transform.lwm_inverse->n_neighbors());
      } catch (const Error&) {
        forward.reset();
      }
    }
    const AffineModel affine = transform.affine;
    const auto map = [&](Point2 s) {
      const Point2 q = affine.apply(s);
      return forward ? forward->apply(q) : q;
    };
    const LandmarkStats ls = landmark_error(map, extra.landmarks);
    m.landmark_mean_error = ls.mean;
    m.landmark_rmse = ls.rmse;
    m.landmark_max_error = ls.max;
  }
  return m;
}

std::string metrics_csv_header() { return "pair_id,jaccard,rmse,extrapolated_fraction"; }

std::string metrics_csv_row(const std::string& pair_id, const Metrics& m) {
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
  };
  return pair_id + "," + num(m.jaccard) + "," + (m.control_rmse ? num(*m.control_rmse) : "") +
         "," + num(m.extrapolated_fraction);
}

}  // namespace stainalign
