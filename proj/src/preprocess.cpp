#include "stainalign/preprocess.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "stainalign/error.hpp"

namespace stainalign {

namespace {

using Vec3 = std::array<double, 3>;

Vec3 normalized(const Vec3& v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (!(n > 0.0)) throw Error(ErrorCode::degenerate_stain, "stain vector has zero length");
  return {v[0] / n, v[1] / n, v[2] / n};
}

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

constexpr Vec3 kHematoxylin{0.650, 0.704, 0.286};
constexpr Vec3 kEosin{0.072, 0.990, 0.105};
constexpr Vec3 kDab{0.268, 0.570, 0.776};

Eigen::Matrix3d to_eigen(const StainMatrix::Rows& rows) {
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m(r, c) = rows[r][c];
  }
  return m;
}

// Optical density per 8-bit intensity, with the intensity floored at 1.
const std::array<double, 256>& od_table() {
  static const std::array<double, 256> table = [] {
    std::array<double, 256> t{};
    for (int i = 0; i < 256; ++i) t[i] = -std::log10(std::max(i, 1) / 255.0);
    return t;
  }();
  return table;
}

}  // namespace

StainMatrix StainMatrix::from_rows(const Rows& rows) {
  StainMatrix m;
  for (int r = 0; r < 3; ++r) m.rows_[r] = normalized(rows[r]);
  const Eigen::Matrix3d e = to_eigen(m.rows_);
  const double det = e.determinant();
  if (!(std::abs(det) > 1e-9)) {
    throw Error(ErrorCode::degenerate_stain, "stain matrix is singular");
  }
  const Eigen::Matrix3d inv = e.inverse();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m.inverse_[r][c] = inv(r, c);
  }
  return m;
}

StainMatrix StainMatrix::preset(std::string_view name) {
  const Vec3 h = normalized(kHematoxylin);
  if (name == "h_e") {
    const Vec3 e = normalized(kEosin);
    return from_rows({h, e, normalized(cross(h, e))});
  }
  if (name == "h_dab") {
    const Vec3 d = normalized(kDab);
    return from_rows({h, d, normalized(cross(h, d))});
  }
  if (name == "h_e_dab") return from_rows({h, normalized(kEosin), normalized(kDab)});
  throw Error(ErrorCode::invalid_argument, "unknown stain preset '" + std::string(name) + "'");
}

double StainMatrix::determinant() const noexcept { return to_eigen(rows_).determinant(); }

void PreprocessConfig::validate() const {
  if (!(low_percentile >= 0.0 && low_percentile < 1.0) ||
      !(high_percentile > 0.0 && high_percentile <= 1.0) || !(low_percentile < high_percentile)) {
    throw Error(ErrorCode::config, "percentiles must satisfy 0 <= low < high <= 1");
  }
  if (deconvolution_channel < 0 || deconvolution_channel > 2) {
    throw Error(ErrorCode::config, "deconvolution_channel must be 0, 1 or 2");
  }
}

double percentile(const FloatRaster& img, double p) {
  std::vector<float> values(img.data().begin(), img.data().end());
  const double pos = std::clamp(p, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  std::nth_element(values.begin(), values.begin() + lo, values.end());
  const double v_lo = values[lo];
  if (lo + 1 >= values.size() || pos == static_cast<double>(lo)) return v_lo;
  // The next order statistic is the minimum of the upper partition.
  const double v_hi = *std::min_element(values.begin() + lo + 1, values.end());
  return v_lo + (pos - lo) * (v_hi - v_lo);
}

FloatRaster enhance_contrast(const FloatRaster& img, double low_percentile,
                             double high_percentile) {
  const double lo = percentile(img, low_percentile);
  const double hi = percentile(img, high_percentile);
  if (!(hi - lo > 1e-9 * std::max(1.0, std::abs(hi)))) return img;
  const double gain = 255.0 / (hi - lo);
  FloatRaster out(img.width(), img.height());
  const auto src = img.data();
  auto dst = out.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(src.size()); ++i) {
    dst[i] = static_cast<float>(std::clamp((src[i] - lo) * gain, 0.0, 255.0));
  }
  return out;
}

StainDensities color_deconvolve(const Raster& img, const StainMatrix& m) {
  if (img.channels() != 3) {
    throw Error(ErrorCode::invalid_channel, "color_deconvolve expects a 3-channel raster");
  }
  if (!(std::abs(m.determinant()) > 1e-9)) {
    throw Error(ErrorCode::degenerate_stain, "stain matrix is singular");
  }
  const auto& od = od_table();
  const auto& inv = m.inverse();
  StainDensities out{FloatRaster(img.width(), img.height()),
                     FloatRaster(img.width(), img.height()),
                     FloatRaster(img.width(), img.height())};
  const auto src = img.data();
  const auto n = static_cast<std::ptrdiff_t>(src.size() / 3);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const double r = od[src[3 * i]];
    const double g = od[src[3 * i + 1]];
    const double b = od[src[3 * i + 2]];
    for (int s = 0; s < 3; ++s) {
      // Row vector times inverse: column s of the inverse.
      const double d = r * inv[0][s] + g * inv[1][s] + b * inv[2][s];
      out[s].data()[i] = static_cast<float>(std::max(d, 0.0));
    }
  }
  return out;
}

std::array<double, 3> deconvolve_pixel(const std::array<double, 3>& rgb, const StainMatrix& m) {
  const auto& inv = m.inverse();
  std::array<double, 3> od{};
  for (int c = 0; c < 3; ++c) od[c] = -std::log10(std::max(rgb[c], 1.0) / 255.0);
  std::array<double, 3> out{};
  for (int s = 0; s < 3; ++s) {
    out[s] = std::max(od[0] * inv[0][s] + od[1] * inv[1][s] + od[2] * inv[2][s], 0.0);
  }
  return out;
}

Raster recompose(const StainDensities& densities, const StainMatrix& m) {
  const int w = densities[0].width();
  const int h = densities[0].height();
  for (const auto& d : densities) {
    if (d.width() != w || d.height() != h) {
      throw Error(ErrorCode::shape, "density maps differ in size");
    }
  }
  const auto& rows = m.rows();
  Raster out(w, h, 3);
  auto dst = out.data();
  const auto n = static_cast<std::ptrdiff_t>(w) * h;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const double d0 = densities[0].data()[i];
    const double d1 = densities[1].data()[i];
    const double d2 = densities[2].data()[i];
    for (int c = 0; c < 3; ++c) {
      const double od = d0 * rows[0][c] + d1 * rows[1][c] + d2 * rows[2][c];
      const double v = 255.0 * std::pow(10.0, -od);
      dst[3 * i + c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  }
  return out;
}

int otsu_threshold(const std::array<std::size_t, 256>& histogram) {
  double total = 0.0;
  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) {
    total += static_cast<double>(histogram[i]);
    sum_all += static_cast<double>(i) * static_cast<double>(histogram[i]);
  }
  if (total == 0.0) return 0;
  int best_t = 0;
  double best_var = -1.0;
  double w0 = 0.0;
  double sum0 = 0.0;
  for (int t = 0; t < 256; ++t) {
    w0 += static_cast<double>(histogram[t]);
    sum0 += static_cast<double>(t) * static_cast<double>(histogram[t]);
    const double w1 = total - w0;
    double var = 0.0;
    if (w0 > 0.0 && w1 > 0.0) {
      const double mu0 = sum0 / w0;
      const double mu1 = (sum_all - sum0) / w1;
      var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    }
    if (var > best_var) {
      best_var = var;
      best_t = t;
    }
  }
  return best_t;
}

BinaryMask majority_cleanup(const BinaryMask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  BinaryMask out(w, h);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int n = 0;
      int on = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          ++n;
          on += mask.at(xx, yy) ? 1 : 0;
        }
      }
      const bool v = 2 * on > n ? true : (2 * on < n ? false : mask.at(x, y));
      out.set(x, y, v);
    }
  }
  return out;
}

BinaryMask tissue_mask(const Raster& img, const PreprocessConfig& cfg) {
  const FloatRaster gray = to_grayscale(img);
  const auto g = gray.data();
  BinaryMask raw(img.width(), img.height());
  if (cfg.tissue_threshold_method == ThresholdMethod::otsu) {
    std::array<std::size_t, 256> hist{};
    std::vector<std::uint8_t> inverted(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto bin = static_cast<int>(std::lround(std::clamp(255.0 - g[i], 0.0, 255.0)));
      inverted[i] = static_cast<std::uint8_t>(bin);
      ++hist[bin];
    }
    const int t = otsu_threshold(hist);
    std::vector<std::uint8_t> bits(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) bits[i] = inverted[i] > t ? 1 : 0;
    raw = BinaryMask(img.width(), img.height(), std::move(bits));
  } else {
    std::vector<std::uint8_t> bits(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) bits[i] = g[i] < cfg.fixed_threshold ? 1 : 0;
    raw = BinaryMask(img.width(), img.height(), std::move(bits));
  }

  // Majority vote can oscillate on adversarial patterns; the cap bounds that.
  constexpr int kMaxCleanupPasses = 32;
  BinaryMask current = majority_cleanup(raw);
  for (int pass = 1; pass < kMaxCleanupPasses; ++pass) {
    BinaryMask next = majority_cleanup(current);
    if (next == current) break;
    current = std::move(next);
  }
  return current;
}

FloatRaster feature_channel(const Raster& img, const PreprocessConfig& cfg) {
  cfg.validate();
  if (img.channels() == 1) {
    // Grayscale inputs have no stain information; invert so tissue is bright
    // like a density map.
    FloatRaster inv = channel_as_float(img, 0);
    for (auto& v : inv.data()) v = 255.0F - v;
    return enhance_contrast(inv, cfg.low_percentile, cfg.high_percentile);
  }
  StainDensities d = color_deconvolve(img, cfg.stain_matrix);
  return enhance_contrast(d[static_cast<std::size_t>(cfg.deconvolution_channel)],
                          cfg.low_percentile, cfg.high_percentile);
}

}  // namespace stainalign
