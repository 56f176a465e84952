#include "stainalign/geometry.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <string>
#include <utility>

#include "stainalign/error.hpp"
#include "stainalign/kernels.hpp"

namespace stainalign {

namespace {

constexpr double kDuplicateDistance = 1e-6;
// Smallest accepted singular-value ratio of the local design matrix.
constexpr double kMinConditioning = 1e-7;

struct Blend {
  double w = 0.0;
  double x = 0.0;
  double y = 0.0;
};

// Shared by the indexed and the brute-force evaluation so both sum the same
// terms in the same order.
inline void accumulate(const LwmControlPoint& c, Point2 p, Blend& acc) {
  const double r = std::hypot(p.x - c.anchor.x, p.y - c.anchor.y) / c.radius;
  if (!(r < 1.0)) return;
  const double w = lwm_weight(r);
  const Point2 q = c.evaluate(p);
  acc.w += w;
  acc.x += w * q.x;
  acc.y += w * q.y;
}

}  // namespace

Point2 affine_apply(const AffineModel& m, Point2 p) { return m.apply(p); }

AffineModel affine_invert(const AffineModel& m) {
  const double det = m.determinant();
  if (!(std::abs(det) > 1e-9)) {
    throw Error(ErrorCode::degenerate_model, "affine model is not invertible");
  }
  AffineModel inv;
  inv.a11 = m.a22 / det;
  inv.a12 = -m.a12 / det;
  inv.a21 = -m.a21 / det;
  inv.a22 = m.a11 / det;
  inv.tx = -(inv.a11 * m.tx + inv.a12 * m.ty);
  inv.ty = -(inv.a21 * m.tx + inv.a22 * m.ty);
  return inv;
}

AffineModel affine_compose(const AffineModel& a, const AffineModel& b) {
  AffineModel c;
  c.a11 = a.a11 * b.a11 + a.a12 * b.a21;
  c.a12 = a.a11 * b.a12 + a.a12 * b.a22;
  c.a21 = a.a21 * b.a11 + a.a22 * b.a21;
  c.a22 = a.a21 * b.a12 + a.a22 * b.a22;
  c.tx = a.a11 * b.tx + a.a12 * b.ty + a.tx;
  c.ty = a.a21 * b.tx + a.a22 * b.ty + a.ty;
  return c;
}

Raster warp_affine(const Raster& src, const AffineModel& m, int width, int height,
                   std::uint8_t fill) {
  const AffineModel inv = affine_invert(m);
  return kernels::remap_bilinear(
      src, Size{width, height},
      [&inv](double u, double v, bool&) { return inv.apply({u, v}); }, fill);
}

FloatRaster warp_affine(const FloatRaster& src, const AffineModel& m, int width, int height,
                        float fill) {
  const AffineModel inv = affine_invert(m);
  return kernels::remap_bilinear(
      src, Size{width, height},
      [&inv](double u, double v, bool&) { return inv.apply({u, v}); }, fill);
}

double lwm_weight(double r) {
  if (r < 0.0) r = -r;
  if (!(r < 1.0)) return 0.0;
  return 1.0 - 3.0 * r * r + 2.0 * r * r * r;
}

Point2 LwmControlPoint::evaluate(Point2 p) const {
  const double x = p.x;
  const double y = p.y;
  const auto& a = coeffs_x;
  const auto& b = coeffs_y;
  return {a[0] + a[1] * x + a[2] * y + a[3] * x * x + a[4] * x * y + a[5] * y * y,
          b[0] + b[1] * x + b[2] * y + b[3] * x * x + b[4] * x * y + b[5] * y * y};
}

LwmModel::LwmModel(std::vector<LwmControlPoint> controls, int n_neighbors)
    : controls_(std::move(controls)), n_neighbors_(n_neighbors) {
  if (controls_.empty()) return;
  if (n_neighbors_ < 6 || controls_.size() < static_cast<std::size_t>(n_neighbors_)) {
    throw Error(ErrorCode::invalid_model, "LWM model needs controls >= n_neighbors >= 6");
  }
  double x0 = std::numeric_limits<double>::infinity();
  double y0 = x0;
  double x1 = -x0;
  double y1 = -x0;
  std::vector<double> radii;
  radii.reserve(controls_.size());
  for (const auto& c : controls_) {
    if (!(c.radius > 0.0) || !std::isfinite(c.radius) || !std::isfinite(c.anchor.x) ||
        !std::isfinite(c.anchor.y)) {
      throw Error(ErrorCode::invalid_model, "LWM control has a non-positive or non-finite radius");
    }
    x0 = std::min(x0, c.anchor.x - c.radius);
    y0 = std::min(y0, c.anchor.y - c.radius);
    x1 = std::max(x1, c.anchor.x + c.radius);
    y1 = std::max(y1, c.anchor.y + c.radius);
    radii.push_back(c.radius);
  }
  std::nth_element(radii.begin(), radii.begin() + radii.size() / 2, radii.end());
  const double extent = std::max(x1 - x0, y1 - y0);
  cell_ = std::max({radii[radii.size() / 2], extent / 1024.0, 1e-6});
  grid_x0_ = x0;
  grid_y0_ = y0;
  grid_w_ = static_cast<int>(std::floor((x1 - x0) / cell_)) + 1;
  grid_h_ = static_cast<int>(std::floor((y1 - y0) / cell_)) + 1;

  const auto cells = static_cast<std::size_t>(grid_w_) * static_cast<std::size_t>(grid_h_);
  auto cell_range = [&](const LwmControlPoint& c) {
    const int cx0 = std::clamp(static_cast<int>(std::floor((c.anchor.x - c.radius - x0) / cell_)), 0, grid_w_ - 1);
    const int cx1 = std::clamp(static_cast<int>(std::floor((c.anchor.x + c.radius - x0) / cell_)), 0, grid_w_ - 1);
    const int cy0 = std::clamp(static_cast<int>(std::floor((c.anchor.y - c.radius - y0) / cell_)), 0, grid_h_ - 1);
    const int cy1 = std::clamp(static_cast<int>(std::floor((c.anchor.y + c.radius - y0) / cell_)), 0, grid_h_ - 1);
    return std::array<int, 4>{cx0, cx1, cy0, cy1};
  };
  std::vector<std::size_t> counts(cells + 1, 0);
  for (const auto& c : controls_) {
    const auto r = cell_range(c);
    for (int cy = r[2]; cy <= r[3]; ++cy) {
      for (int cx = r[0]; cx <= r[1]; ++cx) ++counts[static_cast<std::size_t>(cy) * grid_w_ + cx + 1];
    }
  }
  for (std::size_t i = 1; i <= cells; ++i) counts[i] += counts[i - 1];
  cell_start_ = counts;
  cell_items_.assign(counts[cells], 0);
  for (std::size_t i = 0; i < controls_.size(); ++i) {
    const auto r = cell_range(controls_[i]);
    for (int cy = r[2]; cy <= r[3]; ++cy) {
      for (int cx = r[0]; cx <= r[1]; ++cx) {
        cell_items_[counts[static_cast<std::size_t>(cy) * grid_w_ + cx]++] = i;
      }
    }
  }

  by_x_.resize(controls_.size());
  for (std::size_t i = 0; i < by_x_.size(); ++i) by_x_[i] = i;
  std::sort(by_x_.begin(), by_x_.end(), [this](std::size_t a, std::size_t b) {
    const double xa = controls_[a].anchor.x;
    const double xb = controls_[b].anchor.x;
    return xa != xb ? xa < xb : a < b;
  });
}

std::size_t LwmModel::nearest_control(Point2 p) const {
  if (controls_.empty()) throw Error(ErrorCode::invalid_model, "LWM model has no controls");
  const auto start = std::lower_bound(by_x_.begin(), by_x_.end(), p.x, [this](std::size_t i, double x) {
    return controls_[i].anchor.x < x;
  });
  double best_d2 = std::numeric_limits<double>::infinity();
  std::size_t best = controls_.size();
  auto offer = [&](std::size_t i) {
    const double dx = controls_[i].anchor.x - p.x;
    const double dy = controls_[i].anchor.y - p.y;
    const double d2 = dx * dx + dy * dy;
    if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
      best_d2 = d2;
      best = i;
    }
  };
  for (auto it = start; it != by_x_.end(); ++it) {
    const double dx = controls_[*it].anchor.x - p.x;
    if (dx * dx > best_d2) break;
    offer(*it);
  }
  for (auto it = start; it != by_x_.begin();) {
    --it;
    const double dx = controls_[*it].anchor.x - p.x;
    if (dx * dx > best_d2) break;
    offer(*it);
  }
  return best;
}

Point2 LwmModel::apply(Point2 p, bool* extrapolated) const {
  if (controls_.empty()) throw Error(ErrorCode::invalid_model, "LWM model has no controls");
  Blend acc;
  const double fx = std::floor((p.x - grid_x0_) / cell_);
  const double fy = std::floor((p.y - grid_y0_) / cell_);
  if (fx >= 0.0 && fy >= 0.0 && fx < grid_w_ && fy < grid_h_) {
    const std::size_t cell = static_cast<std::size_t>(fy) * grid_w_ + static_cast<std::size_t>(fx);
    for (std::size_t k = cell_start_[cell]; k < cell_start_[cell + 1]; ++k) {
      accumulate(controls_[cell_items_[k]], p, acc);
    }
  }
  if (acc.w > 0.0) {
    if (extrapolated != nullptr) *extrapolated = false;
    return {acc.x / acc.w, acc.y / acc.w};
  }
  if (extrapolated != nullptr) *extrapolated = true;
  return controls_[nearest_control(p)].evaluate(p);
}

Point2 lwm_apply(const LwmModel& model, Point2 p, bool* extrapolated) {
  return model.apply(p, extrapolated);
}

Point2 serial::lwm_apply(const LwmModel& model, Point2 p, bool* extrapolated) {
  const auto& controls = model.controls();
  if (controls.empty()) throw Error(ErrorCode::invalid_model, "LWM model has no controls");
  Blend acc;
  for (const auto& c : controls) accumulate(c, p, acc);
  if (acc.w > 0.0) {
    if (extrapolated != nullptr) *extrapolated = false;
    return {acc.x / acc.w, acc.y / acc.w};
  }
  if (extrapolated != nullptr) *extrapolated = true;
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < controls.size(); ++i) {
    const double dx = controls[i].anchor.x - p.x;
    const double dy = controls[i].anchor.y - p.y;
    const double d2 = dx * dx + dy * dy;
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return controls[best].evaluate(p);
}

LwmModel fit_lwm(std::span<const Correspondence> pairs, int n_neighbors) {
  if (n_neighbors < 6) {
    throw Error(ErrorCode::invalid_argument, "n_neighbors must be at least 6");
  }
  const std::size_t n = static_cast<std::size_t>(n_neighbors);
  if (pairs.size() < n) {
    throw Error(ErrorCode::insufficient_control_points,
                "LWM fit needs " + std::to_string(n) + " control pairs, got " +
                    std::to_string(pairs.size()));
  }
  const std::size_t count = pairs.size();

  // Duplicates first: they would otherwise surface as a rank-deficient
  // neighbourhood of whichever anchor happens to be fitted first.
  std::vector<std::size_t> by_x(count);
  std::iota(by_x.begin(), by_x.end(), std::size_t{0});
  std::sort(by_x.begin(), by_x.end(), [&](std::size_t a, std::size_t b) {
    return pairs[a].source.x < pairs[b].source.x || (pairs[a].source.x == pairs[b].source.x && a < b);
  });
  for (std::size_t k = 0; k < count; ++k) {
    const Point2 a = pairs[by_x[k]].source;
    for (std::size_t m = k + 1; m < count && pairs[by_x[m]].source.x - a.x < kDuplicateDistance; ++m) {
      if (distance(pairs[by_x[m]].source, a) < kDuplicateDistance) {
        throw Error(ErrorCode::invalid_argument,
                    "duplicate LWM anchors " + std::to_string(std::min(by_x[k], by_x[m])) + " and " +
                        std::to_string(std::max(by_x[k], by_x[m])));
      }
    }
  }

  std::vector<LwmControlPoint> controls(count);
  std::vector<std::exception_ptr> failures(count);

#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(count); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    try {
      const Point2 a = pairs[i].source;
      std::vector<std::pair<double, std::size_t>> d(count);
      for (std::size_t j = 0; j < count; ++j) {
        const double dx = pairs[j].source.x - a.x;
        const double dy = pairs[j].source.y - a.y;
        d[j] = {dx * dx + dy * dy, j};
      }
      std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n - 1), d.end());
      std::sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n));
      const double radius = std::sqrt(d[n - 1].first);

      Eigen::MatrixXd design(static_cast<Eigen::Index>(n), 6);
      Eigen::MatrixXd rhs(static_cast<Eigen::Index>(n), 2);
      for (std::size_t k = 0; k < n; ++k) {
        const auto& pr = pairs[d[k].second];
        const double qx = (pr.source.x - a.x) / radius;
        const double qy = (pr.source.y - a.y) / radius;
        const auto r = static_cast<Eigen::Index>(k);
        design(r, 0) = 1.0;
        design(r, 1) = qx;
        design(r, 2) = qy;
        design(r, 3) = qx * qx;
        design(r, 4) = qx * qy;
        design(r, 5) = qy * qy;
        rhs(r, 0) = pr.target.x;
        rhs(r, 1) = pr.target.y;
      }
      const Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
      const auto& sv = svd.singularValues();
      if (!(sv(5) > kMinConditioning * sv(0))) {
        throw DegenerateNeighborhoodError(
            i, "LWM neighbourhood of anchor " + std::to_string(i) + " is rank deficient");
      }
      const Eigen::MatrixXd c = svd.solve(rhs);

      // Re-express the polynomial in absolute coordinates.
      const double alpha = 1.0 / radius;
      const double u0 = a.x * alpha;
      const double v0 = a.y * alpha;
      auto expand = [&](Eigen::Index col) {
        const double c0 = c(0, col), c1 = c(1, col), c2 = c(2, col);
        const double c3 = c(3, col), c4 = c(4, col), c5 = c(5, col);
        return std::array<double, 6>{
            c0 - c1 * u0 - c2 * v0 + c3 * u0 * u0 + c4 * u0 * v0 + c5 * v0 * v0,
            (c1 - 2.0 * c3 * u0 - c4 * v0) * alpha,
            (c2 - c4 * u0 - 2.0 * c5 * v0) * alpha,
            c3 * alpha * alpha,
            c4 * alpha * alpha,
            c5 * alpha * alpha};
      };
      controls[i] = LwmControlPoint{a, radius, expand(0), expand(1)};
    } catch (...) {
      failures[i] = std::current_exception();
    }
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  return LwmModel(std::move(controls), n_neighbors);
}

Raster warp_lwm(const Raster& src, const LwmModel& inverse_model, int width, int height,
                std::uint8_t fill, std::size_t* extrapolated) {
  if (inverse_model.empty()) throw Error(ErrorCode::invalid_model, "LWM model has no controls");
  return kernels::remap_bilinear(
      src, Size{width, height},
      [&inverse_model](double u, double v, bool& flag) { return inverse_model.apply({u, v}, &flag); },
      fill, extrapolated);
}

FloatRaster warp_lwm(const FloatRaster& src, const LwmModel& inverse_model, int width,
                     int height, float fill, std::size_t* extrapolated) {
  if (inverse_model.empty()) throw Error(ErrorCode::invalid_model, "LWM model has no controls");
  return kernels::remap_bilinear(
      src, Size{width, height},
      [&inverse_model](double u, double v, bool& flag) { return inverse_model.apply({u, v}, &flag); },
      fill, extrapolated);
}

}  // namespace stainalign
