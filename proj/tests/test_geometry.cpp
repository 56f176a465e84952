#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "stainalign/error.hpp"
#include "stainalign/geometry.hpp"
#include "stainalign/kernels.hpp"
#include "support.hpp"

using namespace stainalign;

namespace {

std::vector<Correspondence> pairs_from(const std::vector<Point2>& pts,
                                       const std::function<Point2(Point2)>& f) {
  std::vector<Correspondence> out;
  for (const auto& p : pts) out.push_back({p, f(p), 0.5});
  return out;
}

AffineModel random_affine(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ang(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> sc(0.6, 1.6), sh(-0.2, 0.2), tr(-50.0, 50.0);
  const double a = ang(rng), s = sc(rng);
  return {s * std::cos(a) + sh(rng), -s * std::sin(a), s * std::sin(a), s * std::cos(a) + sh(rng),
          tr(rng), tr(rng)};
}

// Grey texture on which warps can be compared pixel by pixel.
Raster smooth_gray(int w, int h) {
  Raster img(w, h, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at(x, y) = static_cast<std::uint8_t>(
          std::lround(128 + 60 * std::sin(0.07 * x) * std::cos(0.05 * y) + 40 * std::sin(0.03 * (x + y))));
    }
  }
  return img;
}

}  // namespace

TEST(Affine, ApplyExamples) {
  EXPECT_EQ(affine_apply(AffineModel::identity(), {7.5, -2}), (Point2{7.5, -2}));
  EXPECT_EQ(affine_apply(AffineModel::translation(5, -3), {0, 0}), (Point2{5, -3}));
  EXPECT_EQ(affine_apply(AffineModel{0, -1, 1, 0, 0, 0}, {1, 0}), (Point2{0, 1}));
}

TEST(Affine, InvertExamplesAndRoundTrip) {
  EXPECT_EQ(affine_invert(AffineModel::identity()), AffineModel::identity());
  const AffineModel t = affine_invert(AffineModel::translation(5, -3));
  EXPECT_DOUBLE_EQ(t.tx, -5.0);
  EXPECT_DOUBLE_EQ(t.ty, 3.0);
  std::mt19937_64 rng(1);
  for (int k = 0; k < 20; ++k) {
    const AffineModel m = random_affine(rng);
    const AffineModel inv = affine_invert(m);
    for (const auto& p : testsupport::random_points(rng, 100, -500, 500)) {
      const Point2 q = affine_apply(inv, affine_apply(m, p));
      EXPECT_NEAR(q.x, p.x, 1e-6);
      EXPECT_NEAR(q.y, p.y, 1e-6);
    }
  }
  try {
    (void)affine_invert(AffineModel{1, 2, 2, 4, 0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::degenerate_model);
  }
}

TEST(Affine, ComposeOrder) {
  std::mt19937_64 rng(2);
  const AffineModel a = random_affine(rng), b = random_affine(rng);
  const AffineModel ab = affine_compose(a, b);
  for (const auto& p : testsupport::random_points(rng, 20, -100, 100)) {
    const Point2 want = a.apply(b.apply(p));
    const Point2 got = ab.apply(p);
    EXPECT_NEAR(got.x, want.x, 1e-9);
    EXPECT_NEAR(got.y, want.y, 1e-9);
  }
}

TEST(WarpAffine, IdentityIntegerShiftAndConstant) {
  const Raster img = testsupport::smooth_rgb(40, 30, 3);
  EXPECT_EQ(warp_affine(img, AffineModel::identity(), 40, 30), img);

  const Raster shifted = warp_affine(img, AffineModel::translation(10, 0), 40, 30, 0);
  for (int y = 0; y < 30; ++y) {
    for (int x = 0; x < 40; ++x) {
      for (int c = 0; c < 3; ++c) {
        EXPECT_EQ(shifted.at(x, y, c), x < 10 ? 0 : img.at(x - 10, y, c));
      }
    }
  }

  const Raster flat(50, 50, 3, 91);
  const Raster half = warp_affine(flat, AffineModel{0.5, 0, 0, 0.5, 0, 0}, 20, 20, 0);
  for (auto v : half.data()) EXPECT_EQ(v, 91);

  const FloatRaster f(30, 30, 12.5F);
  const FloatRaster fw = warp_affine(f, AffineModel{0.5, 0, 0, 0.5, 0, 0}, 10, 10);
  for (float v : fw.data()) EXPECT_EQ(v, 12.5F);
}

TEST(LwmWeight, EndpointsSlopeAndMonotone) {
  EXPECT_DOUBLE_EQ(lwm_weight(0.0), 1.0);
  EXPECT_DOUBLE_EQ(lwm_weight(1.0), 0.0);
  EXPECT_DOUBLE_EQ(lwm_weight(1.5), 0.0);
  const double h = 1e-6;
  EXPECT_NEAR((lwm_weight(1.0) - lwm_weight(1.0 - h)) / h, 0.0, 1e-5);
  for (int i = 1; i <= 1000; ++i) {
    EXPECT_LT(lwm_weight(i * 1e-3), lwm_weight((i - 1) * 1e-3)) << i;
  }
}

TEST(FitLwm, IdentityPairsGiveIdentityPolynomials) {
  std::mt19937_64 rng(3);
  const auto pts = testsupport::random_points(rng, 40, 0, 500);
  const LwmModel m = fit_lwm(pairs_from(pts, [](Point2 p) { return p; }), 10);
  for (const auto& c : m.controls()) {
    const std::array<double, 6> ex{0, 1, 0, 0, 0, 0}, ey{0, 0, 1, 0, 0, 0};
    for (int k = 0; k < 6; ++k) {
      EXPECT_NEAR(c.coeffs_x[k], ex[k], 1e-9);
      EXPECT_NEAR(c.coeffs_y[k], ey[k], 1e-9);
    }
  }
  const auto hull = testsupport::convex_hull(pts);
  for (const auto& p : testsupport::random_points(rng, 200, 0, 500)) {
    if (!testsupport::inside_hull(hull, p)) continue;
    const Point2 q = lwm_apply(m, p);
    EXPECT_NEAR(q.x, p.x, 1e-6);
    EXPECT_NEAR(q.y, p.y, 1e-6);
  }
}

TEST(FitLwm, GlobalQuadraticReproduced) {
  std::mt19937_64 rng(4);
  const auto q = testsupport::random_quadratic(rng, 600);
  const auto pts = testsupport::random_points(rng, 30, 0, 600);
  const LwmModel m = fit_lwm(pairs_from(pts, q), 12);
  for (const auto& c : m.controls()) {
    for (int k = 0; k < 6; ++k) {
      EXPECT_NEAR(c.coeffs_x[k], q.cx[k], 1e-6 * std::max(1.0, std::abs(q.cx[k])));
      EXPECT_NEAR(c.coeffs_y[k], q.cy[k], 1e-6 * std::max(1.0, std::abs(q.cy[k])));
    }
  }
  const auto hull = testsupport::convex_hull(pts);
  int tested = 0;
  while (tested < 100) {
    const Point2 p = testsupport::random_points(rng, 1, 0, 600)[0];
    if (!testsupport::inside_hull(hull, p)) continue;
    const Point2 got = lwm_apply(m, p);
    const Point2 want = q(p);
    EXPECT_NEAR(got.x, want.x, 1e-5);
    EXPECT_NEAR(got.y, want.y, 1e-5);
    ++tested;
  }
}

TEST(FitLwm, Errors) {
  std::mt19937_64 rng(5);
  const auto five = pairs_from(testsupport::random_points(rng, 5, 0, 100), [](Point2 p) { return p; });
  try {
    (void)fit_lwm(five, 6);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::insufficient_control_points);
  }
  auto pairs = pairs_from(testsupport::random_points(rng, 20, 0, 100), [](Point2 p) { return p; });
  EXPECT_THROW((void)fit_lwm(pairs, 5), Error);
  pairs[3].source = pairs[7].source;
  try {
    (void)fit_lwm(pairs, 6);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_argument);
  }
}

TEST(FitLwm, CollinearNeighbourhoodReported) {
  std::vector<Correspondence> pairs;
  // eight points on a line far from a scattered cluster
  for (int i = 0; i < 8; ++i) pairs.push_back({{1000.0 + 3.0 * i, 1000.0}, {1000.0 + 3.0 * i, 1000.0}});
  std::mt19937_64 rng(6);
  for (const auto& p : testsupport::random_points(rng, 20, 0, 100)) pairs.push_back({p, p});
  try {
    (void)fit_lwm(pairs, 6);
    FAIL();
  } catch (const DegenerateNeighborhoodError& e) {
    EXPECT_LT(e.anchor_index(), 8U);
    EXPECT_EQ(e.code(), ErrorCode::degenerate_neighborhood);
  }
}

TEST(LwmApply, AnchorReturnsItsOwnTarget) {
  std::mt19937_64 rng(7);
  const auto pts = testsupport::random_points(rng, 25, 0, 300);
  std::normal_distribution<double> n(0.0, 3.0);
  std::vector<Correspondence> pairs;
  for (const auto& p : pts) pairs.push_back({p, {p.x + n(rng), p.y + n(rng)}});
  // With n = 6 each local quadratic interpolates its neighbourhood, and every
  // disc that reaches an anchor has that anchor among its fitted points.
  const LwmModel m = fit_lwm(pairs, 6);
  for (const auto& c : pairs) {
    const Point2 q = lwm_apply(m, c.source);
    EXPECT_NEAR(q.x, c.target.x, 1e-6);
    EXPECT_NEAR(q.y, c.target.y, 1e-6);
  }
}

TEST(LwmApply, ContinuousAlongLine) {
  std::mt19937_64 rng(8);
  const auto q = testsupport::random_quadratic(rng, 400);
  const auto pts = testsupport::random_points(rng, 60, 0, 400);
  const LwmModel m = fit_lwm(pairs_from(pts, q), 12);
  Point2 prev = lwm_apply(m, {20.0, 30.0});
  for (double t = 0.1; t <= 360.0; t += 0.1) {
    const Point2 cur = lwm_apply(m, {20.0 + t, 30.0 + 0.9 * t});
    EXPECT_LT(distance(cur, prev), 1.0);
    prev = cur;
  }
}

TEST(LwmApply, IndexedEqualsBruteForce) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 2.0);
  const auto pts = testsupport::random_points(rng, 150, 0, 1000);
  std::vector<Correspondence> pairs;
  for (const auto& p : pts) pairs.push_back({p, {p.x + n(rng), p.y + n(rng)}});
  const LwmModel m = fit_lwm(pairs, 12);
  for (const auto& p : testsupport::random_points(rng, 3000, -200, 1200)) {
    bool e1 = false, e2 = false;
    const Point2 a = m.apply(p, &e1);
    const Point2 b = serial::lwm_apply(m, p, &e2);
    EXPECT_EQ(a, b);
    EXPECT_EQ(e1, e2);
  }
}

TEST(LwmApply, FarPointsUseNearestControl) {
  std::mt19937_64 rng(10);
  const auto pts = testsupport::random_points(rng, 20, 0, 100);
  const LwmModel m = fit_lwm(pairs_from(pts, [](Point2 p) { return Point2{p.x + 4, p.y}; }), 6);
  bool ex = false;
  const Point2 q = m.apply({5000, 5000}, &ex);
  EXPECT_TRUE(ex);
  EXPECT_NEAR(q.x, 5004, 1e-6);
  std::size_t brute = 0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (distance(pts[i], {5000, 5000}) < distance(pts[brute], {5000, 5000})) brute = i;
  }
  EXPECT_EQ(m.nearest_control({5000, 5000}), brute);
}

TEST(LwmModel, EmptyModelRejectsApply) {
  const LwmModel empty({}, 6);
  try {
    (void)empty.apply({0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_model);
  }
}

TEST(WarpLwm, IdentityAndIntegerShift) {
  const Raster img = smooth_gray(60, 50);
  std::vector<Point2> grid;
  for (int y = -10; y <= 60; y += 10) {
    for (int x = -10; x <= 70; x += 10) grid.push_back({double(x), double(y)});
  }
  const LwmModel id = fit_lwm(pairs_from(grid, [](Point2 p) { return p; }), 9);
  std::size_t ex = 99;
  EXPECT_EQ(warp_lwm(img, id, 60, 50, 0, &ex), img);
  EXPECT_EQ(ex, 0U);

  const LwmModel shift = fit_lwm(pairs_from(grid, [](Point2 p) { return Point2{p.x - 7, p.y}; }), 9);
  const Raster out = warp_lwm(img, shift, 60, 50, 0);
  for (int y = 0; y < 50; ++y) {
    for (int x = 0; x < 60; ++x) EXPECT_EQ(out.at(x, y), x < 7 ? 0 : img.at(x - 7, y));
  }
}

TEST(WarpLwm, AgreesWithWarpAffine) {
  std::mt19937_64 rng(11);
  const Raster img = smooth_gray(120, 100);
  for (int t = 0; t < 5; ++t) {
    std::uniform_real_distribution<double> ang(-0.3, 0.3), sc(0.9, 1.1), tr(-8, 8);
    const double a = ang(rng), s = sc(rng);
    const AffineModel m{s * std::cos(a), -s * std::sin(a), s * std::sin(a), s * std::cos(a), tr(rng), tr(rng)};
    const AffineModel inv = affine_invert(m);
    // jittered: a regular grid puts small neighbourhoods on two lines
    std::uniform_real_distribution<double> jit(-4.0, 4.0);
    std::vector<Point2> grid;
    for (int y = -20; y <= 120; y += 15) {
      for (int x = -20; x <= 140; x += 15) grid.push_back({x + jit(rng), y + jit(rng)});
    }
    const LwmModel lwm = fit_lwm(pairs_from(grid, [&](Point2 p) { return inv.apply(p); }), 10);
    const Raster wa = warp_affine(img, m, 120, 100, 0);
    const Raster wl = warp_lwm(img, lwm, 120, 100, 0);
    for (std::size_t i = 0; i < wa.data().size(); ++i) {
      EXPECT_LE(std::abs(int(wa.data()[i]) - int(wl.data()[i])), 1);
    }
  }
}

TEST(WarpLwm, UndoesSinusoidalDeformation) {
  // a smooth 4 px displacement: deform a texture, then undo it with an LWM
  // fitted on a grid of exact correspondences
  const FloatRaster tex = testsupport::Texture(300, 5).render(200, 200, 0.0, 1.0);
  const auto d = [](Point2 p) {
    return Point2{p.x + 4.0 * std::sin(2 * std::numbers::pi * p.y / 120.0),
                  p.y + 4.0 * std::sin(2 * std::numbers::pi * p.x / 140.0)};
  };
  FloatRaster deformed(200, 200);
  for (int y = 0; y < 200; ++y) {
    for (int x = 0; x < 200; ++x) {
      const Point2 s = d({double(x), double(y)});
      deformed.at(x, y) = static_cast<float>(bilinear_sample(tex, s.x, s.y, 255.0));
    }
  }
  // deformed(p) = tex(d(p)), so recovering tex needs a map tex frame -> deformed frame
  std::vector<Correspondence> pairs;
  for (int y = -10; y <= 210; y += 12) {
    for (int x = -10; x <= 210; x += 12) {
      const Point2 p{double(x), double(y)};
      pairs.push_back({d(p), p});
    }
  }
  const LwmModel inv = fit_lwm(pairs, 12);
  const FloatRaster back = warp_lwm(deformed, inv, 200, 200, 255.0F);
  double err = 0.0;
  int n = 0;
  for (int y = 10; y < 190; ++y) {
    for (int x = 10; x < 190; ++x) {
      err += std::abs(back.at(x, y) - tex.at(x, y));
      ++n;
    }
  }
  EXPECT_LT(err / n, 8.0);
}
