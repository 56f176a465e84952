#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "stainalign/error.hpp"
#include "stainalign/preprocess.hpp"
#include "support.hpp"

using namespace stainalign;

namespace {

std::array<double, 3> od_of(const std::array<double, 3>& d, const StainMatrix& m) {
  std::array<double, 3> od{};
  for (int c = 0; c < 3; ++c) {
    for (int s = 0; s < 3; ++s) od[c] += d[s] * m.rows()[s][c];
  }
  return od;
}

std::array<double, 3> oracle_unmix(const std::array<double, 3>& rgb, const StainMatrix& m) {
  std::array<double, 3> od{};
  for (int c = 0; c < 3; ++c) od[c] = -std::log10(std::max(rgb[c], 1.0) / 255.0);
  testsupport::Mat3 rows{};
  for (int s = 0; s < 3; ++s) rows[s] = m.rows()[s];
  const auto inv = testsupport::inverse3_cramer(rows);
  std::array<double, 3> d{};
  for (int s = 0; s < 3; ++s) {
    for (int c = 0; c < 3; ++c) d[s] += od[c] * inv[c][s];
    d[s] = std::max(d[s], 0.0);
  }
  return d;
}

Raster one_pixel(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Raster img(1, 1, 3);
  img.at(0, 0, 0) = r;
  img.at(0, 0, 1) = g;
  img.at(0, 0, 2) = b;
  return img;
}

}  // namespace

TEST(StainMatrix, PresetsAreUnitRowsAndInvertible) {
  for (const char* name : {"h_e", "h_dab", "h_e_dab"}) {
    const StainMatrix m = StainMatrix::preset(name);
    for (const auto& row : m.rows()) {
      EXPECT_NEAR(std::hypot(row[0], row[1], row[2]), 1.0, 1e-12) << name;
    }
    EXPECT_GT(std::abs(m.determinant()), 1e-9);
    // inverse really is the inverse
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += m.rows()[i][k] * m.inverse()[k][j];
        EXPECT_NEAR(s, i == j ? 1.0 : 0.0, 1e-9);
      }
    }
  }
  // hematoxylin is the first row of every preset
  EXPECT_EQ(StainMatrix::preset("h_e").rows()[0], StainMatrix::preset("h_dab").rows()[0]);
  EXPECT_EQ(StainMatrix::preset("h_e").rows()[0], StainMatrix::preset("h_e_dab").rows()[0]);
}

TEST(StainMatrix, Errors) {
  try {
    (void)StainMatrix::preset("masson");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_argument);
  }
  try {
    (void)StainMatrix::from_rows({{{1, 0, 0}, {2, 0, 0}, {0, 0, 1}}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::degenerate_stain);
  }
  EXPECT_THROW((void)StainMatrix::from_rows({{{0, 0, 0}, {0, 1, 0}, {0, 0, 1}}}), Error);
  const StainMatrix custom = StainMatrix::from_rows({{{3, 0, 4}, {0, 2, 0}, {0, 0, 5}}});
  EXPECT_DOUBLE_EQ(custom.rows()[0][0], 0.6);
  EXPECT_DOUBLE_EQ(custom.rows()[0][2], 0.8);
}

TEST(EnhanceContrast, ConstantImageUnchanged) {
  const FloatRaster img(9, 7, 128.0F);
  EXPECT_EQ(enhance_contrast(img, 0.01, 0.99), img);
}

TEST(EnhanceContrast, EndpointsMapToFullRange) {
  FloatRaster img(191, 1);
  for (int i = 0; i < 191; ++i) img.at(i, 0) = static_cast<float>(10 + i);
  const FloatRaster out = enhance_contrast(img, 0.0, 1.0);
  EXPECT_FLOAT_EQ(out.at(0, 0), 0.0F);
  EXPECT_FLOAT_EQ(out.at(190, 0), 255.0F);
}

TEST(EnhanceContrast, TwoValueImage) {
  FloatRaster img(4, 1, std::vector<float>{50, 150, 150, 50});
  const FloatRaster out = enhance_contrast(img, 0.0, 1.0);
  EXPECT_EQ(out, FloatRaster(4, 1, std::vector<float>{0, 255, 255, 0}));
}

TEST(EnhanceContrast, MonotoneProperty) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<float> u(0.0F, 255.0F);
  std::uniform_real_distribution<double> lo(0.0, 0.2), hi(0.8, 1.0);
  for (int t = 0; t < 30; ++t) {
    FloatRaster img(25, 25);
    for (float& v : img.data()) v = u(rng);
    const FloatRaster out = enhance_contrast(img, lo(rng), hi(rng));
    for (int k = 0; k < 2000; ++k) {
      std::uniform_int_distribution<std::size_t> idx(0, img.data().size() - 1);
      const std::size_t a = idx(rng), b = idx(rng);
      if (img.data()[a] >= img.data()[b]) {
        EXPECT_GE(out.data()[a], out.data()[b]);
      }
    }
  }
}

TEST(Percentile, InterpolatesSortedValues) {
  FloatRaster img(5, 1, std::vector<float>{40, 10, 30, 20, 50});
  EXPECT_DOUBLE_EQ(percentile(img, 0.0), 10.0);
  EXPECT_DOUBLE_EQ(percentile(img, 1.0), 50.0);
  EXPECT_DOUBLE_EQ(percentile(img, 0.5), 30.0);
  EXPECT_DOUBLE_EQ(percentile(img, 0.125), 15.0);
}

TEST(Deconvolve, WhiteIsZeroDensity) {
  for (const char* name : {"h_e", "h_dab", "h_e_dab"}) {
    const StainDensities d = color_deconvolve(one_pixel(255, 255, 255), StainMatrix::preset(name));
    for (int s = 0; s < 3; ++s) EXPECT_EQ(d[s].at(0, 0), 0.0F);
  }
}

TEST(Deconvolve, UnitHematoxylinPixel) {
  for (const char* name : {"h_e", "h_dab", "h_e_dab"}) {
    const StainMatrix m = StainMatrix::preset(name);
    std::array<double, 3> rgb{};
    for (int c = 0; c < 3; ++c) rgb[c] = 255.0 * std::pow(10.0, -m.rows()[0][c]);
    const auto d = deconvolve_pixel(rgb, m);
    EXPECT_NEAR(d[0], 1.0, 1e-3) << name;
    EXPECT_NEAR(d[1], 0.0, 1e-3) << name;
    EXPECT_NEAR(d[2], 0.0, 1e-3) << name;
  }
}

TEST(Deconvolve, EightBitMatchesIndependentInverse) {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> u(0, 255);
  for (const char* name : {"h_e", "h_dab", "h_e_dab"}) {
    const StainMatrix m = StainMatrix::preset(name);
    Raster img(32, 32, 3);
    for (auto& v : img.data()) v = static_cast<std::uint8_t>(u(rng));
    const StainDensities d = color_deconvolve(img, m);
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        const auto want = oracle_unmix({double(img.at(x, y, 0)), double(img.at(x, y, 1)),
                                        double(img.at(x, y, 2))},
                                       m);
        for (int s = 0; s < 3; ++s) EXPECT_NEAR(d[s].at(x, y), want[s], 1e-5);
      }
    }
  }
}

TEST(Deconvolve, BlackPixelStaysFinite) {
  const StainDensities d = color_deconvolve(one_pixel(0, 0, 0), StainMatrix::preset("h_e"));
  for (int s = 0; s < 3; ++s) EXPECT_TRUE(std::isfinite(d[s].at(0, 0)));
}

TEST(Deconvolve, RoundTripWithinTwoLevels) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> dens(0.0, 1.2);
  for (const char* name : {"h_e", "h_dab", "h_e_dab"}) {
    const StainMatrix m = StainMatrix::preset(name);
    Raster img(64, 64, 3);
    int y = 0, x = 0, tested = 0;
    while (y < 64) {
      const auto od = od_of({dens(rng), dens(rng), dens(rng)}, m);
      std::array<double, 3> rgb{};
      bool ok = true;
      for (int c = 0; c < 3; ++c) {
        rgb[c] = std::round(255.0 * std::pow(10.0, -od[c]));
        ok = ok && rgb[c] >= 10.0 && rgb[c] <= 250.0;
      }
      if (!ok) continue;
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>(rgb[c]);
      ++tested;
      if (++x == 64) {
        x = 0;
        ++y;
      }
    }
    ASSERT_EQ(tested, 64 * 64);
    const Raster back = recompose(color_deconvolve(img, m), m);
    for (std::size_t i = 0; i < img.data().size(); ++i) {
      EXPECT_LE(std::abs(int(back.data()[i]) - int(img.data()[i])), 2) << name;
    }
  }
}

TEST(Otsu, MatchesExhaustiveBetweenClassVariance) {
  std::mt19937_64 rng(23);
  for (int t = 0; t < 50; ++t) {
    std::array<std::size_t, 256> h{};
    std::normal_distribution<double> a(60 + t, 12), b(190 - t, 20);
    for (int k = 0; k < 3000; ++k) {
      const double v = (k % 3 == 0) ? a(rng) : b(rng);
      h[std::clamp(static_cast<int>(std::lround(v)), 0, 255)]++;
    }
    double total = 0, sum = 0;
    for (int i = 0; i < 256; ++i) {
      total += h[i];
      sum += i * double(h[i]);
    }
    int best_t = 0;
    double best = -1.0;
    double w0 = 0, s0 = 0;
    for (int i = 0; i < 256; ++i) {
      w0 += h[i];
      s0 += i * double(h[i]);
      const double w1 = total - w0;
      if (w0 == 0 || w1 == 0) continue;
      const double m0 = s0 / w0, m1 = (sum - s0) / w1;
      const double v = w0 * w1 * (m0 - m1) * (m0 - m1);
      if (v > best * (1 + 1e-12)) {
        best = v;
        best_t = i;
      }
    }
    EXPECT_EQ(otsu_threshold(h), best_t);
  }
}

TEST(TissueMask, WhiteEmptyBlackFull) {
  const PreprocessConfig cfg;
  EXPECT_EQ(tissue_mask(Raster(40, 30, 3, 255), cfg).count(), 0U);
  EXPECT_EQ(tissue_mask(Raster(40, 30, 3, 0), cfg).count(), 40U * 30U);
}

TEST(TissueMask, DarkSquareOnWhite) {
  Raster img(100, 100, 3, 255);
  for (int y = 40; y < 60; ++y) {
    for (int x = 40; x < 60; ++x) {
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = 0;
    }
  }
  const BinaryMask m = tissue_mask(img, PreprocessConfig{});
  int disagree_outside_band = 0;
  for (int y = 0; y < 100; ++y) {
    for (int x = 0; x < 100; ++x) {
      const bool inner = x >= 41 && x < 59 && y >= 41 && y < 59;
      const bool outer = x >= 39 && x < 61 && y >= 39 && y < 61;
      if (inner && !m.at(x, y)) ++disagree_outside_band;
      if (!outer && m.at(x, y)) ++disagree_outside_band;
    }
  }
  EXPECT_EQ(disagree_outside_band, 0);
}

TEST(TissueMask, FixedThresholdOverride) {
  Raster img(10, 10, 3, 180);
  PreprocessConfig cfg;
  cfg.tissue_threshold_method = ThresholdMethod::fixed;
  cfg.fixed_threshold = 200.0;
  EXPECT_EQ(tissue_mask(img, cfg).count(), 100U);
  cfg.fixed_threshold = 150.0;
  EXPECT_EQ(tissue_mask(img, cfg).count(), 0U);
}

TEST(TissueMask, CleanupIsIdempotentOnResult) {
  std::mt19937_64 rng(29);
  for (int t = 0; t < 10; ++t) {
    Raster img(48, 48, 3);
    std::uniform_int_distribution<int> u(0, 255);
    for (auto& v : img.data()) v = static_cast<std::uint8_t>(u(rng));
    const BinaryMask m = tissue_mask(img, PreprocessConfig{});
    EXPECT_EQ(majority_cleanup(m), m);
  }
}

TEST(MajorityCleanup, RemovesSpeckleKeepsTies) {
  BinaryMask m(5, 5);
  m.set(2, 2, true);
  EXPECT_EQ(majority_cleanup(m).count(), 0U);
  // corner pixel: 4 in-bounds pixels, 2 set → tie keeps centre
  BinaryMask c(4, 4);
  c.set(0, 0, true);
  c.set(1, 0, true);
  EXPECT_TRUE(majority_cleanup(c).at(0, 0));
}

TEST(PreprocessConfig, Validation) {
  PreprocessConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.low_percentile = 0.7;
  cfg.high_percentile = 0.2;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.deconvolution_channel = 3;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(FeatureChannel, HematoxylinBlobIsBright) {
  // a hematoxylin-coloured disc on white becomes the brightest region
  const StainMatrix m = StainMatrix::preset("h_e");
  Raster img(64, 64, 3, 255);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      if ((x - 32) * (x - 32) + (y - 32) * (y - 32) > 100) continue;
      for (int c = 0; c < 3; ++c) {
        img.at(x, y, c) = static_cast<std::uint8_t>(std::lround(255 * std::pow(10.0, -0.8 * m.rows()[0][c])));
      }
    }
  }
  const FloatRaster f = feature_channel(img, PreprocessConfig{});
  EXPECT_GT(f.at(32, 32), 200.0F);
  EXPECT_LT(f.at(2, 2), 10.0F);
}
