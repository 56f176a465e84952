#pragma once

// Fixtures and independent oracles shared by the unit and acceptance tests.
// Nothing here calls the library routine it is used to check.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "stainalign/geometry.hpp"
#include "stainalign/matching.hpp"
#include "stainalign/raster.hpp"

namespace testsupport {

using stainalign::AffineModel;
using stainalign::BinaryMask;
using stainalign::Correspondence;
using stainalign::FloatRaster;
using stainalign::Point2;
using stainalign::Raster;

// --- images ---------------------------------------------------------------

/// Continuous "noise plus blobs" texture that can be rendered under any
/// similarity transform without resampling.
class Texture {
 public:
  Texture(double extent, std::uint64_t seed);

  /// Intensity at a point of the texture's own frame.
  double value(Point2 p) const;

  /// Renders a width x height image where pixel q shows value(frame_to_texture(q)).
  /// frame_to_texture is a similarity: p = centre + s R(theta) (q - out_centre).
  FloatRaster render(int width, int height, double angle, double scale) const;

  double extent() const { return extent_; }

 private:
  struct Blob {
    double x, y, sigma, amp;
  };
  double extent_;
  std::vector<Blob> blobs_;
  std::array<double, 8> wave_{};
};

/// White field with a single dark Gaussian blob.
FloatRaster blob_image(int size, double sigma, Point2 centre, double depth);

/// Direct 2-D convolution with a sampled, normalised Gaussian (radius ceil(4 sigma)),
/// clamp-to-edge borders, double accumulation.
FloatRaster convolve2d_oracle(const FloatRaster& img, double sigma);

/// Smooth random RGB image for warp comparisons.
Raster smooth_rgb(int width, int height, std::uint64_t seed);

// --- linear algebra -------------------------------------------------------

using Mat3 = std::array<std::array<double, 3>, 3>;

/// Inverse via the adjugate (Cramer's rule).
Mat3 inverse3_cramer(const Mat3& m);

/// Ordinary least squares affine fit through the 3x3 normal equations,
/// solved with Cramer's rule; independent of the library's QR/SVD path.
AffineModel affine_normal_equations(const std::vector<Correspondence>& pairs);

/// Exact affine through three pairs; false when degenerate.
bool affine_three_oracle(const Correspondence& a, const Correspondence& b,
                         const Correspondence& c, AffineModel& out);

double residual(const AffineModel& m, const Correspondence& c);

// --- point-set fixtures ---------------------------------------------------

struct Quadratic {
  std::array<double, 6> cx{};
  std::array<double, 6> cy{};
  Point2 operator()(Point2 p) const;
};

/// Random quadratic map that stays a gentle deformation over [0, extent]^2.
Quadratic random_quadratic(std::mt19937_64& rng, double extent);

std::vector<Point2> random_points(std::mt19937_64& rng, int n, double lo, double hi);

/// Convex hull (counter-clockwise) and point-in-hull test with a margin.
std::vector<Point2> convex_hull(std::vector<Point2> pts);
bool inside_hull(const std::vector<Point2>& hull, Point2 p, double margin = 0.0);

struct ConsensusFixture {
  std::vector<Correspondence> tentative;
  std::vector<bool> inlier;
  AffineModel truth;
};

/// `inliers` pairs from a known affine plus N(0, noise) per axis, mixed with
/// `outliers` uniform random pairs over a 1000 px square; ratios are drawn
/// independently of inlier status.
ConsensusFixture consensus_fixture(std::uint64_t seed, int inliers, int outliers, double noise);

/// Exhaustive minimal-sample RANSAC: every triple is a hypothesis; the best
/// support (first on ties) is refit by least squares and re-thresholded.
std::vector<bool> exhaustive_ransac_oracle(const std::vector<Correspondence>& tentative,
                                           double tolerance);

/// Largest support of any exact 3-point affine over the set.
std::size_t best_triple_support(const std::vector<Correspondence>& tentative, double tolerance);

// --- masks ----------------------------------------------------------------

BinaryMask random_mask(std::mt19937_64& rng, int width, int height, double density);
BinaryMask square_mask(int width, int height, int x0, int y0, int side);

// --- files ----------------------------------------------------------------

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& p);

}  // namespace testsupport
