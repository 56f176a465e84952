#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace testsupport {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

}  // namespace

// --- Texture --------------------------------------------------------------

Texture::Texture(double extent, std::uint64_t seed) : extent_(extent) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0.0, extent);
  std::uniform_real_distribution<double> sig(2.0, 7.0);
  std::uniform_real_distribution<double> amp(40.0, 110.0);
  std::uniform_real_distribution<double> sign(0.0, 1.0);
  const int count = static_cast<int>(extent * extent / 450.0);
  blobs_.reserve(count);
  for (int i = 0; i < count; ++i) {
    const double a = amp(rng) * (sign(rng) < 0.75 ? -1.0 : 1.0);
    blobs_.push_back({pos(rng), pos(rng), sig(rng), a});
  }
  std::uniform_real_distribution<double> freq(0.01, 0.05);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  wave_ = {freq(rng), freq(rng), phase(rng), phase(rng),
           freq(rng), freq(rng), phase(rng), phase(rng)};
}

double Texture::value(Point2 p) const {
  double v = 170.0;
  v += 12.0 * std::sin(wave_[0] * p.x + wave_[2]) * std::cos(wave_[1] * p.y + wave_[3]);
  v += 8.0 * std::sin(wave_[4] * p.y + wave_[6]) * std::cos(wave_[5] * p.x + wave_[7]);
  for (const Blob& b : blobs_) {
    const double dx = p.x - b.x;
    const double dy = p.y - b.y;
    const double lim = 4.0 * b.sigma;
    if (std::abs(dx) > lim || std::abs(dy) > lim) continue;
    v += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
  }
  return std::clamp(v, 0.0, 255.0);
}

FloatRaster Texture::render(int width, int height, double angle, double scale) const {
  FloatRaster out(width, height);
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double ocx = (width - 1) / 2.0;
  const double ocy = (height - 1) / 2.0;
  const double mid = extent_ / 2.0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double qx = x - ocx;
      const double qy = y - ocy;
      const Point2 p{mid + scale * (c * qx - s * qy), mid + scale * (s * qx + c * qy)};
      out.at(x, y) = static_cast<float>(value(p));
    }
  }
  return out;
}

FloatRaster blob_image(int size, double sigma, Point2 centre, double depth) {
  FloatRaster out(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = x - centre.x;
      const double dy = y - centre.y;
      out.at(x, y) =
          static_cast<float>(255.0 - depth * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)));
    }
  }
  return out;
}

FloatRaster convolve2d_oracle(const FloatRaster& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int r = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> w(2 * r + 1);
  double sum = 0.0;
  for (int k = -r; k <= r; ++k) {
    w[k + r] = std::exp(-(k * k) / (2.0 * sigma * sigma));
    sum += w[k + r];
  }
  for (double& v : w) v /= sum;
  const int W = img.width();
  const int H = img.height();
  FloatRaster out(W, H);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int j = -r; j <= r; ++j) {
        const int yy = std::clamp(y + j, 0, H - 1);
        for (int i = -r; i <= r; ++i) {
          const int xx = std::clamp(x + i, 0, W - 1);
          acc += w[i + r] * w[j + r] * img.at(xx, yy);
        }
      }
      out.at(x, y) = static_cast<float>(acc);
    }
  }
  return out;
}

Raster smooth_rgb(int width, int height, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> f(0.02, 0.12);
  std::uniform_real_distribution<double> ph(0.0, kTwoPi);
  Raster out(width, height, 3);
  for (int c = 0; c < 3; ++c) {
    const double fx = f(rng), fy = f(rng), px = ph(rng), py = ph(rng);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double v = 128.0 + 60.0 * std::sin(fx * x + px) + 50.0 * std::cos(fy * y + py);
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

// --- linear algebra -------------------------------------------------------

Mat3 inverse3_cramer(const Mat3& m) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  if (std::abs(det) < 1e-300) throw std::runtime_error("singular matrix in oracle");
  Mat3 inv{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      // cofactor of (c, r) gives the adjugate entry (r, c)
      const int r0 = (c + 1) % 3, r1 = (c + 2) % 3;
      const int c0 = (r + 1) % 3, c1 = (r + 2) % 3;
      inv[r][c] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
    }
  }
  return inv;
}

AffineModel affine_normal_equations(const std::vector<Correspondence>& pairs) {
  double mx = 0.0, my = 0.0;
  for (const auto& c : pairs) {
    mx += c.source.x;
    my += c.source.y;
  }
  mx /= pairs.size();
  my /= pairs.size();
  Mat3 n{};
  std::array<double, 3> bx{}, by{};
  for (const auto& c : pairs) {
    const std::array<double, 3> row{c.source.x - mx, c.source.y - my, 1.0};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) n[i][j] += row[i] * row[j];
      bx[i] += row[i] * c.target.x;
      by[i] += row[i] * c.target.y;
    }
  }
  const Mat3 inv = inverse3_cramer(n);
  std::array<double, 3> px{}, py{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      px[i] += inv[i][j] * bx[j];
      py[i] += inv[i][j] * by[j];
    }
  }
  AffineModel m;
  m.a11 = px[0];
  m.a12 = px[1];
  m.tx = px[2] - px[0] * mx - px[1] * my;
  m.a21 = py[0];
  m.a22 = py[1];
  m.ty = py[2] - py[0] * mx - py[1] * my;
  return m;
}

bool affine_three_oracle(const Correspondence& a, const Correspondence& b, const Correspondence& c,
                         AffineModel& out) {
  const Mat3 s{{{a.source.x, a.source.y, 1.0},
                {b.source.x, b.source.y, 1.0},
                {c.source.x, c.source.y, 1.0}}};
  const double area2 = (b.source.x - a.source.x) * (c.source.y - a.source.y) -
                       (b.source.y - a.source.y) * (c.source.x - a.source.x);
  if (std::abs(area2) < 1e-6) return false;
  const Mat3 inv = inverse3_cramer(s);
  const std::array<double, 3> X{a.target.x, b.target.x, c.target.x};
  const std::array<double, 3> Y{a.target.y, b.target.y, c.target.y};
  std::array<double, 3> px{}, py{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      px[i] += inv[i][j] * X[j];
      py[i] += inv[i][j] * Y[j];
    }
  }
  out = AffineModel{px[0], px[1], py[0], py[1], px[2], py[2]};
  return true;
}

double residual(const AffineModel& m, const Correspondence& c) {
  const double x = m.a11 * c.source.x + m.a12 * c.source.y + m.tx;
  const double y = m.a21 * c.source.x + m.a22 * c.source.y + m.ty;
  return std::hypot(x - c.target.x, y - c.target.y);
}

// --- point sets -----------------------------------------------------------

Point2 Quadratic::operator()(Point2 p) const {
  const std::array<double, 6> b{1.0, p.x, p.y, p.x * p.x, p.x * p.y, p.y * p.y};
  Point2 out;
  for (int k = 0; k < 6; ++k) {
    out.x += cx[k] * b[k];
    out.y += cy[k] * b[k];
  }
  return out;
}

Quadratic random_quadratic(std::mt19937_64& rng, double extent) {
  std::uniform_real_distribution<double> shift(-20.0, 20.0);
  std::uniform_real_distribution<double> lin(-0.1, 0.1);
  std::uniform_real_distribution<double> quad(-0.05 / extent, 0.05 / extent);
  Quadratic q;
  q.cx = {shift(rng), 1.0 + lin(rng), lin(rng), quad(rng), quad(rng), quad(rng)};
  q.cy = {shift(rng), lin(rng), 1.0 + lin(rng), quad(rng), quad(rng), quad(rng)};
  return q;
}

std::vector<Point2> random_points(std::mt19937_64& rng, int n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<Point2> pts(n);
  for (auto& p : pts) {
    p.x = u(rng);
    p.y = u(rng);
  }
  return pts;
}

std::vector<Point2> convex_hull(std::vector<Point2> pts) {
  std::sort(pts.begin(), pts.end(),
            [](Point2 a, Point2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  auto cross = [](Point2 o, Point2 a, Point2 b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
  };
  std::vector<Point2> h(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
    h[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross(h[k - 2], h[k - 1], pts[i - 1]) <= 0) --k;
    h[k++] = pts[i - 1];
  }
  h.resize(k - 1);
  return h;
}

bool inside_hull(const std::vector<Point2>& hull, Point2 p, double margin) {
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Point2 a = hull[i];
    const Point2 b = hull[(i + 1) % hull.size()];
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    const double c = ((b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)) / len;
    if (c < margin) return false;
  }
  return true;
}

ConsensusFixture consensus_fixture(std::uint64_t seed, int inliers, int outliers, double noise) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1000.0);
  std::uniform_real_distribution<double> ratio(0.2, 0.85);
  std::normal_distribution<double> n(0.0, noise);
  const double th = 15.0 * std::numbers::pi / 180.0;
  ConsensusFixture f;
  f.truth = AffineModel{1.1 * std::cos(th), -1.1 * std::sin(th), 1.1 * std::sin(th),
                        1.1 * std::cos(th), 30.0, -12.0};
  std::vector<std::pair<Correspondence, bool>> all;
  for (int i = 0; i < inliers; ++i) {
    Correspondence c;
    c.source = {u(rng), u(rng)};
    const Point2 t = f.truth.apply(c.source);
    c.target = {t.x + n(rng), t.y + n(rng)};
    all.emplace_back(c, true);
  }
  for (int i = 0; i < outliers; ++i) {
    Correspondence c;
    c.source = {u(rng), u(rng)};
    c.target = {u(rng), u(rng)};
    all.emplace_back(c, false);
  }
  std::shuffle(all.begin(), all.end(), rng);
  for (std::size_t i = 0; i < all.size(); ++i) {
    all[i].first.ratio = ratio(rng);
    all[i].first.source_index = static_cast<int>(i);
    all[i].first.target_index = static_cast<int>(i);
    f.tentative.push_back(all[i].first);
    f.inlier.push_back(all[i].second);
  }
  return f;
}

std::vector<bool> exhaustive_ransac_oracle(const std::vector<Correspondence>& tentative,
                                           double tolerance) {
  const std::size_t n = tentative.size();
  std::size_t best = 0;
  AffineModel best_model;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      for (std::size_t k = j + 1; k < n; ++k) {
        AffineModel m;
        if (!affine_three_oracle(tentative[i], tentative[j], tentative[k], m)) continue;
        std::size_t support = 0;
        for (const auto& c : tentative) support += residual(m, c) <= tolerance ? 1 : 0;
        if (support > best) {
          best = support;
          best_model = m;
        }
      }
    }
  }
  std::vector<Correspondence> members;
  for (const auto& c : tentative) {
    if (residual(best_model, c) <= tolerance) members.push_back(c);
  }
  const AffineModel refit = affine_normal_equations(members);
  std::vector<bool> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = residual(refit, tentative[i]) <= tolerance;
  return out;
}

std::size_t best_triple_support(const std::vector<Correspondence>& tentative, double tolerance) {
  const std::size_t n = tentative.size();
  std::size_t best = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      for (std::size_t k = j + 1; k < n; ++k) {
        AffineModel m;
        if (!affine_three_oracle(tentative[i], tentative[j], tentative[k], m)) continue;
        std::size_t support = 0;
        for (const auto& c : tentative) support += residual(m, c) <= tolerance ? 1 : 0;
        best = std::max(best, support);
      }
    }
  }
  return best;
}

// --- masks ----------------------------------------------------------------

BinaryMask random_mask(std::mt19937_64& rng, int width, int height, double density) {
  std::bernoulli_distribution b(density);
  BinaryMask m(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) m.set(x, y, b(rng));
  }
  return m;
}

BinaryMask square_mask(int width, int height, int x0, int y0, int side) {
  BinaryMask m(width, height);
  for (int y = y0; y < y0 + side; ++y) {
    for (int x = x0; x < x0 + side; ++x) m.set(x, y, true);
  }
  return m;
}

// --- files ----------------------------------------------------------------

TempDir::TempDir() {
  std::string tmpl = (std::filesystem::temp_directory_path() / "stainalign-test-XXXXXX").string();
  if (mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace testsupport
