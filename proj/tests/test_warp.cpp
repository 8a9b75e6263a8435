#include <doctest.h>

#include <cmath>

#include "tli/image.hpp"
#include "tli/rng.hpp"
#include "tli/warp.hpp"

using namespace tli;

namespace {

WarpGrid random_grid(Rng& rng, double scale) {
  WarpGrid g;
  for (double& v : g.values()) v = rng.uniform(-scale, scale);
  return g;
}

Image random_image(int w, int h, int c, Rng& rng) {
  Image img(w, h, c);
  for (double& v : img.data()) v = rng.uniform();
  return img;
}

// Smooth periodic test image; bilinear sampling of it is differentiable
// almost everywhere and finite differences stay well conditioned.
Image smooth_image(int w, int h, int c, Rng& rng) {
  Image img(w, h, c);
  for (int ch = 0; ch < c; ++ch) {
    const double fx = rng.uniform_int(1, 3), fy = rng.uniform(0.5, 2.0), ph = rng.uniform(0.0, kTwoPi);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        img.at(ch, y, x) = 0.5 + 0.4 * std::sin(kTwoPi * fx * x / w + ph) * std::cos(fy * y / h * kPi);
  }
  return img;
}

// Direct summation of the tensor-product basis over an extended lattice.
double brute_force(const WarpGrid& g, int comp, int y, int x, int height, int width) {
  const double sx = (x + 0.5) * WarpGrid::kCols / width - 0.5;
  const double sy = (y + 0.5) * WarpGrid::kRows / height - 0.5;
  double acc = 0.0;
  for (int i = -3; i < WarpGrid::kRows + 3; ++i)
    for (int j = -3; j < WarpGrid::kCols + 3; ++j) {
      const double w = cubic_bspline(sy - i) * cubic_bspline(sx - j);
      if (w == 0.0) continue;
      const int ii = std::clamp(i, 0, WarpGrid::kRows - 1);
      const int jj = ((j % WarpGrid::kCols) + WarpGrid::kCols) % WarpGrid::kCols;
      acc += w * (comp == 0 ? g.dx(ii, jj) : g.dy(ii, jj));
    }
  return acc;
}

double dot(const Image& a, const Image& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

}  // namespace

TEST_CASE("cubic basis values") {
  CHECK(cubic_bspline(0.0) == doctest::Approx(2.0 / 3.0));
  CHECK(cubic_bspline(1.0) == doctest::Approx(1.0 / 6.0));
  CHECK(cubic_bspline(-1.0) == doctest::Approx(1.0 / 6.0));
  CHECK(cubic_bspline(2.0) == 0.0);
  CHECK(cubic_bspline(0.5) == doctest::Approx(23.0 / 48.0));
}

TEST_CASE("dense flow matches brute-force basis summation on 50 grids") {
  Rng rng(11);
  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    const WarpGrid g = random_grid(rng, 3.0);
    const int height = k % 2 ? 80 : 20, width = 3 * height;
    const FlowField f = eval_spline(g, height, width);
    for (int y = 0; y < height; y += 3)
      for (int x = 0; x < width; x += 2)
        for (int c = 0; c < 2; ++c)
          worst = std::max(worst, std::abs(f.at(c, y, x) - brute_force(g, c, y, x, height, width)));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("partition of unity: a constant lattice is a constant shift") {
  WarpGrid g;
  for (int i = 0; i < WarpGrid::kRows; ++i)
    for (int j = 0; j < WarpGrid::kCols; ++j) {
      g.dx(i, j) = 1.75;
      g.dy(i, j) = -0.5;
    }
  const FlowField f = eval_spline(g, 80, 240);
  double worst = 0.0;
  for (int y = 0; y < 80; ++y)
    for (int x = 0; x < 240; ++x)
      worst = std::max({worst, std::abs(f.at(0, y, x) - 1.75), std::abs(f.at(1, y, x) + 0.5)});
  CHECK(worst < 1e-12);
}

TEST_CASE("integer horizontal flow equals a column rotation") {
  Rng rng(12);
  const Image p = random_image(120, 40, 3, rng);
  FlowField f(120, 40, 2, DomainTag::LogLinear);
  for (double& v : f.plane(0)) v = 7.0;
  // out(x) = p(x + 7): content moves left by 7 columns
  CHECK(warp(p, f) == shift_columns(p, -7));
  CHECK(warp(p, FlowField(120, 40, 2, DomainTag::LogLinear)) == p);
}

TEST_CASE("warp wraps horizontally with the panorama period") {
  Rng rng(13);
  const Image p = random_image(60, 20, 1, rng);
  FlowField a(60, 20, 2, DomainTag::LogLinear), b(60, 20, 2, DomainTag::LogLinear);
  for (double& v : a.plane(0)) v = 0.3;
  for (double& v : b.plane(0)) v = 60.3;
  const Image wa = warp(p, a), wb = warp(p, b);
  double worst = 0.0;
  for (std::size_t i = 0; i < wa.size(); ++i) worst = std::max(worst, std::abs(wa.data()[i] - wb.data()[i]));
  CHECK(worst < 1e-12);
}

TEST_CASE("eval_spline_adjoint is the transpose of eval_spline") {
  Rng rng(14);
  for (int k = 0; k < 5; ++k) {
    const WarpGrid g = random_grid(rng, 1.0);
    FlowField d(96, 32, 2, DomainTag::LogLinear);
    for (double& v : d.data()) v = rng.uniform(-1.0, 1.0);
    const WarpGrid at = eval_spline_adjoint(d);
    double lattice_dot = 0.0;
    for (int i = 0; i < WarpGrid::kSize; ++i) lattice_dot += g.values()[i] * at.values()[i];
    CHECK(dot(eval_spline(g, 32, 96), d) == doctest::Approx(lattice_dot).epsilon(1e-12));
  }
}

TEST_CASE("warp_grad matches central differences on 20 instances") {
  Rng rng(15);
  const double h = 1e-6;
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    const Image p = smooth_image(96, 32, 3, rng);
    const WarpGrid theta = random_grid(rng, 2.0);
    Image up(96, 32, 3);
    for (double& v : up.data()) v = rng.uniform(-1.0, 1.0);
    const WarpGrid g = warp_grad(p, theta, up);
    double gnorm = 0.0;
    for (double v : g.values()) gnorm = std::max(gnorm, std::abs(v));
    for (int t = 0; t < 12; ++t) {
      const int idx = rng.uniform_int(0, WarpGrid::kSize - 1);
      WarpGrid plus = theta, minus = theta;
      plus.values()[idx] += h;
      minus.values()[idx] -= h;
      const double fd = (dot(warp(p, eval_spline(plus, 32, 96)), up) - dot(warp(p, eval_spline(minus, 32, 96)), up)) / (2 * h);
      worst = std::max(worst, std::abs(fd - g.values()[idx]) / std::max(gnorm, 1e-12));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("jacobian of the warp agrees with warp_flow_grad") {
  Rng rng(16);
  const Image p = smooth_image(96, 32, 2, rng);
  const FlowField f = eval_spline(random_grid(rng, 2.0), 32, 96);
  Image jx, jy;
  const Image w = warp_with_jacobian(p, f, jx, jy);
  CHECK(w == warp(p, f));
  Image up(96, 32, 2);
  for (double& v : up.data()) v = rng.uniform(-1.0, 1.0);
  const FlowField g = warp_flow_grad(p, f, up);
  for (int y = 0; y < 32; y += 5)
    for (int x = 0; x < 96; x += 7) {
      const double ex = jx.at(0, y, x) * up.at(0, y, x) + jx.at(1, y, x) * up.at(1, y, x);
      CHECK(g.at(0, y, x) == doctest::Approx(ex).epsilon(1e-12));
    }
}

TEST_CASE("invert_flow undoes a smooth warp") {
  Rng rng(17);
  const FlowField f = eval_spline(random_grid(rng, 2.0), 40, 120);
  const FlowField g = invert_flow(f);
  double worst = 0.0;
  for (int y = 5; y < 35; ++y)
    for (int x = 0; x < 120; ++x) {
      // g(x) + f(x + g(x)) = 0, with f sampled bilinearly
      const double sx = x + g.at(0, y, x), sy = y + g.at(1, y, x);
      const int ix = static_cast<int>(std::floor(sx)), iy = static_cast<int>(std::floor(sy));
      const double fx = sx - ix, fy = sy - iy;
      auto at = [&](int c, int yy, int xx) { return f.at(c, std::clamp(yy, 0, 39), ((xx % 120) + 120) % 120); };
      for (int c = 0; c < 2; ++c) {
        const double v = (1 - fy) * ((1 - fx) * at(c, iy, ix) + fx * at(c, iy, ix + 1)) +
                         fy * ((1 - fx) * at(c, iy + 1, ix) + fx * at(c, iy + 1, ix + 1));
        worst = std::max(worst, std::abs(g.at(c, y, x) + v));
      }
    }
  CHECK(worst < 1e-3);
}

TEST_CASE("endpoint error and grid io") {
  Rng rng(18);
  const WarpGrid g = random_grid(rng, 1.0);
  const FlowField f = eval_spline(g, 20, 60);
  CHECK(mean_endpoint_error(f, f) == 0.0);
  FlowField shifted = f;
  for (double& v : shifted.plane(0)) v += 3.0;
  for (double& v : shifted.plane(1)) v += 4.0;
  CHECK(mean_endpoint_error(f, shifted) == doctest::Approx(5.0));
  const auto path = std::filesystem::temp_directory_path() / "tli_test_grid.f32";
  write_warp_grid(path, g);
  const WarpGrid back = read_warp_grid(path);
  for (int i = 0; i < WarpGrid::kSize; ++i) CHECK(back.values()[i] == doctest::Approx(g.values()[i]).epsilon(1e-6));
  CHECK(WarpGrid{}.is_identity());
  CHECK(g.max_abs() <= 1.0);
}
