#include <doctest.h>

#include <cmath>

#include "tli/image.hpp"
#include "tli/io.hpp"
#include "tli/rng.hpp"

using namespace tli;
using namespace tli::io;

namespace {

Image random_image(int w, int h, int c, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  Image img(w, h, c);
  for (double& v : img.data()) v = rng.uniform(lo, hi);
  return img;
}

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST_CASE("gamma decode/encode round trip over a dense sweep") {
  Image sweep(10000, 1, 1);
  for (int i = 0; i < 10000; ++i) sweep.at(0, 0, i) = i / 9999.0;
  const GammaParams g;
  CHECK(g.gamma == doctest::Approx(1.0 / 2.2).epsilon(1e-15));
  CHECK(max_abs_diff(gamma_encode(gamma_decode(sweep, g), g), sweep) < 1e-6);
  CHECK(max_abs_diff(gamma_decode(gamma_encode(sweep, g), g), sweep) < 1e-6);
}

TEST_CASE("gamma encode follows the power law") {
  Image p(1, 1, 1);
  p.at(0, 0, 0) = 0.25;
  const GammaParams g{0.9, 1.0 / 2.2};
  CHECK(gamma_encode(p, g).at(0, 0, 0) == doctest::Approx(0.9 * std::pow(0.25, 1.0 / 2.2)));
  CHECK(gamma_decode(gamma_encode(p, g), g).at(0, 0, 0) == doctest::Approx(0.25));
}

TEST_CASE("invalid gamma parameters are rejected") {
  CHECK_THROWS(GammaParams{0.0, 0.5}.validate());
  CHECK_THROWS(GammaParams{1.0, -1.0}.validate());
  CHECK_NOTHROW(GammaParams{}.validate());
}

TEST_CASE("log encode/decode") {
  const Image p = random_image(60, 20, 3, 1, 0.01, 1.0);
  const Image l = log_encode(p);
  CHECK(l.tag() == DomainTag::LogLinear);
  CHECK(max_abs_diff(log_decode(l), p) < 1e-12);
  Image dark(1, 1, 1);
  CHECK(log_encode(dark).at(0, 0, 0) == doctest::Approx(std::log(kDefaultLogFloor)));
}

TEST_CASE("rotate_pano is a cyclic column shift with an exact inverse") {
  const Image p = random_image(120, 40, 3, 2);
  for (double angle : {0.3, -1.7, kPi, 2.0 * kTwoPi + 0.1}) {
    const Image r = rotate_pano(p, angle);
    CHECK(rotate_pano(r, -angle) == p);
    const int s = angle_to_columns(angle, p.width());
    CHECK(r.at(1, 7, ((5 + s) % 120 + 120) % 120) == p.at(1, 7, 5));
  }
  CHECK(angle_to_columns(kPi / 2.0, 240) == 60);
  CHECK(rotate_pano(p, kTwoPi) == p);
}

TEST_CASE("column yaw convention") {
  CHECK(column_center_yaw(0, 240) == doctest::Approx(-kPi + kPi / 240.0));
  CHECK(column_center_yaw(120, 240) == doctest::Approx(kPi / 240.0));
}

TEST_CASE("panorama geometry") {
  CHECK_NOTHROW(check_panorama_geometry(240, 80));
  CHECK_THROWS_AS(check_panorama_geometry(240, 81), DataError);
  CHECK_THROWS_AS(check_panorama_geometry(150, 50), DataError);
}

TEST_CASE("recompose broadcasts a single-channel shading") {
  Image r(3, 1, 3, DomainTag::LogLinear, std::log(0.5));
  Image s(3, 1, 1, DomainTag::LogLinear, std::log(0.5));
  const Image out = recompose(r, s);
  for (double v : out.data()) CHECK(v == doctest::Approx(0.25));
  Image bright(3, 1, 1, DomainTag::LogLinear, 3.0);
  const Image clipped = recompose(r, bright);
  for (double v : clipped.data()) CHECK(v == 1.0);
}

TEST_CASE("luminance, blur and statistics") {
  Image p(4, 2, 3);
  for (int x = 0; x < 4; ++x)
    for (int y = 0; y < 2; ++y) {
      p.at(0, y, x) = 1.0;
      p.at(1, y, x) = 0.0;
      p.at(2, y, x) = 0.0;
    }
  CHECK(luminance(p).at(0, 1, 2) == doctest::Approx(0.2126));
  Image flat(30, 10, 1, DomainTag::SrgbUnit, 0.4);
  CHECK(max_abs_diff(gaussian_blur(flat, 2.0), flat) < 1e-12);
  const Image a = random_image(30, 10, 3, 3);
  CHECK(mse(a, a) == 0.0);
  CHECK(pearson(a, a) == doctest::Approx(1.0));
  Image b = a;
  for (double& v : b.data()) v = 2.0 - 3.0 * v;
  CHECK(pearson(a, b) == doctest::Approx(-1.0));
  Image offset = a;
  for (double& v : offset.plane(1)) v += 5.0;
  CHECK(pearson(a, offset) < 0.5);
  CHECK(pearson_per_channel_offset(a, offset) == doctest::Approx(1.0));
}

TEST_CASE("png and float map round trips") {
  const auto dir = std::filesystem::temp_directory_path() / "tli_test_image";
  std::filesystem::create_directories(dir);
  Image p(60, 20, 3);
  Rng rng(4);
  for (double& v : p.data()) v = rng.uniform_int(0, 255) / 255.0;
  write_png(dir / "a.png", p);
  CHECK(max_abs_diff(read_png(dir / "a.png"), p) < 1e-12);
  const Image l = random_image(60, 20, 2, 5, -3.0, 1.0);
  Image tagged = l;
  tagged.set_tag(DomainTag::LogLinear);
  write_float_map(dir / "m.f32", tagged);
  const Image back = read_float_map(dir / "m.f32");
  CHECK(back.tag() == DomainTag::LogLinear);
  CHECK(max_abs_diff(back, tagged) < 1e-6);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), DataError);
  std::filesystem::remove_all(dir);
}
