#include <doctest.h>

#include <cmath>
#include <optional>

#include "tli/azimuth.hpp"
#include "tli/synth.hpp"

using namespace tli;
using namespace tli::synth;

namespace {

// Ray/axis-aligned box intersection (slab test); box spans z in [0, height].
std::optional<double> hit_box(const Vec3& o, const Vec3& d, const Box& b) {
  double t0 = 1e-9, t1 = 1e300;
  const double lo[3] = {b.x0, b.y0, 0.0}, hi[3] = {b.x1, b.y1, b.height};
  const double oo[3] = {o.x, o.y, o.z}, dd[3] = {d.x, d.y, d.z};
  for (int k = 0; k < 3; ++k) {
    if (std::abs(dd[k]) < 1e-15) {
      if (oo[k] < lo[k] || oo[k] > hi[k]) return std::nullopt;
      continue;
    }
    double a = (lo[k] - oo[k]) / dd[k], c = (hi[k] - oo[k]) / dd[k];
    if (a > c) std::swap(a, c);
    t0 = std::max(t0, a);
    t1 = std::min(t1, c);
    if (t0 > t1) return std::nullopt;
  }
  return t0;
}

SynthScene one_box_scene() {
  SynthScene s = empty_scene();
  Box b;
  b.x0 = 4.0;
  b.x1 = 9.0;
  b.y0 = 6.0;
  b.y1 = 14.0;
  b.height = 10.0;
  b.face_albedo.fill({0.4, 0.4, 0.4});
  s.boxes.push_back(b);
  return s;
}

Illumination test_illumination(double az) {
  Illumination il;
  il.sun_azimuth = az;
  il.sun_color = {1.0, 0.9, 0.8};
  il.sky_color = {0.5, 0.6, 0.9};
  return il;
}

}  // namespace

TEST_CASE("rendering is deterministic") {
  const auto scene = random_scene(41);
  const auto il = random_illuminations(3, 42);
  CHECK(random_scene(41).boxes.size() == scene.boxes.size());
  CHECK(random_illuminations(3, 42) == il);
  const auto a = make_stack(scene, il, 2.0, 43, 120, 40);
  const auto b = make_stack(scene, il, 2.0, 43, 120, 40);
  for (std::size_t i = 0; i < il.size(); ++i) {
    CHECK(a.stack.frames[i] == b.stack.frames[i]);
    CHECK(a.gt_warps[i] == b.gt_warps[i]);
  }
}

TEST_CASE("render factors recompose to the panorama") {
  const auto r = render(random_scene(44), test_illumination(1.0), 240, 80);
  CHECK(gamma_encode(recompose(r.log_reflectance, r.shading.full_log_shading())) == r.pano);
  for (double m : r.shading.mask.data()) {
    CHECK(m >= 0.0);
    CHECK(m <= 1.0);
  }
}

TEST_CASE("ground mask of the empty scene is the Lambert cosine") {
  const auto scene = empty_scene();
  const Image m = shadow_mask(scene, 0.7, 240, 80);
  const Image sky = sky_mask(scene, 240, 80);
  for (int y = 0; y < 80; y += 3)
    for (int x = 0; x < 240; x += 5) {
      if (sky.at(0, y, x) > 0.5)
        CHECK(m.at(0, y, x) == 0.0);
      else
        CHECK(m.at(0, y, x) == doctest::Approx(std::sin(scene.sun_elevation)));
    }
  // rows above the horizon see the sky
  CHECK(sky.at(0, 0, 17) == 1.0);
  CHECK(sky.at(0, 79, 17) == 0.0);
}

TEST_CASE("cast shadows agree with an independent ray cast") {
  const SynthScene scene = one_box_scene();
  const Box& box = scene.boxes.front();
  const Vec3 cam{0.0, 0.0, scene.camera_height};
  int checked = 0, shadowed = 0, mismatched = 0;
  for (double az : {0.3, 1.2, 2.0}) {
    const Image m = shadow_mask(scene, az, 240, 80);
    const Vec3 sun = sun_direction(scene, az);
    for (int y = 41; y < 80; ++y)
      for (int x = 0; x < 240; ++x) {
        const Vec3 d = pixel_direction(y, x, 240, 80);
        if (d.z >= 0.0) continue;
        const double t = -cam.z / d.z;
        if (hit_box(cam, d, box).value_or(1e300) < t) continue;  // the camera sees the box
        const Vec3 p{cam.x + t * d.x, cam.y + t * d.y, 0.0};
        const bool dark = hit_box({p.x, p.y, 1e-9}, sun, box).has_value();
        const double expect = dark ? 0.0 : std::sin(scene.sun_elevation);
        // pixels whose footprint straddles the shadow edge may differ
        if (std::abs(m.at(0, y, x) - expect) > 1e-9) ++mismatched;
        shadowed += dark;
        ++checked;
      }
  }
  CHECK(shadowed > 50);
  CHECK(mismatched <= checked / 200);
}

TEST_CASE("brightest sky column lies within one bin of the sun") {
  for (double az : {-2.5, -0.4, 0.0, 1.1, 3.0}) {
    const auto r = render(empty_scene(), test_illumination(az), 240, 80);
    const Image lum = luminance(r.pano);
    int best = 0;
    double best_v = -1.0;
    for (int x = 0; x < 240; ++x)
      for (int y = 0; y < 40; ++y)
        if (lum.at(0, y, x) > best_v) {
          best_v = lum.at(0, y, x);
          best = x;
        }
    CHECK(std::abs(wrap_angle(column_center_yaw(best, 240) - az)) <= AzimuthDistribution::bin_width());
    CHECK(std::abs(wrap_angle(circular_mean(estimate_azimuth(r.pano)) - az)) <= AzimuthDistribution::bin_width());
  }
}

TEST_CASE("empty scene is yaw-symmetric apart from the sun") {
  // a quarter-turn of the sun is a quarter-turn of the panorama
  const auto a = render(empty_scene(), test_illumination(0.0), 240, 80);
  const auto b = render(empty_scene(), test_illumination(kPi / 2.0), 240, 80);
  const Image ra = rotate_pano(a.pano, kPi / 2.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) worst = std::max(worst, std::abs(ra.data()[i] - b.pano.data()[i]));
  CHECK(worst < 1e-9);
}

TEST_CASE("spacetime grid layout") {
  const auto g = spacetime_grid(2, 3, 45, 120, 40);
  REQUIRE(g.cells.size() == 2);
  CHECK(g.cells[0].size() == 3);
  CHECK(g.illuminations.size() == 3);
  CHECK(g.cells[1][2].pano.width() == 120);
}

TEST_CASE("factor stack matches its factors") {
  FactorStackOptions o;
  o.width = 120;
  o.height = 40;
  o.seed = 46;
  const auto fs = make_factor_stack(o);
  REQUIRE(fs.stack.frames.size() == 8);
  double frac = 0.0;
  for (std::size_t i = 0; i < 8; ++i) {
    const Image expect = gamma_encode(recompose(fs.log_reflectance, fs.shadings[i].full_log_shading()));
    double worst = 0.0;
    for (std::size_t k = 0; k < expect.size(); ++k)
      worst = std::max(worst, std::abs(expect.data()[k] - fs.stack.frames[i].data()[k]));
    CHECK(worst < 1e-12);
    for (double m : fs.shadings[i].mask.data()) frac += m < 0.5;
  }
  frac /= 8.0 * 120 * 40;
  CHECK(frac > 0.1);
  CHECK(frac < 0.3);
}

TEST_CASE("scene and illumination json round trip") {
  const auto scene = random_scene(47);
  const auto back = scene_from_json(scene_to_json(scene));
  CHECK(back.boxes.size() == scene.boxes.size());
  CHECK(render(back, test_illumination(0.5), 120, 40).pano == render(scene, test_illumination(0.5), 120, 40).pano);
  const auto il = random_illuminations(1, 48).front();
  CHECK(illumination_from_json(illumination_to_json(il)) == il);
}
