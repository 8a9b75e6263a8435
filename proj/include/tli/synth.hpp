#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "tli/image.hpp"
#include "tli/rng.hpp"
#include "tli/shading.hpp"
#include "tli/stack.hpp"
#include "tli/warp.hpp"

namespace tli::synth {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

/// Axis-aligned building standing on the ground plane z = 0. Face albedos
/// are indexed -x, +x, -y, +y.
struct Box {
  double x0 = 0.0, x1 = 0.0, y0 = 0.0, y1 = 0.0, height = 0.0;
  std::array<Rgb, 4> face_albedo{};
};

struct SynthScene {
  std::uint64_t seed = 0;
  std::vector<Box> boxes;
  Rgb ground_albedo{0.35, 0.33, 0.3};
  Rgb sky_albedo{0.55, 0.7, 0.95};
  double sun_elevation = 35.0 * kPi / 180.0;
  double camera_height = 2.5;
  double street_width = 12.0;
  /// Multiplicative albedo texture strength (log amplitude); 0 renders flat
  /// per-surface albedo and a yaw-symmetric sky and ground.
  double texture_amplitude = 0.35;

  void validate() const;
};

struct Illumination {
  double sun_azimuth = 0.0;
  Rgb sun_color{0.0, 0.0, 0.0};
  Rgb sky_color{0.0, 0.0, 0.0};
  double sun_intensity = 0.55;
  double sky_intensity = 0.2;

  void validate() const;
  friend bool operator==(const Illumination&, const Illumination&) = default;
};

struct Render {
  Panorama pano;            // sRGB, unquantized
  Image log_reflectance;    // 3 channels
  BiColorShading shading;
};

inline constexpr double kSunDiskRadius = 4.0 * kPi / 180.0;
inline constexpr double kSunDiskGain = 6.0;

/// Default street scene: 6-12 boxes flanking a 12 m street.
SynthScene random_scene(std::uint64_t seed);
/// Ground plane and sky only, no texture: yaw-symmetric apart from the sun.
SynthScene empty_scene();
Illumination random_illumination(Rng& rng);
std::vector<Illumination> random_illuminations(std::size_t count, std::uint64_t seed);

/// Unit direction of the sun.
Vec3 sun_direction(const SynthScene& scene, double azimuth);
/// Direction of the center of pixel (row, col) of a width x height panorama.
Vec3 pixel_direction(int row, int col, int width, int height);

/// Sun/sky mixing mask of the scene for a sun azimuth: Lambert cosine times
/// shadow-ray visibility on surfaces, 0 on the sky.
Image shadow_mask(const SynthScene& scene, double sun_azimuth, int width, int height);
/// Mask of pixels whose camera ray escapes to the sky.
Image sky_mask(const SynthScene& scene, int width, int height);
Image scene_log_reflectance(const SynthScene& scene, int width, int height);

/// Renders exp(logR + logS + c1 M + c2 (1 - M)) and gamma-encodes it.
Render render(const SynthScene& scene, const Illumination& illum, int width, int height,
              const GammaParams& gamma = {});

/// Rebuilds the shading model of an illumination on a scene: used to relight
/// or to transfer illumination between scenes.
BiColorShading shading_for(const SynthScene& scene, const Illumination& illum, int width,
                           int height);

struct SynthStack {
  Stack stack;                      // warped frames
  std::vector<WarpGrid> gt_warps;   // perturbation applied to each render
  std::vector<Illumination> illuminations;
  std::vector<Render> renders;      // unwarped ground truth
};

WarpGrid random_warp_grid(Rng& rng, double jitter);

SynthStack make_stack(const SynthScene& scene, const std::vector<Illumination>& illuminations,
                      double warp_jitter, std::uint64_t seed, int width, int height,
                      const GammaParams& gamma = {});

struct SpaceTimeGrid {
  std::vector<SynthScene> scenes;           // rows
  std::vector<Illumination> illuminations;  // columns
  std::vector<std::vector<Render>> cells;   // [row][col]
};

SpaceTimeGrid spacetime_grid(int n_scenes, int n_times, std::uint64_t seed, int width, int height,
                             const GammaParams& gamma = {});

/// Flat-world stack rendered from an explicit factor model: textured
/// reflectance patches, per-frame log intensity, sun/sky colors and a sparse
/// cast-shadow mask. Used where the factorization optimum must be known.
struct FactorStackOptions {
  int frames = 8;
  int width = 240;
  int height = 80;
  double shadow_fraction = 0.2;   // target fraction of shadowed pixels per frame
  double smooth_amplitude = 0.0;  // low-frequency log-intensity variation
  bool bicolor = true;            // false: c1 = c2 = 0
  std::uint64_t seed = 0;
};

struct FactorStack {
  Stack stack;
  Image log_reflectance;
  std::vector<BiColorShading> shadings;
};

FactorStack make_factor_stack(const FactorStackOptions& opts, const GammaParams& gamma = {});

nlohmann::json scene_to_json(const SynthScene& scene);
SynthScene scene_from_json(const nlohmann::json& j);
nlohmann::json illumination_to_json(const Illumination& illum);
Illumination illumination_from_json(const nlohmann::json& j);

}  // namespace tli::synth
