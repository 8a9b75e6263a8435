#include "tli/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tli::synth {

namespace {

constexpr double kEps = 1e-7;

double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator*(double s, const Vec3& a) { return {s * a.x, s * a.y, s * a.z}; }

// Lattice value noise in [-1, 1], trilinear with smoothstep fade.
double lattice(std::int64_t x, std::int64_t y, std::int64_t z, std::uint64_t seed) {
  std::uint64_t h = seed;
  h = derive_seed(h, static_cast<std::uint64_t>(x));
  h = derive_seed(h, static_cast<std::uint64_t>(y));
  h = derive_seed(h, static_cast<std::uint64_t>(z));
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

double value_noise(const Vec3& p, std::uint64_t seed) {
  const double fx = std::floor(p.x), fy = std::floor(p.y), fz = std::floor(p.z);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy),
             iz = static_cast<std::int64_t>(fz);
  auto fade = [](double t) { return t * t * (3.0 - 2.0 * t); };
  const double u = fade(p.x - fx), v = fade(p.y - fy), w = fade(p.z - fz);
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double wt = (dx ? u : 1 - u) * (dy ? v : 1 - v) * (dz ? w : 1 - w);
        acc += wt * lattice(ix + dx, iy + dy, iz + dz, seed);
      }
  return acc;
}

double fbm(const Vec3& p, std::uint64_t seed) {
  return 0.65 * value_noise(p, seed) + 0.35 * value_noise(2.03 * p, derive_seed(seed, 7));
}

Rgb textured(const Rgb& base, double amplitude, double n) {
  Rgb out{};
  for (int c = 0; c < 3; ++c) out[c] = std::clamp(base[c] * std::exp(amplitude * n), 0.05, 0.95);
  return out;
}

enum class HitKind { Sky, Ground, Box };

struct Hit {
  HitKind kind = HitKind::Sky;
  double t = std::numeric_limits<double>::infinity();
  int box = -1;
  int face = 0;  // 0:-x 1:+x 2:-y 3:+y 4:top
  Vec3 normal;
};

// Slab test; returns entry distance and entry face, or t = inf on miss.
bool intersect_box(const Box& b, const Vec3& o, const Vec3& d, double& t_hit, int& face) {
  double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
  int entry_face = -1;
  const double lo[3] = {b.x0, b.y0, 0.0}, hi[3] = {b.x1, b.y1, b.height};
  const double oo[3] = {o.x, o.y, o.z}, dd[3] = {d.x, d.y, d.z};
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dd[a]) < 1e-15) {
      if (oo[a] < lo[a] || oo[a] > hi[a]) return false;
      continue;
    }
    double ta = (lo[a] - oo[a]) / dd[a], tb = (hi[a] - oo[a]) / dd[a];
    int fa = 2 * a, fb = 2 * a + 1;
    if (ta > tb) {
      std::swap(ta, tb);
      std::swap(fa, fb);
    }
    if (ta > t0) {
      t0 = ta;
      entry_face = fa;
    }
    t1 = std::min(t1, tb);
  }
  if (t0 > t1 || t0 <= kEps) return false;
  t_hit = t0;
  face = entry_face == 5 ? 4 : entry_face;  // +z entry is the roof
  return true;
}

Vec3 face_normal(int face) {
  switch (face) {
    case 0: return {-1, 0, 0};
    case 1: return {1, 0, 0};
    case 2: return {0, -1, 0};
    case 3: return {0, 1, 0};
    default: return {0, 0, 1};
  }
}

Hit trace(const SynthScene& scene, const Vec3& o, const Vec3& d) {
  Hit hit;
  if (d.z < -1e-12) {
    hit.kind = HitKind::Ground;
    hit.t = -o.z / d.z;
    hit.normal = {0, 0, 1};
  }
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    double t = 0.0;
    int face = 0;
    if (intersect_box(scene.boxes[i], o, d, t, face) && t < hit.t) {
      hit.kind = HitKind::Box;
      hit.t = t;
      hit.box = static_cast<int>(i);
      hit.face = face;
      hit.normal = face_normal(face);
    }
  }
  return hit;
}

bool occluded(const SynthScene& scene, const Vec3& p, const Vec3& dir) {
  for (const auto& b : scene.boxes) {
    double t = 0.0;
    int face = 0;
    if (intersect_box(b, p, dir, t, face)) return true;
  }
  return false;
}

struct Sample {
  Rgb albedo;
  double mask = 0.0;  // sun/sky mixing weight
  bool sky = false;
  bool sun_disk = false;
};

Sample shade_pixel(const SynthScene& scene, const Vec3& sun, int row, int col, int width,
                   int height, bool want_albedo) {
  const Vec3 cam{0.0, 0.0, scene.camera_height};
  const Vec3 d = pixel_direction(row, col, width, height);
  const Hit hit = trace(scene, cam, d);
  Sample s;
  const double amp = scene.texture_amplitude;
  if (hit.kind == HitKind::Sky) {
    s.sky = true;
    s.sun_disk = dot(d, sun) > std::cos(kSunDiskRadius);
    if (want_albedo)
      s.albedo = amp > 0.0 ? textured(scene.sky_albedo, 0.6 * amp, fbm(3.5 * d, derive_seed(scene.seed, 99)))
                           : scene.sky_albedo;
    return s;
  }
  const Vec3 p = cam + hit.t * d;
  const double cosine = std::max(0.0, dot(hit.normal, sun));
  if (cosine > 0.0) {
    const Vec3 start = p + 1e-6 * hit.normal;
    s.mask = occluded(scene, start, sun) ? 0.0 : cosine;
  }
  if (!want_albedo) return s;
  if (hit.kind == HitKind::Ground) {
    const double dist = std::hypot(p.x, p.y);
    const double fade = std::exp(-dist / 30.0);
    s.albedo = amp > 0.0 ? textured(scene.ground_albedo, amp * fade,
                                    fbm(Vec3{0.9 * p.x, 0.9 * p.y, 0.0}, derive_seed(scene.seed, 3)))
                         : scene.ground_albedo;
  } else {
    const Box& b = scene.boxes[static_cast<std::size_t>(hit.box)];
    const Rgb& base = b.face_albedo[static_cast<std::size_t>(std::min(hit.face, 3))];
    s.albedo = amp > 0.0 ? textured(base, amp,
                                    fbm(Vec3{0.8 * p.x, 0.8 * p.y, 0.8 * p.z},
                                        derive_seed(scene.seed, 100 + static_cast<std::uint64_t>(hit.box))))
                         : base;
  }
  return s;
}

Rgb jitter_color(Rng& rng, const Rgb& mean, double spread) {
  Rgb c{};
  for (int i = 0; i < 3; ++i) c[i] = mean[i] + rng.uniform(-spread, spread);
  return c;
}

nlohmann::json rgb_json(const Rgb& c) { return nlohmann::json::array({c[0], c[1], c[2]}); }
Rgb rgb_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

CaptureRecord synthetic_record(const std::string& stack_id, std::size_t frame) {
  CaptureRecord r;
  r.id = stack_id + "_f" + std::to_string(frame);
  r.path = r.id + ".png";
  r.lat = 40.7128;
  r.lon = -74.006;
  r.heading_deg = 0.0;
  r.timestamp_utc = 1.6e9 + 3600.0 * static_cast<double>(frame);
  return r;
}

}  // namespace

void SynthScene::validate() const {
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const Box& a = boxes[i];
    if (!(a.x1 > a.x0 && a.y1 > a.y0 && a.height > 0.0))
      throw std::invalid_argument("synthetic box with empty extent");
    if (0.0 >= a.x0 && 0.0 <= a.x1 && 0.0 >= a.y0 && 0.0 <= a.y1 && camera_height <= a.height)
      throw std::invalid_argument("camera inside a synthetic box");
    for (std::size_t j = i + 1; j < boxes.size(); ++j) {
      const Box& b = boxes[j];
      if (a.x0 < b.x1 && b.x0 < a.x1 && a.y0 < b.y1 && b.y0 < a.y1)
        throw std::invalid_argument("synthetic boxes overlap");
    }
  }
}

void Illumination::validate() const {
  if (!(sun_intensity > 0.0 && sky_intensity > 0.0))
    throw std::invalid_argument("illumination intensities must be positive");
  for (int c = 0; c < 3; ++c)
    if (!std::isfinite(sun_color[c]) || !std::isfinite(sky_color[c]))
      throw std::invalid_argument("illumination colors must be finite");
}

SynthScene random_scene(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5CE7E));
  SynthScene scene;
  scene.seed = seed;
  const int count = rng.uniform_int(6, 12);
  const double half = scene.street_width / 2.0;
  double cursor[2] = {rng.uniform(-45.0, -30.0), rng.uniform(-45.0, -30.0)};
  for (int i = 0; i < count; ++i) {
    const int side = i % 2;
    Box b;
    const double length = rng.uniform(6.0, 15.0);
    b.x0 = cursor[side];
    b.x1 = b.x0 + length;
    cursor[side] = b.x1 + rng.uniform(1.0, 6.0);
    const double setback = rng.uniform(0.0, 2.0);
    const double depth = rng.uniform(6.0, 12.0);
    if (side == 0) {
      b.y0 = half + setback;
      b.y1 = b.y0 + depth;
    } else {
      b.y1 = -half - setback;
      b.y0 = b.y1 - depth;
    }
    b.height = rng.uniform(3.0, 6.0);
    for (auto& a : b.face_albedo) a = {rng.uniform(0.08, 0.9), rng.uniform(0.08, 0.9), rng.uniform(0.08, 0.9)};
    scene.boxes.push_back(b);
  }
  scene.ground_albedo = {rng.uniform(0.25, 0.45), rng.uniform(0.25, 0.45), rng.uniform(0.25, 0.45)};
  scene.validate();
  return scene;
}

SynthScene empty_scene() {
  SynthScene scene;
  scene.texture_amplitude = 0.0;
  return scene;
}

Illumination random_illumination(Rng& rng) {
  Illumination il;
  il.sun_azimuth = rng.uniform(-kPi, kPi);
  il.sun_color = jitter_color(rng, {0.22, 0.03, -0.25}, 0.06);
  il.sky_color = jitter_color(rng, {-0.22, 0.0, 0.25}, 0.06);
  il.sun_intensity = rng.uniform(0.45, 0.65);
  il.sky_intensity = rng.uniform(0.15, 0.25);
  return il;
}

std::vector<Illumination> random_illuminations(std::size_t count, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x111));
  std::vector<Illumination> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_illumination(rng));
  return out;
}

Vec3 sun_direction(const SynthScene& scene, double azimuth) {
  const double ce = std::cos(scene.sun_elevation);
  return {ce * std::cos(azimuth), ce * std::sin(azimuth), std::sin(scene.sun_elevation)};
}

Vec3 pixel_direction(int row, int col, int width, int height) {
  const double yaw = column_center_yaw(col, width);
  const double elev = (height / 2.0 - (row + 0.5)) * kTwoPi / width;
  const double ce = std::cos(elev);
  return {ce * std::cos(yaw), ce * std::sin(yaw), std::sin(elev)};
}

Image shadow_mask(const SynthScene& scene, double sun_azimuth, int width, int height) {
  const Vec3 sun = sun_direction(scene, sun_azimuth);
  Image m(width, height, 1, DomainTag::SrgbUnit);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) m.at(0, y, x) = shade_pixel(scene, sun, y, x, width, height, false).mask;
  return m;
}

Image sky_mask(const SynthScene& scene, int width, int height) {
  const Vec3 cam{0.0, 0.0, scene.camera_height};
  Image m(width, height, 1, DomainTag::SrgbUnit);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      m.at(0, y, x) = trace(scene, cam, pixel_direction(y, x, width, height)).kind == HitKind::Sky ? 1.0 : 0.0;
  return m;
}

Image scene_log_reflectance(const SynthScene& scene, int width, int height) {
  const Vec3 sun = sun_direction(scene, 0.0);
  Image r(width, height, 3, DomainTag::LogLinear);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const Sample s = shade_pixel(scene, sun, y, x, width, height, true);
      for (int c = 0; c < 3; ++c) r.at(c, y, x) = std::log(s.albedo[c]);
    }
  return r;
}

BiColorShading shading_for(const SynthScene& scene, const Illumination& illum, int width, int height) {
  illum.validate();
  const Vec3 sun = sun_direction(scene, illum.sun_azimuth);
  BiColorShading sh;
  sh.log_intensity = Image(width, height, 1, DomainTag::LogLinear);
  sh.mask = Image(width, height, 1, DomainTag::SrgbUnit);
  sh.c1 = illum.sun_color;
  sh.c2 = illum.sky_color;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const Sample s = shade_pixel(scene, sun, y, x, width, height, false);
      double li = std::log(illum.sky_intensity + illum.sun_intensity * s.mask);
      if (s.sun_disk) li += std::log(kSunDiskGain);
      sh.log_intensity.at(0, y, x) = li;
      sh.mask.at(0, y, x) = s.mask;
    }
  return sh;
}

Render render(const SynthScene& scene, const Illumination& illum, int width, int height,
              const GammaParams& gamma) {
  check_panorama_geometry(width, height);
  scene.validate();
  Render out;
  out.log_reflectance = scene_log_reflectance(scene, width, height);
  out.shading = shading_for(scene, illum, width, height);
  out.pano = gamma_encode(recompose(out.log_reflectance, out.shading.full_log_shading()), gamma);
  return out;
}

WarpGrid random_warp_grid(Rng& rng, double jitter) {
  if (jitter < 0.0) throw std::invalid_argument("warp jitter must be non-negative");
  WarpGrid g;
  if (jitter == 0.0) return g;
  for (double& v : g.values()) v = rng.uniform(-jitter, jitter);
  return g;
}

SynthStack make_stack(const SynthScene& scene, const std::vector<Illumination>& illuminations,
                      double warp_jitter, std::uint64_t seed, int width, int height,
                      const GammaParams& gamma) {
  if (illuminations.empty() || illuminations.size() > kMaxStackSize)
    throw std::invalid_argument("make_stack needs 1..8 illuminations");
  Rng rng(derive_seed(seed, 0x3A4F));
  SynthStack out;
  out.illuminations = illuminations;
  out.stack.stack_id = "synth_" + std::to_string(seed);
  for (std::size_t i = 0; i < illuminations.size(); ++i) {
    Render r = render(scene, illuminations[i], width, height, gamma);
    WarpGrid g = random_warp_grid(rng, warp_jitter);
    Image frame = g.is_identity() ? r.pano : warp(r.pano, eval_spline(g, height, width));
    out.stack.frames.push_back(std::move(frame));
    out.stack.records.push_back(synthetic_record(out.stack.stack_id, i));
    out.gt_warps.push_back(g);
    out.renders.push_back(std::move(r));
  }
  return out;
}

SpaceTimeGrid spacetime_grid(int n_scenes, int n_times, std::uint64_t seed, int width, int height,
                             const GammaParams& gamma) {
  if (n_scenes < 2 || n_times < 2) throw std::invalid_argument("space-time grid must be at least 2x2");
  SpaceTimeGrid grid;
  grid.illuminations = random_illuminations(static_cast<std::size_t>(n_times), derive_seed(seed, 1000));
  for (int r = 0; r < n_scenes; ++r) {
    grid.scenes.push_back(random_scene(derive_seed(seed, static_cast<std::uint64_t>(r))));
    std::vector<Render> row;
    for (const auto& il : grid.illuminations) row.push_back(render(grid.scenes.back(), il, width, height, gamma));
    grid.cells.push_back(std::move(row));
  }
  return grid;
}

FactorStack make_factor_stack(const FactorStackOptions& opts, const GammaParams& gamma) {
  if (opts.frames < 1 || opts.frames > kMaxStackSize)
    throw std::invalid_argument("factor stack needs 1..8 frames");
  const int w = opts.width, h = opts.height;
  Rng rng(derive_seed(opts.seed, 0xFAC7));
  FactorStack out;
  out.stack.stack_id = "factor_" + std::to_string(opts.seed);

  // Reflectance: Voronoi patches (horizontally periodic) with value-noise texture.
  const int sites = 40;
  std::vector<std::array<double, 2>> pos(sites);
  std::vector<Rgb> albedo(sites);
  for (int i = 0; i < sites; ++i) {
    pos[i] = {rng.uniform(0.0, w), rng.uniform(0.0, h)};
    albedo[i] = {rng.uniform(0.08, 0.9), rng.uniform(0.08, 0.9), rng.uniform(0.08, 0.9)};
  }
  const std::uint64_t tex_seed = derive_seed(opts.seed, 0x7E3);
  out.log_reflectance = Image(w, h, 3, DomainTag::LogLinear);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int i = 0; i < sites; ++i) {
        double dx = std::abs(x + 0.5 - pos[i][0]);
        dx = std::min(dx, w - dx);
        const double dy = y + 0.5 - pos[i][1];
        const double d = dx * dx + dy * dy;
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      const double yaw = kTwoPi * (x + 0.5) / w;
      const double n = fbm(Vec3{2.5 * std::cos(yaw), 2.5 * std::sin(yaw), 0.12 * y}, tex_seed);
      const Rgb a = textured(albedo[best], 0.3, n);
      for (int c = 0; c < 3; ++c) out.log_reflectance.at(c, y, x) = std::log(a[c]);
    }

  for (int f = 0; f < opts.frames; ++f) {
    const double sun = rng.uniform(0.45, 0.65), sky = rng.uniform(0.15, 0.25);
    const double cosine = rng.uniform(0.5, 0.9);
    BiColorShading sh;
    sh.c1 = jitter_color(rng, {0.22, 0.03, -0.25}, 0.06);
    sh.c2 = jitter_color(rng, {-0.22, 0.0, 0.25}, 0.06);
    if (!opts.bicolor) sh.c1 = sh.c2 = Rgb{0.0, 0.0, 0.0};
    Image vis(w, h, 1, DomainTag::SrgbUnit, 1.0);
    std::size_t shadowed = 0;
    const auto target = static_cast<std::size_t>(opts.shadow_fraction * w * h);
    while (shadowed < target) {
      const int rw = rng.uniform_int(w / 24, w / 8), rh = rng.uniform_int(h / 10, h / 3);
      const int x0 = rng.uniform_int(0, w - 1), y0 = rng.uniform_int(0, h - rh);
      for (int y = y0; y < y0 + rh; ++y)
        for (int x = x0; x < x0 + rw; ++x) {
          double& v = vis.at(0, y, x % w);
          if (v > 0.0) {
            v = 0.0;
            ++shadowed;
          }
        }
    }
    const double phase_x = rng.uniform(0.0, kTwoPi), phase_y = rng.uniform(0.0, kTwoPi);
    const int kx = rng.uniform_int(1, 2);
    sh.mask = Image(w, h, 1, DomainTag::SrgbUnit);
    sh.log_intensity = Image(w, h, 1, DomainTag::LogLinear);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double m = cosine * vis.at(0, y, x);
        const double smooth = opts.smooth_amplitude * std::sin(kTwoPi * kx * x / w + phase_x) *
                              std::cos(kPi * y / h + phase_y);
        sh.mask.at(0, y, x) = m;
        sh.log_intensity.at(0, y, x) = std::log(sky + sun * m) + smooth;
      }
    out.stack.frames.push_back(gamma_encode(recompose(out.log_reflectance, sh.full_log_shading()), gamma));
    out.stack.records.push_back(synthetic_record(out.stack.stack_id, static_cast<std::size_t>(f)));
    out.shadings.push_back(std::move(sh));
  }
  return out;
}

nlohmann::json scene_to_json(const SynthScene& scene) {
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& b : scene.boxes) {
    nlohmann::json faces = nlohmann::json::array();
    for (const auto& a : b.face_albedo) faces.push_back(rgb_json(a));
    boxes.push_back({{"x0", b.x0}, {"x1", b.x1}, {"y0", b.y0}, {"y1", b.y1}, {"height", b.height}, {"face_albedo", faces}});
  }
  return {{"seed", scene.seed},
          {"boxes", boxes},
          {"ground_albedo", rgb_json(scene.ground_albedo)},
          {"sky_albedo", rgb_json(scene.sky_albedo)},
          {"sun_elevation", scene.sun_elevation},
          {"camera_height", scene.camera_height},
          {"street_width", scene.street_width},
          {"texture_amplitude", scene.texture_amplitude}};
}

SynthScene scene_from_json(const nlohmann::json& j) {
  try {
    SynthScene s;
    s.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& b : j.at("boxes")) {
      Box box;
      box.x0 = b.at("x0").get<double>();
      box.x1 = b.at("x1").get<double>();
      box.y0 = b.at("y0").get<double>();
      box.y1 = b.at("y1").get<double>();
      box.height = b.at("height").get<double>();
      for (std::size_t f = 0; f < 4; ++f) box.face_albedo[f] = rgb_from(b.at("face_albedo").at(f));
      s.boxes.push_back(box);
    }
    s.ground_albedo = rgb_from(j.at("ground_albedo"));
    s.sky_albedo = rgb_from(j.at("sky_albedo"));
    s.sun_elevation = j.at("sun_elevation").get<double>();
    s.camera_height = j.at("camera_height").get<double>();
    s.street_width = j.at("street_width").get<double>();
    s.texture_amplitude = j.at("texture_amplitude").get<double>();
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("scene schema violation: ") + e.what());
  }
}

nlohmann::json illumination_to_json(const Illumination& il) {
  return {{"sun_azimuth", il.sun_azimuth},
          {"sun_color", rgb_json(il.sun_color)},
          {"sky_color", rgb_json(il.sky_color)},
          {"sun_intensity", il.sun_intensity},
          {"sky_intensity", il.sky_intensity}};
}

Illumination illumination_from_json(const nlohmann::json& j) {
  try {
    Illumination il;
    il.sun_azimuth = j.at("sun_azimuth").get<double>();
    il.sun_color = rgb_from(j.at("sun_color"));
    il.sky_color = rgb_from(j.at("sky_color"));
    il.sun_intensity = j.at("sun_intensity").get<double>();
    il.sky_intensity = j.at("sky_intensity").get<double>();
    il.validate();
    return il;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("illumination schema violation: ") + e.what());
  }
}

}  // namespace tli::synth
