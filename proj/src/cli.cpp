#include "tli/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <thread>

#include "tli/align.hpp"
#include "tli/azimuth.hpp"
#include "tli/eval.hpp"
#include "tli/intrinsics.hpp"
#include "tli/io.hpp"
#include "tli/stack.hpp"
#include "tli/synth.hpp"
#include "tli/warp.hpp"

namespace tli::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int verbosity = 0;

void note(const std::string& msg) {
  if (verbosity > 0) std::cerr << "[tli] " << msg << '\n';
}

// ---------------------------------------------------------------------------
// Option binding: every flag maps to one key of the resolved config.

class Bindings {
 public:
  template <class T>
  CLI::Option* add(CLI::App* app, const std::string& key, T def, const std::string& desc) {
    auto value = std::make_shared<T>(def);
    defaults_[key] = def;
    CLI::Option* opt = app->add_option("--" + dashed(key), *value, desc)->capture_default_str();
    entries_.push_back({opt, key, [value] { return json(*value); }});
    return opt;
  }

  CLI::Option* add_flag(CLI::App* app, const std::string& key, const std::string& desc) {
    auto value = std::make_shared<bool>(false);
    defaults_[key] = false;
    CLI::Option* opt = app->add_flag("--" + dashed(key), *value, desc);
    entries_.push_back({opt, key, [value] { return json(*value); }});
    return opt;
  }

  void add_object(const std::string& key, json def) { defaults_[key] = std::move(def); }

  /// defaults <- config file <- flags given on the command line
  json resolve(const json& file) const {
    json cfg = defaults_;
    for (const auto& [k, v] : file.items()) {
      if (!cfg.contains(k)) throw UsageError("unknown config key '" + k + "'");
      if (cfg[k].is_object()) {
        if (!v.is_object()) throw UsageError("config key '" + k + "' must be an object");
        for (const auto& [sk, sv] : v.items()) {
          if (!cfg[k].contains(sk)) throw UsageError("unknown config key '" + k + "." + sk + "'");
          cfg[k][sk] = sv;
        }
      } else {
        cfg[k] = v;
      }
    }
    for (const auto& e : entries_)
      if (e.opt->count() > 0) cfg[e.key] = e.get();
    return cfg;
  }

  void merge(const Bindings& other) {
    for (const auto& [k, v] : other.defaults_.items()) defaults_[k] = v;
    entries_.insert(entries_.end(), other.entries_.begin(), other.entries_.end());
  }

 private:
  struct Entry {
    CLI::Option* opt;
    std::string key;
    std::function<json()> get;
  };
  static std::string dashed(std::string key) {
    for (char& c : key)
      if (c == '_') c = '-';
    return key;
  }
  json defaults_ = json::object();
  std::vector<Entry> entries_;
};

json fit_defaults() {
  const FitConfig f;
  return {{"iterations", f.iterations},
          {"learning_rate", f.learning_rate},
          {"weight_recon", f.weight_recon},
          {"weight_rc", f.weight_rc},
          {"weight_wl", f.weight_wl}};
}

json align_defaults() {
  const AlignConfig a;
  return {{"learning_rate", a.learning_rate}, {"beta1", a.beta1},
          {"beta2", a.beta2},                 {"init_noise", a.init_noise},
          {"refit_every", a.refit_every},     {"blur_sigma", a.blur_sigma},
          {"shading_sigma", a.shading_sigma}, {"factor_iterations", a.factor_iterations}};
}

// ---------------------------------------------------------------------------
// Resolved-config accessors.

template <class T>
T get(const json& cfg, const std::string& key) {
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw UsageError("config key '" + key + "': " + e.what());
  }
}

std::string require_str(const json& cfg, const std::string& key) {
  auto v = get<std::string>(cfg, key);
  if (v.empty()) throw UsageError("--" + key + " is required");
  return v;
}

std::pair<int, int> resolution(const json& cfg) {
  const auto s = get<std::string>(cfg, "resolution");
  int w = 0, h = 0;
  char x = 0;
  std::istringstream is(s);
  if (!(is >> w >> x >> h) || x != 'x' || !is.eof()) throw UsageError("resolution must look like 240x80");
  try {
    check_panorama_geometry(w, h);
  } catch (const std::exception& e) {
    throw UsageError(std::string("resolution: ") + e.what());
  }
  return {w, h};
}

GammaParams gamma_of(const json& cfg) {
  const double g = get<double>(cfg, "gamma");
  if (!(g > 0.0) || !std::isfinite(g)) throw UsageError("--gamma must be positive");
  GammaParams p;
  p.gamma = 1.0 / g;
  return p;
}

int threads_of(const json& cfg) {
  const int t = get<int>(cfg, "threads");
  if (t < 1) throw UsageError("--threads must be >= 1");
  return t;
}

FitConfig fit_of(const json& cfg) {
  FitConfig f;
  const json& j = cfg.at("fit");
  f.iterations = j.at("iterations").get<int>();
  f.learning_rate = j.at("learning_rate").get<double>();
  f.weight_recon = j.at("weight_recon").get<double>();
  f.weight_rc = j.at("weight_rc").get<double>();
  f.weight_wl = j.at("weight_wl").get<double>();
  f.seed = get<std::uint64_t>(cfg, "seed");
  if (f.iterations < 0) throw UsageError("fit iterations must be >= 0");
  return f;
}

AlignConfig align_of(const json& cfg) {
  AlignConfig a;
  const json& j = cfg.at("align");
  a.learning_rate = j.at("learning_rate").get<double>();
  a.beta1 = j.at("beta1").get<double>();
  a.beta2 = j.at("beta2").get<double>();
  a.init_noise = j.at("init_noise").get<double>();
  a.refit_every = j.at("refit_every").get<int>();
  a.blur_sigma = j.at("blur_sigma").get<double>();
  a.shading_sigma = j.at("shading_sigma").get<double>();
  a.factor_iterations = j.at("factor_iterations").get<int>();
  a.seed = get<std::uint64_t>(cfg, "seed");
  try {
    a.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("align config: ") + e.what());
  }
  return a;
}

// ---------------------------------------------------------------------------
// Output directory with artifact bookkeeping.

class Outputs {
 public:
  explicit Outputs(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const { return root_; }

  fs::path prepare(const fs::path& rel) {
    const fs::path p = root_ / rel;
    fs::create_directories(p.parent_path());
    files_.push_back(rel.generic_string());
    return p;
  }
  void png(const fs::path& rel, const Image& img) { io::write_png(prepare(rel), img); }
  void preview(const fs::path& rel, const Image& img) { io::write_preview_png(prepare(rel), img); }
  void json_file(const fs::path& rel, const json& j) { io::write_json(prepare(rel), j); }
  void text(const fs::path& rel, const std::string& s) { io::write_text(prepare(rel), s); }
  void float_map(const fs::path& rel, const Image& img) {
    io::write_float_map(prepare(rel), img);
    files_.push_back(io::sidecar_path(rel).generic_string());
  }
  void warp_grid(const fs::path& rel, const WarpGrid& g) {
    write_warp_grid(prepare(rel), g);
    files_.push_back(io::sidecar_path(rel).generic_string());
  }

  json hashes() const {
    json h = json::object();
    for (const auto& f : files_) h[f] = io::sha256_file(root_ / f);
    return h;
  }

 private:
  fs::path root_;
  std::vector<std::string> files_;
};

fs::path manifest_dir(const fs::path& manifest) {
  const fs::path parent = manifest.parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

Stack load_named_stack(const json& cfg) {
  const fs::path manifest = require_str(cfg, "manifest");
  const std::string id = require_str(cfg, "stack_id");
  const auto [w, h] = resolution(cfg);
  for (const auto& sk : read_manifest(manifest))
    if (sk.stack_id == id) return load_stack(sk, w, h, manifest_dir(manifest));
  throw DataError("stack " + id + " not found in " + manifest.string());
}

std::string frame_name(const Stack& s, std::size_t i) {
  return i < s.records.size() ? s.records[i].id : "frame_" + std::to_string(i);
}

// ---------------------------------------------------------------------------
// Subcommands.

void run_ingest(const json& cfg, Outputs& out) {
  const fs::path records_path = require_str(cfg, "records");
  auto records = records_from_json(io::read_json(records_path));
  const double radius = get<double>(cfg, "radius");
  if (!(radius > 0.0)) throw UsageError("--radius must be positive");
  // manifest paths are relative to the manifest's own directory
  const fs::path from = fs::absolute(manifest_dir(records_path));
  const fs::path to = fs::absolute(out.root());
  for (auto& r : records) {
    const fs::path p = fs::path(r.path).is_absolute() ? fs::path(r.path) : from / r.path;
    if (!fs::exists(p)) throw DataError("frame " + r.id + ": missing file " + p.string());
    r.path = fs::path(p).lexically_normal().lexically_relative(to).generic_string();
  }
  const auto stacks = greedy_cluster(records, radius);
  if (get<bool>(cfg, "check")) {
    const auto [w, h] = resolution(cfg);
    for (const auto& sk : stacks) load_stack(sk, w, h, out.root());
  }
  write_manifest(out.prepare("manifest.json"), stacks);
  std::cout << records.size() << " records -> " << stacks.size() << " stacks\n";
}

struct SynthCorpus {
  std::vector<synth::SynthScene> scenes;
  std::vector<synth::Illumination> illuminations;
};

void run_synth(const json& cfg, Outputs& out) {
  const int n_scenes = get<int>(cfg, "scenes"), n_times = get<int>(cfg, "times");
  if (n_scenes < 1) throw UsageError("--scenes must be >= 1");
  if (n_times < 1 || n_times > kMaxStackSize) throw UsageError("--times must be in 1..8");
  const double jitter = get<double>(cfg, "jitter");
  if (!(jitter >= 0.0)) throw UsageError("--jitter must be >= 0");
  const auto seed = get<std::uint64_t>(cfg, "seed");
  const auto [w, h] = resolution(cfg);
  const GammaParams gamma = gamma_of(cfg);

  // one illumination per time, shared by every scene (a space-time grid)
  const auto illums = synth::random_illuminations(static_cast<std::size_t>(n_times), derive_seed(seed, 1));
  std::vector<synth::SynthScene> scenes;
  for (int r = 0; r < n_scenes; ++r)
    scenes.push_back(synth::random_scene(derive_seed(seed, 100 + static_cast<std::uint64_t>(r))));
  const auto stacks = eval::parallel_map<synth::SynthStack>(
      scenes.size(), threads_of(cfg), [&](std::size_t r) {
        return synth::make_stack(scenes[r], illums, jitter, derive_seed(seed, 200 + r), w, h, gamma);
      });

  std::vector<StackSkeleton> manifest;
  json truth = json::object();
  for (std::size_t r = 0; r < stacks.size(); ++r) {
    const auto& s = stacks[r];
    const std::string sid = "scene_" + std::to_string(r);
    StackSkeleton sk;
    sk.stack_id = sid;
    out.float_map(fs::path("gt") / sid / "log_reflectance.f32", s.renders.front().log_reflectance);
    for (int t = 0; t < n_times; ++t) {
      const auto ti = static_cast<std::size_t>(t);
      const std::string id = "s" + std::to_string(r) + "_t" + std::to_string(t);
      const fs::path png = fs::path("panos") / (id + ".png");
      out.png(png, s.stack.frames[ti]);
      CaptureRecord rec;
      rec.id = id;
      rec.path = png.generic_string();
      rec.lat = 40.0 + 0.01 * static_cast<double>(r);
      rec.lon = -75.0;
      rec.heading_deg = 0.0;
      rec.timestamp_utc = 1.6e9 + 3600.0 * t;
      sk.frames.push_back(rec);
      const fs::path dir = fs::path("gt") / sid;
      const auto& sh = s.renders[ti].shading;
      out.float_map(dir / ("t" + std::to_string(t) + "_log_intensity.f32"), sh.log_intensity);
      out.float_map(dir / ("t" + std::to_string(t) + "_mask.f32"), sh.mask);
      out.warp_grid(dir / ("t" + std::to_string(t) + "_warp.f32"), s.gt_warps[ti]);
      out.json_file(dir / ("t" + std::to_string(t) + "_shading.json"),
                    {{"c1", sh.c1}, {"c2", sh.c2}, {"illumination", synth::illumination_to_json(illums[ti])}});
      truth[id] = illums[ti].sun_azimuth * kRadToDeg;
    }
    manifest.push_back(sk);
  }
  write_manifest(out.prepare("manifest.json"), manifest);
  json sj = {{"resolution", std::to_string(w) + "x" + std::to_string(h)},
             {"jitter", jitter},
             {"seed", seed},
             {"scenes", json::array()},
             {"illuminations", json::array()}};
  for (const auto& sc : scenes) sj["scenes"].push_back(synth::scene_to_json(sc));
  for (const auto& il : illums) sj["illuminations"].push_back(synth::illumination_to_json(il));
  out.json_file("scenes.json", sj);
  out.json_file("azimuth_truth.json", truth);
  std::cout << "wrote " << n_scenes << " x " << n_times << " panoramas to " << out.root().string() << '\n';
}

void run_align(const json& cfg, Outputs& out) {
  const Stack stack = load_named_stack(cfg);
  AlignConfig a = align_of(cfg);
  a.steps = get<int>(cfg, "steps");
  if (a.steps < 0) throw UsageError("--steps must be >= 0");
  a.mode = align_mode_from_string(get<std::string>(cfg, "mode"));
  const GammaParams gamma = gamma_of(cfg);
  const AlignResult r = align_stack(stack, a, a.mode == AlignMode::Reflectance
                                                  ? bicolor_factorizer(a.factor_iterations)
                                                  : Factorizer{},
                                    gamma);
  for (std::size_t i = 0; i < stack.size(); ++i) {
    const std::string id = frame_name(stack, i);
    out.warp_grid(fs::path("theta") / (id + ".f32"), r.warps[i]);
    out.png(fs::path("aligned") / (id + ".png"), r.aligned.frames[i]);
  }
  out.png("average.png", stack_average(r.aligned));
  out.png("average_before.png", stack_average(stack));
  out.json_file("loss_trace.json", {{"stack_id", stack.stack_id},
                                    {"mode", to_string(a.mode)},
                                    {"steps", a.steps},
                                    {"initial_loss", r.initial_loss},
                                    {"final_loss", r.final_loss},
                                    {"variance_before", stack_variance(stack).mean},
                                    {"variance_after", stack_variance(r.aligned).mean},
                                    {"trace", r.loss_trace}});
  std::cout << "aligned " << stack.stack_id << ": loss " << r.initial_loss << " -> " << r.final_loss << '\n';
}

void run_decompose(const json& cfg, Outputs& out) {
  const Stack stack = load_named_stack(cfg);
  const GammaParams gamma = gamma_of(cfg);
  const auto method = get<std::string>(cfg, "method");
  FitConfig f = fit_of(cfg);
  f.iterations = get<int>(cfg, "iters");
  if (f.iterations < 0) throw UsageError("--iters must be >= 0");
  Decomposition d;
  if (method == "weiss") {
    d = weiss_mle(stack, gamma);
  } else if (method == "bicolor" || method == "monocolor") {
    f.mono_color = method == "monocolor";
    d = bicolor_fit(stack, f, gamma);
  } else {
    throw UsageError("--method must be weiss, bicolor or monocolor");
  }
  out.float_map("log_reflectance.f32", d.log_reflectance);
  out.preview("previews/log_reflectance.png", d.log_reflectance);
  json frames = json::array();
  for (std::size_t i = 0; i < d.shadings.size(); ++i) {
    const std::string id = frame_name(stack, i);
    const auto& sh = d.shadings[i];
    out.float_map(fs::path("shading") / (id + "_log_intensity.f32"), sh.log_intensity);
    out.float_map(fs::path("shading") / (id + "_mask.f32"), sh.mask);
    out.preview(fs::path("previews") / (id + "_shading.png"), sh.full_log_shading());
    out.png(fs::path("previews") / (id + "_reconstruction.png"), reconstruct_frame(d, i, gamma));
    frames.push_back({{"id", id}, {"c1", sh.c1}, {"c2", sh.c2}});
  }
  out.json_file("fit_report.json", {{"stack_id", stack.stack_id},
                                    {"method", method},
                                    {"objective", d.report.objective},
                                    {"recon", d.report.recon},
                                    {"rc", d.report.rc},
                                    {"wl", d.report.wl},
                                    {"iterations", d.report.iterations},
                                    {"reconstruction_mse", reconstruction_mse(stack, d, gamma)},
                                    {"frames", frames},
                                    {"trace", d.report.trace},
                                    {"previews_note", "preview PNGs are min/max normalized for display only"}});
  std::cout << "decomposed " << stack.stack_id << " (" << method << "), objective " << d.report.objective << '\n';
}

struct AzimuthRow {
  std::string id;
  AzimuthDistribution dist;
  double phi = 0.0;
};

void run_azimuth(const json& cfg, Outputs& out) {
  const auto image = get<std::string>(cfg, "image");
  const auto manifest = get<std::string>(cfg, "manifest");
  if (image.empty() == manifest.empty()) throw UsageError("give exactly one of --image or --manifest");
  const double gt_deg = get<double>(cfg, "gt_deg");
  const bool has_gt = std::isfinite(gt_deg);

  if (!image.empty()) {
    const Panorama p = io::read_png(image);
    const AzimuthDistribution d = estimate_azimuth(p);
    const double phi = eval::estimate_sun_azimuth(p);
    json j = {{"image", fs::path(image).filename().string()}, {"distribution", d.bins}, {"phi_bar_deg", phi * kRadToDeg}};
    std::cout << "distribution:";
    for (double b : d.bins) std::cout << ' ' << b;
    std::cout << "\nphi_bar_deg: " << phi * kRadToDeg << '\n';
    if (has_gt) {
      const std::vector<double> pr{phi}, gt{gt_deg * kDegToRad};
      const AzimuthMetrics m = azimuth_metrics(pr, gt);
      j["gt_deg"] = gt_deg;
      j["cos_sim"] = m.mean_cosine;
      j["ang_err_deg"] = m.median_error_deg;
      std::cout << "cos_sim: " << m.mean_cosine << "\nang_err_deg: " << m.median_error_deg << '\n';
    }
    out.json_file("azimuth.json", j);
    return;
  }

  const auto [w, h] = resolution(cfg);
  const auto truth_file = get<std::string>(cfg, "truth");
  const json truth = truth_file.empty() ? json::object() : io::read_json(truth_file);
  std::ostringstream csv;
  csv.precision(10);
  csv << "id,phi_bar_deg,gt_deg,cos_sim,ang_err_deg\n";
  for (const auto& sk : read_manifest(manifest)) {
    const Stack s = load_stack(sk, w, h, manifest_dir(manifest));
    for (std::size_t i = 0; i < s.size(); ++i) {
      const std::string id = frame_name(s, i);
      const double phi = eval::estimate_sun_azimuth(s.frames[i]);
      csv << id << ',' << phi * kRadToDeg << ',';
      if (truth.contains(id)) {
        const double g = truth[id].get<double>();
        const std::vector<double> pr{phi}, gt{g * kDegToRad};
        const AzimuthMetrics m = azimuth_metrics(pr, gt);
        csv << g << ',' << m.mean_cosine << ',' << m.median_error_deg;
      } else {
        csv << ",,";
      }
      csv << '\n';
    }
  }
  out.text("azimuth.csv", csv.str());
  std::cout << csv.str();
}

SynthCorpus read_corpus(const fs::path& dir) {
  const json j = io::read_json(dir / "scenes.json");
  SynthCorpus c;
  try {
    for (const auto& s : j.at("scenes")) c.scenes.push_back(synth::scene_from_json(s));
    for (const auto& i : j.at("illuminations")) c.illuminations.push_back(synth::illumination_from_json(i));
  } catch (const json::exception& e) {
    throw DataError("corpus " + (dir / "scenes.json").string() + ": " + e.what());
  }
  if (c.scenes.empty() || c.illuminations.empty()) throw DataError("corpus " + dir.string() + " is empty");
  return c;
}

SynthCorpus builtin_corpus(std::uint64_t seed, int scenes, int times) {
  SynthCorpus c;
  for (int r = 0; r < scenes; ++r) c.scenes.push_back(synth::random_scene(derive_seed(seed, 100 + static_cast<std::uint64_t>(r))));
  c.illuminations = synth::random_illuminations(static_cast<std::size_t>(times), derive_seed(seed, 1));
  return c;
}

void run_relight(const json& cfg, Outputs& out) {
  const auto [w, h] = resolution(cfg);
  const GammaParams gamma = gamma_of(cfg);
  const auto seed = get<std::uint64_t>(cfg, "seed");
  const auto corpus_dir = get<std::string>(cfg, "corpus");
  const SynthCorpus corpus = corpus_dir.empty() ? builtin_corpus(seed, 2, 8) : read_corpus(corpus_dir);
  const int scene = get<int>(cfg, "scene"), frame = get<int>(cfg, "frame");
  const int donor = get<int>(cfg, "donor_scene");
  const double az_deg = get<double>(cfg, "azimuth_deg");
  const int n_scenes = static_cast<int>(corpus.scenes.size()), n_times = static_cast<int>(corpus.illuminations.size());
  if (scene < 0 || scene >= n_scenes) throw UsageError("--scene out of range");
  if (frame < 0 || frame >= n_times) throw UsageError("--frame out of range");
  if (std::isfinite(az_deg) == (donor >= 0)) throw UsageError("give exactly one of --azimuth-deg or --donor-scene");
  if (donor >= n_scenes || donor == scene) throw UsageError("--donor-scene must name another scene");
  if (n_times > kMaxStackSize) throw UsageError("corpus has more than 8 times");

  const FitConfig f = fit_of(cfg);
  const auto fi = static_cast<std::size_t>(frame);
  const bool donor_mode = donor >= 0;
  // donor mode: the donor time is withheld from the relit scene's stack
  const std::size_t dt = (fi + 1) % corpus.illuminations.size();
  std::vector<synth::Illumination> own_times;
  std::size_t own_frame = 0;
  for (std::size_t t = 0; t < corpus.illuminations.size(); ++t) {
    if (donor_mode && t == dt) continue;
    if (t == fi) own_frame = own_times.size();
    own_times.push_back(corpus.illuminations[t]);
  }
  if (own_times.size() < 2) throw UsageError("relight needs a corpus with at least 3 times");
  auto fit_scene = [&](int r, const std::vector<synth::Illumination>& times) {
    const auto& sc = corpus.scenes[static_cast<std::size_t>(r)];
    auto s = synth::make_stack(sc, times, 0.0, derive_seed(seed, 200 + static_cast<std::uint64_t>(r)), w, h, gamma);
    Decomposition d = bicolor_fit(s.stack, f, gamma);
    return std::make_pair(std::move(s), std::move(d));
  };
  const auto own = fit_scene(scene, own_times);
  const auto& stack = own.first;
  eval::RelightResult r;
  json info = {{"scene", scene}, {"frame", frame}};
  if (!donor_mode) {
    r = eval::relight_azimuth(corpus.scenes[static_cast<std::size_t>(scene)], stack, own.second, own_frame,
                              az_deg * kDegToRad, gamma);
    info["azimuth_deg"] = az_deg;
  } else {
    const auto d = fit_scene(donor, corpus.illuminations);
    r = eval::relight_donor(corpus.scenes[static_cast<std::size_t>(scene)], stack, own.second, own_frame,
                            corpus.scenes[static_cast<std::size_t>(donor)], d.first, d.second, fi, dt, gamma);
    info["donor_scene"] = donor;
    info["donor_time"] = dt;
  }
  double nn = std::numeric_limits<double>::infinity();
  for (const auto& p : stack.stack.frames) nn = std::min(nn, mse(p, r.ground_truth));
  info["mse"] = r.mse;
  info["pixel_nn_mse"] = nn;
  info["note"] = "sun masks are recomputed by the synthetic renderer's shadow oracle";
  out.png("input.png", stack.stack.frames[own_frame]);
  out.png("relit.png", r.relit);
  out.png("ground_truth.png", r.ground_truth);
  out.json_file("relight.json", info);
  std::cout << "relight mse " << r.mse << " (pixel-NN " << nn << ")\n";
}

std::pair<int, int> grid_shape(const json& cfg) {
  const auto s = get<std::string>(cfg, "grid");
  int r = 0, c = 0;
  char x = 0;
  std::istringstream is(s);
  if (!(is >> r >> x >> c) || x != 'x' || !is.eof() || r < 2 || c < 2 || c > kMaxStackSize)
    throw UsageError("--grid must look like 3x4 (at least 2x2, at most 8 columns)");
  return {r, c};
}

void run_eval(const json& cfg, Outputs& out, const fs::path& report_name) {
  eval::ProtocolOptions o;
  o.seed = get<std::uint64_t>(cfg, "seed");
  std::tie(o.width, o.height) = resolution(cfg);
  o.gamma = gamma_of(cfg);
  o.threads = threads_of(cfg);
  o.fit = fit_of(cfg);
  o.align = align_of(cfg);
  o.align.steps = get<int>(cfg, "steps");
  o.stacks = get<int>(cfg, "stacks");
  o.varying_stacks = get<int>(cfg, "varying_stacks");
  o.jitter = get<double>(cfg, "jitter");
  o.panoramas = get<int>(cfg, "panoramas");
  std::tie(o.grid_rows, o.grid_cols) = grid_shape(cfg);
  if (o.stacks < 1 || o.panoramas < 1 || o.varying_stacks < 0 || o.varying_stacks > o.stacks)
    throw UsageError("--stacks, --panoramas and --varying-stacks must be positive and consistent");
  const auto protocol = get<std::string>(cfg, "protocol");
  const auto corpus_dir = get<std::string>(cfg, "corpus");
  const fs::path cdir = corpus_dir;

  eval::EvalReport report;
  if (protocol == "consistency") {
    std::vector<synth::SynthStack> stacks;
    if (corpus_dir.empty()) {
      stacks = eval::consistency_corpus(o);
    } else {
      for (const auto& sk : read_manifest(cdir / "manifest.json")) {
        if (sk.frames.size() != 8) throw DataError("stack " + sk.stack_id + ": consistency needs 8 frames");
        synth::SynthStack s;
        s.stack = load_stack(sk, o.width, o.height, cdir);
        stacks.push_back(std::move(s));
      }
    }
    report = eval::run_consistency(stacks, o);
  } else if (protocol == "completion") {
    synth::SpaceTimeGrid grid;
    if (corpus_dir.empty()) {
      grid = eval::completion_grid(o);
    } else {
      const SynthCorpus c = read_corpus(cdir);
      if (c.scenes.size() < 2 || c.illuminations.size() < 2) throw DataError("completion needs a corpus of at least 2x2");
      grid.scenes = c.scenes;
      grid.illuminations = c.illuminations;
      grid.cells.resize(c.scenes.size());
      for (std::size_t r = 0; r < c.scenes.size(); ++r)
        grid.cells[r] = eval::parallel_map<synth::Render>(c.illuminations.size(), o.threads, [&](std::size_t t) {
          return synth::render(c.scenes[r], c.illuminations[t], o.width, o.height, o.gamma);
        });
    }
    report = eval::run_completion(grid, o);
  } else if (protocol == "alignment") {
    std::vector<synth::SynthStack> stacks;
    if (corpus_dir.empty()) {
      stacks = eval::alignment_corpus(o);
    } else {
      const SynthCorpus c = read_corpus(cdir);
      for (const auto& sk : read_manifest(cdir / "manifest.json")) {
        synth::SynthStack s;
        s.stack = load_stack(sk, o.width, o.height, cdir);
        for (std::size_t t = 0; t < sk.frames.size(); ++t)
          s.gt_warps.push_back(read_warp_grid(cdir / "gt" / sk.stack_id / ("t" + std::to_string(t) + "_warp.f32")));
        s.illuminations.assign(c.illuminations.begin(),
                               c.illuminations.begin() + static_cast<std::ptrdiff_t>(
                                                             std::min(sk.frames.size(), c.illuminations.size())));
        if (s.illuminations.size() != sk.frames.size()) throw DataError("stack " + sk.stack_id + ": frame/time mismatch");
        stacks.push_back(std::move(s));
      }
    }
    report = eval::run_alignment(stacks, o);
  } else if (protocol == "azimuth") {
    if (corpus_dir.empty()) {
      report = eval::run_azimuth(o);
    } else {
      const SynthCorpus c = read_corpus(cdir);
      std::vector<Panorama> panos;
      std::vector<double> truth;
      for (const auto& sc : c.scenes)
        for (const auto& il : c.illuminations) {
          panos.push_back(synth::render(sc, il, o.width, o.height, o.gamma).pano);
          truth.push_back(il.sun_azimuth);
        }
      report = eval::run_azimuth(panos, truth, o);
    }
  } else {
    throw UsageError("--protocol must be consistency, completion, alignment or azimuth");
  }
  report.config["corpus"] = corpus_dir.empty() ? json("builtin") : json(fs::path(corpus_dir).filename().string());
  const json doc = eval::report_to_json(report);
  const auto problems = eval::validate_report(doc);
  if (!problems.empty()) throw std::runtime_error("report failed validation: " + problems.front());
  out.json_file(report_name, doc);
  const auto csv = get<std::string>(cfg, "csv");
  if (!csv.empty()) out.text(fs::path(csv).filename(), eval::table_csv({report}));
  std::cout << report.protocol << " (" << report.metric << "):";
  for (const auto& m : report.methods) std::cout << ' ' << m << '=' << report.results.at(m);
  std::cout << '\n';
}

// ---------------------------------------------------------------------------

bool is_eval_report_path(const std::string& command, const fs::path& out) {
  return command == "eval" && out.extension() == ".json";
}

}  // namespace

fs::path run_manifest_path(const std::string& command, const fs::path& out) {
  if (is_eval_report_path(command, out)) return fs::path(out).replace_extension(".run.json");
  return out / "run_manifest.json";
}

json execute(const std::string& command, const json& config, const fs::path& out) {
  fs::path root = out;
  fs::path report_name = "report.json";
  if (is_eval_report_path(command, out)) {
    root = out.parent_path().empty() ? fs::path(".") : out.parent_path();
    report_name = out.filename();
  }
  fs::create_directories(root);
  Outputs outputs(root);
  if (command == "ingest") run_ingest(config, outputs);
  else if (command == "synth") run_synth(config, outputs);
  else if (command == "align") run_align(config, outputs);
  else if (command == "decompose") run_decompose(config, outputs);
  else if (command == "azimuth") run_azimuth(config, outputs);
  else if (command == "relight") run_relight(config, outputs);
  else if (command == "eval") run_eval(config, outputs, report_name);
  else throw UsageError("unknown subcommand '" + command + "'");
  json manifest = {{"tool", kToolName},
                   {"version", kVersion},
                   {"command", command},
                   {"config", config},
                   {"artifacts", outputs.hashes()}};
  io::write_json(run_manifest_path(command, out), manifest);
  return manifest;
}

namespace {

int replay(const fs::path& run_file, const fs::path& out) {
  const json run = io::read_json(run_file);
  if (!run.contains("command") || !run.contains("config") || !run.contains("artifacts"))
    throw DataError("not a run manifest: " + run_file.string());
  const auto command = run["command"].get<std::string>();
  fs::path target = out;
  if (command == "eval")  // the report keeps its original file name inside --out
    for (const auto& [name, hash] : run["artifacts"].items())
      if (fs::path(name).extension() == ".json") target = out / name;
  const json again = execute(command, run["config"], target);
  int mismatches = 0;
  for (const auto& [name, hash] : run["artifacts"].items()) {
    const bool same = again["artifacts"].contains(name) && again["artifacts"][name] == hash;
    if (!same) {
      ++mismatches;
      std::cout << "MISMATCH " << name << '\n';
    }
  }
  for (const auto& [name, hash] : again["artifacts"].items())
    if (!run["artifacts"].contains(name)) {
      ++mismatches;
      std::cout << "EXTRA " << name << '\n';
    }
  std::cout << "replayed " << command << ": " << run["artifacts"].size() - static_cast<std::size_t>(std::max(0, mismatches))
            << " of " << run["artifacts"].size() << " artifacts identical\n";
  if (mismatches > 0) throw DataError("replay of " + run_file.string() + " produced different artifacts");
  return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Timelapse intrinsic images: factorize, align and evaluate panorama stacks", kToolName};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version",
                       json{{"name", kToolName}, {"version", kVersion}, {"report_schema", eval::kReportSchemaVersion}}.dump());

  Bindings global;
  global.add<std::uint64_t>(&app, "seed", 0, "random seed");
  global.add<std::string>(&app, "resolution", "240x80", "working resolution WxH (W divisible by 60, W = 3H)");
  global.add<double>(&app, "gamma", 2.2, "display gamma (images are encoded with exponent 1/gamma)");
  const unsigned hw = std::thread::hardware_concurrency();
  global.add<int>(&app, "threads", static_cast<int>(hw == 0 ? 1 : hw), "worker threads (results do not depend on it)");
  std::string out_path, config_path;
  app.add_option("--out", out_path, "output directory (eval: report file)");
  app.add_option("--config", config_path, "JSON file overriding defaults; flags override it");
  app.add_flag("-v,--verbose", verbosity, "log progress to stderr");

  std::map<std::string, Bindings> sub;
  auto add_sub = [&](const std::string& name, const std::string& desc) {
    CLI::App* s = app.add_subcommand(name, desc);
    sub[name] = Bindings{};
    return s;
  };

  {
    auto* s = add_sub("ingest", "cluster geotagged captures into stacks and write manifest.json");
    auto& b = sub["ingest"];
    b.add<std::string>(s, "records", "", "records JSON (array or {\"records\": [...]})")->required();
    b.add<double>(s, "radius", kDefaultClusterRadius, "cluster radius in meters");
    b.add_flag(s, "check", "decode every frame after clustering");
  }
  {
    auto* s = add_sub("synth", "render a synthetic space-time corpus with ground truth");
    auto& b = sub["synth"];
    b.add<int>(s, "scenes", 2, "number of scenes (rows)");
    b.add<int>(s, "times", 4, "number of illuminations (columns, at most 8)");
    b.add<double>(s, "jitter", 0.0, "spline control-point jitter in pixels");
  }
  {
    auto* s = add_sub("align", "jointly align a stack with spline warps");
    auto& b = sub["align"];
    b.add<std::string>(s, "manifest", "", "stack manifest")->required();
    b.add<std::string>(s, "stack_id", "", "stack to align")->required();
    b.add<int>(s, "steps", AlignConfig{}.steps, "optimizer steps");
    b.add<std::string>(s, "mode", "rgb", "rgb|reflectance")->check(CLI::IsMember({"rgb", "reflectance"}));
    b.add_object("align", align_defaults());
  }
  {
    auto* s = add_sub("decompose", "factorize a stack into reflectance and per-frame shading");
    auto& b = sub["decompose"];
    b.add<std::string>(s, "manifest", "", "stack manifest")->required();
    b.add<std::string>(s, "stack_id", "", "stack to decompose")->required();
    b.add<std::string>(s, "method", "bicolor", "weiss|bicolor|monocolor")
        ->check(CLI::IsMember({"weiss", "bicolor", "monocolor"}));
    b.add<int>(s, "iters", FitConfig{}.iterations, "fit iterations");
    b.add_object("fit", fit_defaults());
  }
  {
    auto* s = add_sub("azimuth", "estimate sun azimuth of a panorama or of every frame in a manifest");
    auto& b = sub["azimuth"];
    b.add<std::string>(s, "image", "", "single panorama PNG");
    b.add<std::string>(s, "manifest", "", "batch mode: manifest of stacks");
    b.add<double>(s, "gt_deg", std::numeric_limits<double>::quiet_NaN(), "ground-truth azimuth in degrees");
    b.add<std::string>(s, "truth", "", "batch mode: JSON {frame id: azimuth deg}");
  }
  {
    auto* s = add_sub("relight", "relight a fitted synthetic scene to a new sun azimuth or a donor illumination");
    auto& b = sub["relight"];
    b.add<std::string>(s, "corpus", "", "synth output directory (default: built-in scenes from --seed)");
    b.add<int>(s, "scene", 0, "scene index");
    b.add<int>(s, "frame", 0, "time index");
    b.add<double>(s, "azimuth_deg", std::numeric_limits<double>::quiet_NaN(), "new sun azimuth in degrees");
    b.add<int>(s, "donor_scene", -1, "scene whose fitted illumination is transferred");
    b.add_object("fit", fit_defaults());
  }
  {
    auto* s = add_sub("eval", "run an evaluation protocol and write a versioned JSON report");
    auto& b = sub["eval"];
    b.add<std::string>(s, "protocol", "", "consistency|completion|alignment|azimuth")
        ->required()
        ->check(CLI::IsMember({"consistency", "completion", "alignment", "azimuth"}));
    b.add<std::string>(s, "corpus", "", "synth output directory (default: built-in corpus from --seed)");
    b.add<std::string>(s, "csv", "", "also write a method x protocol CSV table with this file name");
    b.add<int>(s, "stacks", 20, "built-in corpus size (consistency, alignment)");
    b.add<int>(s, "varying_stacks", 2, "alignment: stacks whose illumination changes per frame");
    b.add<double>(s, "jitter", 3.0, "alignment: spline jitter in pixels");
    b.add<int>(s, "steps", AlignConfig{}.steps, "alignment: optimizer steps");
    b.add<std::string>(s, "grid", "3x4", "completion: scenes x times");
    b.add<int>(s, "panoramas", 100, "azimuth: number of rendered panoramas");
    b.add_object("fit", fit_defaults());
    b.add_object("align", align_defaults());
  }
  std::string replay_run;
  {
    auto* s = app.add_subcommand("replay", "rerun a run manifest and compare artifact hashes");
    s->add_option("--run", replay_run, "run manifest JSON")->required();
  }

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    std::cout << app.version() << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help("", CLI::AppFormatMode::All);
    return kExitUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (out_path.empty()) throw UsageError("--out is required");
    if (command == "replay") return replay(replay_run, out_path);
    json file_cfg = json::object();
    if (!config_path.empty()) {
      try {
        file_cfg = io::read_json(config_path);
      } catch (const DataError& e) {
        throw UsageError(e.what());
      }
      if (!file_cfg.is_object()) throw UsageError("--config must hold a JSON object");
    }
    Bindings all = global;
    all.merge(sub.at(command));
    const json cfg = all.resolve(file_cfg);
    note("running " + command + " with " + cfg.dump());
    execute(command, cfg, out_path);
    return kExitOk;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n" << app.get_subcommand(command)->help();
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args);
}

}  // namespace tli::cli
