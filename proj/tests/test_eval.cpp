#include <doctest.h>

#include <cmath>

#include "tli/azimuth.hpp"
#include "tli/eval.hpp"
#include "tli/rng.hpp"

using namespace tli;
using namespace tli::eval;

namespace {

Stack constant_shading_stack(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image log_r(w, h, 3, DomainTag::LogLinear);
  for (double& v : log_r.data()) v = rng.uniform(-2.5, -0.6);
  Stack s;
  s.stack_id = "const";
  for (int i = 0; i < 8; ++i) {
    Image lin(w, h, 3);
    const double k = rng.uniform(-0.6, 0.2);
    for (std::size_t p = 0; p < lin.size(); ++p) lin.data()[p] = std::exp(log_r.data()[p] + k);
    s.frames.push_back(gamma_encode(lin));
  }
  return s;
}

EvalReport sample_report() {
  EvalReport r;
  r.protocol = "consistency";
  r.metric = "srgb_mse";
  r.methods = {"bicolor", "pixel_nn"};
  r.results = {{"bicolor", 0.001}, {"pixel_nn", 0.003}};
  r.seed = 7;
  return r;
}

}  // namespace

TEST_CASE("parallel_map is independent of the worker count") {
  const std::function<double(std::size_t)> fn = [](std::size_t i) { return std::sin(static_cast<double>(i)); };
  const auto serial = parallel_map(37, 1, fn);
  CHECK(parallel_map(37, 4, fn) == serial);
  CHECK(parallel_map(0, 4, fn).empty());
  const std::function<int(std::size_t)> bad = [](std::size_t i) -> int {
    if (i == 5) throw DataError("five");
    return 0;
  };
  CHECK_THROWS_AS(parallel_map(9, 3, bad), DataError);
}

TEST_CASE("method names") {
  for (Method m : {Method::Weiss, Method::Bicolor, Method::Monocolor, Method::PixelNn})
    CHECK(method_from_string(to_string(m)) == m);
  CHECK(to_string(Method::PixelNn) == "pixel_nn");
  CHECK_THROWS(method_from_string("retinex"));
}

TEST_CASE("fit_illumination recovers exact parameters") {
  Rng rng(51);
  const int w = 120, h = 40;
  Image mask(w, h, 1), weight(w, h, 1, DomainTag::SrgbUnit, 1.0);
  for (double& m : mask.data()) m = rng.uniform() < 0.3 ? 0.0 : rng.uniform(0.2, 1.0);
  IlluminationFit truth;
  truth.a = {-1.3, -1.1, -0.9};
  truth.b = {0.2, 0.05, -0.25};
  truth.rho = 2.7;
  const Image s = illumination_shading(truth, mask);
  for (int y = 0; y < h; ++y) {
    CHECK(s.at(0, y, 3) == doctest::Approx(truth.a[0] + std::log1p(truth.rho * mask.at(0, y, 3)) +
                                           truth.b[0] * mask.at(0, y, 3)));
  }
  const IlluminationFit f = fit_illumination(s, mask, weight);
  CHECK(f.rho == doctest::Approx(truth.rho).epsilon(1e-5));
  for (int c = 0; c < 3; ++c) {
    CHECK(f.a[c] == doctest::Approx(truth.a[c]).epsilon(1e-5));
    CHECK(f.b[c] == doctest::Approx(truth.b[c]).epsilon(1e-4));
  }
  CHECK(f.residual < 1e-10);
  // a warm start near the optimum converges to the same fit
  IlluminationFit near = truth;
  near.rho = 3.1;
  CHECK(fit_illumination(s, mask, weight, &near).rho == doctest::Approx(truth.rho).epsilon(1e-5));
}

TEST_CASE("zero-weight pixels do not influence the illumination fit") {
  Rng rng(52);
  Image mask(60, 20, 1), weight(60, 20, 1, DomainTag::SrgbUnit, 1.0);
  for (double& m : mask.data()) m = rng.uniform() < 0.4 ? 0.0 : rng.uniform(0.2, 1.0);
  IlluminationFit truth;
  truth.a = {-1.0, -1.0, -1.0};
  truth.rho = 1.5;
  Image s = illumination_shading(truth, mask);
  for (std::size_t p = 0; p < 100; ++p) {
    weight.data()[p] = 0.0;
    for (int c = 0; c < 3; ++c) s.plane(c)[p] += 5.0;
  }
  CHECK(fit_illumination(s, mask, weight).rho == doctest::Approx(1.5).epsilon(1e-5));
}

TEST_CASE("identical substack reflectances make swap equal own") {
  const Stack s = constant_shading_stack(120, 40, 53);
  const auto r = scene_consistency(s, Method::Weiss);
  CHECK(r.swap_mse == doctest::Approx(r.own_mse).epsilon(1e-9));
  // Weiss shading is gray, so per-channel reflectance offsets leave a small residual
  CHECK(r.own_mse < 1e-4);
  CHECK_THROWS(scene_consistency(Stack{"short", {s.frames[0], s.frames[1]}, {}, {}}, Method::Weiss));
}

TEST_CASE("swap is never better than own for factorizations") {
  const auto scene = synth::random_scene(54);
  const auto stack = synth::make_stack(scene, synth::random_illuminations(8, 55), 0.0, 56, 120, 40);
  FitConfig cfg;
  cfg.iterations = 30;
  for (Method m : {Method::Weiss, Method::Bicolor}) {
    const auto r = scene_consistency(stack.stack, m, cfg);
    CHECK(r.swap_mse >= r.own_mse);
  }
}

TEST_CASE("relighting to the original azimuth reproduces the reconstruction") {
  const auto scene = synth::random_scene(57);
  const auto stack = synth::make_stack(scene, synth::random_illuminations(4, 58), 0.0, 59, 120, 40);
  FitConfig cfg;
  cfg.iterations = 20;
  const auto fit = bicolor_fit(stack.stack, cfg);
  const auto r = relight_azimuth(scene, stack, fit, 1, stack.illuminations[1].sun_azimuth);
  CHECK(r.relit == reconstruct_frame(fit, 1));
  CHECK(r.ground_truth == stack.renders[1].pano);
  CHECK_THROWS(relight_azimuth(scene, stack, fit, 4, 0.0));
}

TEST_CASE("sun azimuth point estimate on a rendered panorama") {
  synth::Illumination il;
  il.sun_azimuth = -1.9;
  il.sun_color = {1.0, 0.9, 0.8};
  il.sky_color = {0.5, 0.6, 0.9};
  const auto r = synth::render(synth::empty_scene(), il, 240, 80);
  CHECK(std::abs(wrap_angle(estimate_sun_azimuth(r.pano) - il.sun_azimuth)) < 6.0 * kDegToRad);
}

TEST_CASE("report validation") {
  const auto good = report_to_json(sample_report());
  CHECK(validate_report(good).empty());
  CHECK(good["schema_version"] == kReportSchemaVersion);

  auto missing = good;
  missing.erase("metric");
  CHECK(validate_report(missing).size() == 1);
  auto unknown = good;
  unknown["protocol"] = "vibes";
  CHECK_FALSE(validate_report(unknown).empty());
  auto negative = good;
  negative["results"]["bicolor"] = -1.0;
  CHECK_FALSE(validate_report(negative).empty());
  auto unlisted = good;
  unlisted["results"]["weiss"] = 0.1;
  CHECK_FALSE(validate_report(unlisted).empty());
  auto absent = good;
  absent["results"].erase("pixel_nn");
  CHECK_FALSE(validate_report(absent).empty());
  CHECK_FALSE(validate_report(nlohmann::json::array()).empty());
}

TEST_CASE("csv table has one row per method and one column per protocol") {
  EvalReport a = sample_report();
  EvalReport b;
  b.protocol = "completion";
  b.methods = {"bicolor_transfer", "pixel_nn"};
  b.results = {{"bicolor_transfer", 0.0004}, {"pixel_nn", 0.005}};
  CHECK(table_csv({a, b}) ==
        "method,consistency,completion\n"
        "bicolor,0.001,\n"
        "pixel_nn,0.003,0.005\n"
        "bicolor_transfer,,0.0004\n");
}

TEST_CASE("small consistency run yields a valid report") {
  ProtocolOptions o;
  o.stacks = 2;
  o.width = 120;
  o.height = 40;
  o.fit.iterations = 10;
  const auto corpus = consistency_corpus(o);
  REQUIRE(corpus.size() == 2);
  const auto rep = run_consistency(corpus, o);
  const auto j = report_to_json(rep);
  CHECK(validate_report(j).empty());
  CHECK(j["instances"].size() == 2);
  CHECK(rep.results.size() == 4);
  o.threads = 2;
  CHECK(report_to_json(run_consistency(corpus, o))["results"] == j["results"]);
}
