#include <doctest.h>

#include <cmath>

#include "tli/intrinsics.hpp"
#include "tli/rng.hpp"
#include "tli/synth.hpp"

using namespace tli;

namespace {

Image filled(int w, int h, int c, double v) { return Image(w, h, c, DomainTag::LogLinear, v); }

Image centered(const Image& a) {
  Image out = a;
  for (int c = 0; c < a.channels(); ++c) {
    double m = 0.0;
    for (double v : a.plane(c)) m += v;
    m /= static_cast<double>(a.plane_size());
    for (double& v : out.plane(c)) v -= m;
  }
  return out;
}

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// Stack whose frames share reflectance and differ by a per-frame, per-channel
// constant in log space.
Stack constant_shading_stack(const Image& log_r, Rng& rng) {
  Stack s;
  s.stack_id = "const";
  for (int i = 0; i < 8; ++i) {
    Image lin(log_r.width(), log_r.height(), 3);
    for (int c = 0; c < 3; ++c) {
      const double k = rng.uniform(-0.6, 0.2);
      for (std::size_t p = 0; p < lin.plane_size(); ++p) lin.plane(c)[p] = std::exp(log_r.plane(c)[p] + k);
    }
    s.frames.push_back(gamma_encode(lin));
  }
  return s;
}

}  // namespace

TEST_CASE("loss_rc hand values") {
  const std::vector<Image> two{filled(2, 1, 1, 1.0), filled(2, 1, 1, 3.0)};
  CHECK(loss_rc(two) == doctest::Approx(2.0));
  // pairs (0,1)=1, (0,2)=4, (1,2)=3 averaged over three pairs
  const std::vector<Image> three{filled(1, 1, 1, 0.0), filled(1, 1, 1, 1.0), filled(1, 1, 1, -3.0)};
  CHECK(loss_rc(three) == doctest::Approx(8.0 / 3.0));
  const std::vector<Image> same{filled(4, 2, 3, 0.7), filled(4, 2, 3, 0.7)};
  CHECK(loss_rc(same) == 0.0);
  CHECK_THROWS(loss_rc(std::vector<Image>{filled(1, 1, 1, 0.0)}));
}

TEST_CASE("loss_wl hand values") {
  const std::vector<Image> cancel{filled(3, 1, 3, 0.25), filled(3, 1, 3, -0.25)};
  CHECK(loss_wl(cancel) == 0.0);
  const std::vector<Image> add{filled(3, 1, 3, 0.25), filled(3, 1, 3, 0.5)};
  CHECK(loss_wl(add) == doctest::Approx(0.75));
  BiColorShading s;
  s.mask = Image(2, 1, 1);
  s.mask.at(0, 0, 1) = 1.0;
  s.c1 = {0.1, 0.2, 0.3};
  s.c2 = {-0.1, 0.0, 0.1};
  const Image b = s.bicolor_field();
  CHECK(b.at(1, 0, 0) == doctest::Approx(0.0));
  CHECK(b.at(2, 0, 1) == doctest::Approx(0.3));
  // (0.1 + 0 + 0.1 + 0.1 + 0.2 + 0.3) / 6
  CHECK(loss_wl(std::vector<Image>{b}) == doctest::Approx(0.8 / 6.0));
}

TEST_CASE("temporal median") {
  const std::vector<Image> odd{filled(1, 1, 1, 5.0), filled(1, 1, 1, -1.0), filled(1, 1, 1, 2.0)};
  CHECK(temporal_median(odd).at(0, 0, 0) == 2.0);
  const std::vector<Image> even{filled(1, 1, 1, 5.0), filled(1, 1, 1, -1.0), filled(1, 1, 1, 2.0),
                                filled(1, 1, 1, 3.0)};
  CHECK(temporal_median(even).at(0, 0, 0) == 2.5);
}

TEST_CASE("poisson integration round trip") {
  Rng rng(31);
  Image u(120, 40, 1, DomainTag::LogLinear);
  for (double& v : u.data()) v = rng.uniform(-2.0, 1.0);
  const auto [gx, gy] = forward_gradients(u);
  PoissonReport rep;
  const Image back = poisson_reconstruct(gx, gy, &rep);
  CHECK(max_abs_diff(centered(back), centered(u)) < 1e-4);
  CHECK(rep.gradient_residual < 1e-10);
}

TEST_CASE("poisson least squares on an inconsistent field") {
  Rng rng(32);
  Image gx(60, 20, 1, DomainTag::LogLinear), gy(60, 20, 1, DomainTag::LogLinear);
  for (double& v : gx.data()) v = rng.uniform(-1.0, 1.0);
  for (double& v : gy.data()) v = rng.uniform(-1.0, 1.0);
  for (int x = 0; x < 60; ++x) gy.at(0, 19, x) = 0.0;
  PoissonReport rep;
  const Image u = poisson_reconstruct(gx, gy, &rep);
  CHECK(rep.gradient_residual > 0.1);
  CHECK(rep.normal_residual < 1e-8);
  double mean = 0.0;
  for (double v : u.data()) mean += v;
  CHECK(std::abs(mean / static_cast<double>(u.size())) < 1e-12);
}

TEST_CASE("weiss recovers reflectance exactly under constant shading") {
  Rng rng(33);
  Image log_r(120, 40, 3, DomainTag::LogLinear);
  for (double& v : log_r.data()) v = rng.uniform(-2.5, -0.6);
  const Decomposition d = weiss_mle(constant_shading_stack(log_r, rng));
  CHECK(max_abs_diff(centered(d.log_reflectance), centered(log_r)) < 1e-6);
  CHECK(d.shadings.size() == 8);
}

TEST_CASE("weiss on sparse shadows") {
  synth::FactorStackOptions o;
  o.bicolor = false;
  o.seed = 34;
  const auto fs = synth::make_factor_stack(o);
  const Decomposition d = weiss_mle(fs.stack);
  CHECK(pearson_per_channel_offset(d.log_reflectance, fs.log_reflectance) > 0.99);
}

TEST_CASE("bicolor fit on an exact-model stack") {
  synth::FactorStackOptions o;
  o.seed = 35;
  const auto fs = synth::make_factor_stack(o);
  FitConfig cfg;
  const Decomposition bi = bicolor_fit(fs.stack, cfg);
  cfg.mono_color = true;
  const Decomposition mono = bicolor_fit(fs.stack, cfg);
  const double bi_mse = reconstruction_mse(fs.stack, bi);
  CHECK(bi_mse < 1e-3);
  CHECK(reconstruction_mse(fs.stack, mono) >= bi_mse);
  CHECK(pearson_per_channel_offset(bi.log_reflectance, fs.log_reflectance) > 0.99);
  const auto& trace = bi.report.trace;
  REQUIRE(trace.size() > 1);
  for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1]);
  for (const auto& s : mono.shadings) CHECK(s.c1 == s.c2);
}

TEST_CASE("objective of the generating factors is at most the fitted one") {
  synth::FactorStackOptions o;
  o.seed = 36;
  o.width = 120;
  o.height = 40;
  const auto fs = synth::make_factor_stack(o);
  Decomposition truth;
  truth.log_reflectance = fs.log_reflectance;
  truth.shadings = fs.shadings;
  const auto logs = log_frames(fs.stack);
  const FitReport r = evaluate_objective(logs, truth, FitConfig{});
  CHECK(r.recon < 1e-6);
  CHECK(r.rc >= 0.0);
}

TEST_CASE("pixel nearest neighbor picks the closest other frame") {
  Stack s;
  for (double v : {0.1, 0.5, 0.45, 0.9}) s.frames.emplace_back(60, 20, 3, DomainTag::SrgbUnit, v);
  const auto r = pixel_nn_baseline(s, 1);
  CHECK(r.neighbor == 2);
  CHECK(r.mse == doctest::Approx(0.0025));
  CHECK_THROWS(pixel_nn_baseline(s, 4));
}
