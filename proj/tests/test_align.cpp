#include <doctest.h>

#include "tli/align.hpp"
#include "tli/eval.hpp"

using namespace tli;

namespace {

synth::SynthStack fixed_light_stack(double jitter, std::uint64_t seed, int w, int h) {
  const auto il = synth::random_illuminations(1, seed);
  return synth::make_stack(synth::random_scene(seed), std::vector<synth::Illumination>(6, il.front()), jitter,
                           seed + 1, w, h);
}

}  // namespace

TEST_CASE("config validation and mode names") {
  CHECK_NOTHROW(AlignConfig{}.validate());
  AlignConfig bad;
  bad.steps = -1;
  CHECK_THROWS(bad.validate());
  CHECK(align_mode_from_string(to_string(AlignMode::Reflectance)) == AlignMode::Reflectance);
  CHECK_THROWS(align_mode_from_string("affine"));
}

TEST_CASE("aligned stacks stay put") {
  const auto s = fixed_light_stack(0.0, 61, 120, 40);
  AlignConfig cfg;
  cfg.steps = 30;
  const auto r = align_stack(s.stack, cfg);
  const double epe = alignment_endpoint_error(r.warps, s.gt_warps, 40, 120);
  CHECK(epe <= 10.0 * cfg.init_noise);
}

TEST_CASE("zero steps return the initialization") {
  const auto s = fixed_light_stack(1.0, 62, 120, 40);
  AlignConfig cfg;
  cfg.steps = 0;
  const auto r = align_stack(s.stack, cfg);
  CHECK(r.loss_trace.empty());
  CHECK(r.final_loss == doctest::Approx(r.initial_loss));
}

TEST_CASE("small spline jitter is recovered") {
  const auto s = fixed_light_stack(1.5, 63, 120, 40);
  AlignConfig cfg;
  cfg.steps = 150;
  const auto inst = eval::alignment_bench(s, cfg);
  CHECK(inst.epe_after < 0.5);
  CHECK(inst.epe_after < inst.epe_before);
  CHECK(inst.variance_after < inst.variance_before);
  CHECK(inst.loss_after < inst.loss_before);
}

TEST_CASE("alignment is deterministic") {
  const auto s = fixed_light_stack(1.0, 64, 120, 40);
  AlignConfig cfg;
  cfg.steps = 20;
  const auto a = align_stack(s.stack, cfg), b = align_stack(s.stack, cfg);
  CHECK(a.warps == b.warps);
  CHECK(a.loss_trace == b.loss_trace);
}

TEST_CASE("stack statistics") {
  Stack st;
  st.frames = {Image(60, 20, 3, DomainTag::SrgbUnit, 0.2), Image(60, 20, 3, DomainTag::SrgbUnit, 0.4)};
  CHECK(stack_average(st).at(1, 3, 4) == doctest::Approx(0.3));
  // unbiased variance of {0.2, 0.4}
  CHECK(stack_variance(st).mean == doctest::Approx(0.02));
}
