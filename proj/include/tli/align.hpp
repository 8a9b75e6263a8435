#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tli/image.hpp"
#include "tli/intrinsics.hpp"
#include "tli/stack.hpp"
#include "tli/warp.hpp"

namespace tli {

enum class AlignMode { Rgb, Reflectance };

std::string to_string(AlignMode mode);
AlignMode align_mode_from_string(const std::string& s);

struct AlignConfig {
  int steps = 200;
  double learning_rate = 0.1;  // px; Adam is scale-adaptive
  double beta1 = 0.0;
  double beta2 = 0.999;
  AlignMode mode = AlignMode::Rgb;
  double init_noise = 1e-3;  // px
  std::uint64_t seed = 0;
  int refit_every = 5;       // reflectance mode: factorization refit period
  /// Gaussian pre-smoothing of the frames entering the loss; the width
  /// steps down from blur_sigma to 0 over the first 3/4 of the run.
  double blur_sigma = 2.0;
  /// Reflectance mode: smoothing applied to the factorizer's shading.
  double shading_sigma = 1.5;
  int factor_iterations = 5;

  void validate() const;
};

/// Maps aligned log frames to per-frame 3-channel log shading.
using Factorizer = std::function<std::vector<Image>(std::span<const Image>)>;

/// Default factorizer: a short bicolor_fit, warm-started from its previous
/// call, returning each frame's full log shading. Stateful: use one per job.
Factorizer bicolor_factorizer(int iterations);

struct AlignResult {
  std::vector<WarpGrid> warps;
  Stack aligned;
  std::vector<double> loss_trace;  // optimized (pre-smoothed) loss at each step
  double initial_loss = 0.0;       // unsmoothed loss before the first step
  double final_loss = 0.0;         // unsmoothed loss after the last step
};

/// Mean pairwise L1 between warped log frames (Rgb) or between per-frame
/// reflectance estimates warped log frame - shading (Reflectance), optimized
/// over all frames' control lattices with Adam. Each step is halved until the
/// optimized loss does not increase. The lattices are kept zero-mean across
/// frames (alignment is defined up to a common warp).
AlignResult align_stack(const Stack& stack, const AlignConfig& cfg, const Factorizer& factorizer = {},
                        const GammaParams& gamma = {});

struct StackVariance {
  Image per_pixel;  // unbiased variance across frames, per channel
  double mean = 0.0;
};

StackVariance stack_variance(const Stack& stack);

/// Per-pixel average frame.
Image stack_average(const Stack& stack);

/// Mean endpoint error of recovered aligning flows against ground-truth
/// perturbations, after removing the across-frame mean flow from both.
double alignment_endpoint_error(const std::vector<WarpGrid>& recovered,
                                const std::vector<WarpGrid>& gt_perturbations, int height, int width);

}  // namespace tli
