#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "tli/image.hpp"
#include "tli/shading.hpp"
#include "tli/stack.hpp"

namespace tli {

/// Mean pairwise L1 inconsistency between per-frame log-reflectance maps,
/// normalized by pixels, channels and the number of unordered pairs.
double loss_rc(std::span<const Image> log_reflectances);

/// L1 norm of the across-frame sum of bi-color fields, normalized by pixels
/// and channels (frames are summed, not averaged).
double loss_wl(std::span<const Image> bicolor_fields);

/// Forward differences: gx wraps horizontally, gy is zero on the last row.
std::pair<Image, Image> forward_gradients(const Image& u);

struct PoissonReport {
  double gradient_residual = 0.0;  // ||D u - g|| / ||g||
  double normal_residual = 0.0;    // ||D^T D u - D^T g|| / ||D^T g||
};

/// Least-squares integration of a gradient field (horizontally periodic,
/// vertically Neumann, zero-mean gauge) by diagonalizing the normal equations
/// with a real Fourier basis in x and a DCT-II basis in y. 1-channel fields.
Image poisson_reconstruct(const Image& gx, const Image& gy, PoissonReport* report = nullptr);

/// gamma_decode + log_encode of every frame.
std::vector<Image> log_frames(const Stack& stack, const GammaParams& gamma = {});

/// Median-of-gradients reflectance with grayscale per-frame shading.
Decomposition weiss_mle(const Stack& stack, const GammaParams& gamma = {});

struct FitConfig {
  int iterations = 300;
  double learning_rate = 0.02;
  double weight_recon = 1.0;
  double weight_rc = 1.0;
  double weight_wl = 0.1;
  bool mono_color = false;
  std::uint64_t seed = 0;
};

/// Direct minimization of
///   w_recon * L1(log I - logR - S_i) + w_rc * loss_rc(log I_i - S_i) + w_wl * loss_wl(B_i)
/// over logR, per-frame log intensity, c1, c2 and mask logits. Steps are Adam
/// directions with backtracking, so the objective never increases.
Decomposition bicolor_fit(const Stack& stack, const FitConfig& cfg = {}, const GammaParams& gamma = {});

/// Same fit on log-domain frames directly. A non-null warm_start (same frame
/// count and dims) replaces the default initialization.
Decomposition bicolor_fit_log(std::span<const Image> log_frames, const FitConfig& cfg = {},
                              const Decomposition* warm_start = nullptr);

/// Objective terms of a decomposition against log frames.
FitReport evaluate_objective(std::span<const Image> log_frames, const Decomposition& d, const FitConfig& cfg);

/// sRGB reconstruction of frame i.
Panorama reconstruct_frame(const Decomposition& d, std::size_t frame, const GammaParams& gamma = {});
Panorama reconstruct_with(const Image& log_reflectance, const BiColorShading& shading,
                          const GammaParams& gamma = {});

/// Mean sRGB MSE of every reconstructed frame against the stack.
double reconstruction_mse(const Stack& stack, const Decomposition& d, const GammaParams& gamma = {});

struct PixelNnResult {
  double mse = 0.0;
  std::size_t neighbor = 0;
};

/// Reconstructs the target frame by the other stack frame closest in MSE.
PixelNnResult pixel_nn_baseline(const Stack& stack, std::size_t target_index);

/// Per-pixel median across images, per channel (mean of the two middle
/// values for even counts).
Image temporal_median(std::span<const Image> images);

}  // namespace tli
