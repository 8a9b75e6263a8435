#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "tli/image.hpp"

namespace tli {

/// Per-frame lattice of 8 x 32 control-point displacements (dx, dy) in pixels.
/// Control column j sits at pixel x = (j + 0.5) * W/32 - 0.5 and wraps
/// horizontally; control row i sits at y = (i + 0.5) * H/8 - 0.5 and is
/// edge-replicated vertically.
class WarpGrid {
 public:
  static constexpr int kRows = 8;
  static constexpr int kCols = 32;
  static constexpr int kSize = kRows * kCols * 2;

  WarpGrid() { values_.fill(0.0); }

  double& dx(int row, int col) { return values_[(row * kCols + col) * 2]; }
  double& dy(int row, int col) { return values_[(row * kCols + col) * 2 + 1]; }
  double dx(int row, int col) const { return values_[(row * kCols + col) * 2]; }
  double dy(int row, int col) const { return values_[(row * kCols + col) * 2 + 1]; }

  std::array<double, kSize>& values() { return values_; }
  const std::array<double, kSize>& values() const { return values_; }

  bool is_identity() const;
  double max_abs() const;

  friend bool operator==(const WarpGrid&, const WarpGrid&) = default;

 private:
  std::array<double, kSize> values_;
};

/// Dense H x W x 2 displacement field, stored as a 2-channel LOG_LINEAR-free
/// image (channel 0 = dx, channel 1 = dy).
using FlowField = Image;

/// Uniform cubic B-spline basis, nonzero on (-2, 2).
double cubic_bspline(double t);

/// Tensor-product cubic B-spline surface through the control lattice.
FlowField eval_spline(const WarpGrid& theta, int height, int width);

/// Adjoint of eval_spline: scatters a dense (dx, dy) gradient back to the
/// control lattice.
WarpGrid eval_spline_adjoint(const FlowField& grad_flow);

/// Backward bilinear warp: out(x, y) = p(x + dx, y + dy), x wrapping
/// cyclically and y clamped to the image.
Image warp(const Image& p, const FlowField& flow);

/// Gradient of sum(upstream * warp(p, eval_spline(theta))) with respect to
/// theta. upstream has the channel count of p.
WarpGrid warp_grad(const Image& p, const WarpGrid& theta, const Image& upstream);

/// Same, given an already evaluated flow; returns the dense flow gradient.
FlowField warp_flow_grad(const Image& p, const FlowField& flow, const Image& upstream);

/// Warp that also returns the per-channel spatial derivatives of the warped
/// image with respect to dx and dy (dy is zero where the sample is clamped).
Image warp_with_jacobian(const Image& p, const FlowField& flow, Image& jac_x, Image& jac_y);
/// Same, writing into `out`; outputs already of the right shape keep their storage.
void warp_with_jacobian(const Image& p, const FlowField& flow, Image& out, Image& jac_x, Image& jac_y);

/// Mean endpoint error between two flows.
double mean_endpoint_error(const FlowField& a, const FlowField& b);

/// Dense displacement g with g(x) = -f(x + g(x)): the warp that undoes f.
FlowField invert_flow(const FlowField& f, int iterations = 30);

void write_warp_grid(const std::filesystem::path& path, const WarpGrid& grid);
WarpGrid read_warp_grid(const std::filesystem::path& path);

}  // namespace tli
