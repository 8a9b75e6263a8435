#include "tli/warp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "tli/io.hpp"

namespace tli {

namespace {

// Four nonzero basis taps of a uniform cubic B-spline at lattice coordinate s.
struct Taps {
  std::array<int, 4> index;
  std::array<double, 4> weight;
};

Taps taps_at(double s) {
  Taps t{};
  const double base = std::floor(s);
  const double u = s - base;
  const double u2 = u * u, u3 = u2 * u;
  t.weight = {(1.0 - 3.0 * u + 3.0 * u2 - u3) / 6.0, (4.0 - 6.0 * u2 + 3.0 * u3) / 6.0,
              (1.0 + 3.0 * u + 3.0 * u2 - 3.0 * u3) / 6.0, u3 / 6.0};
  for (int k = 0; k < 4; ++k) t.index[k] = static_cast<int>(base) - 1 + k;
  return t;
}

int wrap(int i, int n) { return ((i % n) + n) % n; }

std::vector<Taps> column_taps(int width) {
  std::vector<Taps> taps(width);
  const double spacing = static_cast<double>(width) / WarpGrid::kCols;
  for (int x = 0; x < width; ++x) {
    taps[x] = taps_at((x + 0.5) / spacing - 0.5);
    for (int& j : taps[x].index) j = wrap(j, WarpGrid::kCols);
  }
  return taps;
}

std::vector<Taps> row_taps(int height) {
  std::vector<Taps> taps(height);
  const double spacing = static_cast<double>(height) / WarpGrid::kRows;
  for (int y = 0; y < height; ++y) {
    taps[y] = taps_at((y + 0.5) / spacing - 0.5);
    for (int& i : taps[y].index) i = std::clamp(i, 0, WarpGrid::kRows - 1);
  }
  return taps;
}

struct Sample {
  int x0, x1, y0, y1;
  double fx, fy;
  bool y_clamped;
};

[[gnu::always_inline]] inline Sample sample_at(double sx, double sy, int width, int height) {
  Sample s{};
  int ix = static_cast<int>(sx);
  if (sx < ix) --ix;
  s.fx = sx - ix;
  if (ix < 0 || ix >= width) ix = wrap(ix, width);
  s.x0 = ix;
  s.x1 = ix + 1 == width ? 0 : ix + 1;
  const double ymax = static_cast<double>(height - 1);
  s.y_clamped = !(sy > 0.0 && sy < ymax);
  if (s.y_clamped) sy = sy > 0.0 ? ymax : 0.0;
  int iy = static_cast<int>(sy);
  s.fy = sy - iy;
  s.y0 = iy;
  s.y1 = iy + 1 < height ? iy + 1 : height - 1;
  return s;
}

}  // namespace

bool WarpGrid::is_identity() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0; });
}

double WarpGrid::max_abs() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

double cubic_bspline(double t) {
  const double a = std::abs(t);
  if (a < 1.0) return (4.0 - 6.0 * a * a + 3.0 * a * a * a) / 6.0;
  if (a < 2.0) {
    const double b = 2.0 - a;
    return b * b * b / 6.0;
  }
  return 0.0;
}

FlowField eval_spline(const WarpGrid& theta, int height, int width) {
  if (height <= 0 || width <= 0) throw std::invalid_argument("eval_spline: dims must be positive");
  const auto cols = column_taps(width);
  const auto rows = row_taps(height);
  FlowField flow(width, height, 2, DomainTag::LogLinear);
  double* fx = flow.plane(0).data();
  double* fy = flow.plane(1).data();
  // contract the lattice rows first, then the columns; the row buffers are
  // padded with wrapped copies so every column's four taps are contiguous
  constexpr int kPad = WarpGrid::kCols + 4;
  std::array<double, kPad> lx{}, ly{};
  std::vector<int> first(width);
  for (int x = 0; x < width; ++x) first[x] = (cols[x].index[0] + 1) % WarpGrid::kCols;  // padded slot of tap 0
  for (int y = 0; y < height; ++y) {
    const Taps& ry = rows[y];
    for (int j = 0; j < WarpGrid::kCols; ++j) {
      double ax = 0.0, ay = 0.0;
      for (int a = 0; a < 4; ++a) {
        ax += ry.weight[a] * theta.dx(ry.index[a], j);
        ay += ry.weight[a] * theta.dy(ry.index[a], j);
      }
      lx[j + 1] = ax;
      ly[j + 1] = ay;
    }
    lx[0] = lx[WarpGrid::kCols];
    ly[0] = ly[WarpGrid::kCols];
    for (int k = 1; k <= 3; ++k) {
      lx[WarpGrid::kCols + k] = lx[k];
      ly[WarpGrid::kCols + k] = ly[k];
    }
    double* ox = fx + static_cast<std::size_t>(y) * width;
    double* oy = fy + static_cast<std::size_t>(y) * width;
    for (int x = 0; x < width; ++x) {
      const auto& wt = cols[x].weight;
      const double* px = &lx[first[x]];
      const double* py = &ly[first[x]];
      ox[x] = wt[0] * px[0] + wt[1] * px[1] + wt[2] * px[2] + wt[3] * px[3];
      oy[x] = wt[0] * py[0] + wt[1] * py[1] + wt[2] * py[2] + wt[3] * py[3];
    }
  }
  return flow;
}

WarpGrid eval_spline_adjoint(const FlowField& grad_flow) {
  const int height = grad_flow.height(), width = grad_flow.width();
  const auto cols = column_taps(width);
  const auto rows = row_taps(height);
  const double* gxp = grad_flow.plane(0).data();
  const double* gyp = grad_flow.plane(1).data();
  WarpGrid g;
  constexpr int kPad = WarpGrid::kCols + 4;
  std::array<double, kPad> lx{}, ly{};
  std::vector<int> first(width);
  for (int x = 0; x < width; ++x) first[x] = (cols[x].index[0] + 1) % WarpGrid::kCols;
  for (int y = 0; y < height; ++y) {
    lx.fill(0.0);
    ly.fill(0.0);
    const double* rx = gxp + static_cast<std::size_t>(y) * width;
    const double* ry_ = gyp + static_cast<std::size_t>(y) * width;
    for (int x = 0; x < width; ++x) {
      const auto& wt = cols[x].weight;
      double* px = &lx[first[x]];
      double* py = &ly[first[x]];
      for (int b = 0; b < 4; ++b) {
        px[b] += wt[b] * rx[x];
        py[b] += wt[b] * ry_[x];
      }
    }
    // fold the padding back onto the lattice columns
    lx[WarpGrid::kCols] += lx[0];
    ly[WarpGrid::kCols] += ly[0];
    for (int k = 1; k <= 3; ++k) {
      lx[k] += lx[WarpGrid::kCols + k];
      ly[k] += ly[WarpGrid::kCols + k];
    }
    const Taps& ry = rows[y];
    for (int a = 0; a < 4; ++a)
      for (int j = 0; j < WarpGrid::kCols; ++j) {
        g.dx(ry.index[a], j) += ry.weight[a] * lx[j + 1];
        g.dy(ry.index[a], j) += ry.weight[a] * ly[j + 1];
      }
  }
  return g;
}

Image warp(const Image& p, const FlowField& flow) {
  if (flow.channels() != 2 || flow.width() != p.width() || flow.height() != p.height())
    throw std::invalid_argument("warp: flow/image dimension mismatch");
  const int w = p.width(), h = p.height();
  const std::size_t plane = p.plane_size();
  Image out(w, h, p.channels(), p.tag());
  const double* fx = flow.plane(0).data();
  const double* fy = flow.plane(1).data();
  const double* src = p.data().data();
  double* dst = out.data().data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t o = static_cast<std::size_t>(y) * w + x;
      const Sample s = sample_at(x + fx[o], y + fy[o], w, h);
      const std::size_t i00 = static_cast<std::size_t>(s.y0) * w + s.x0, i01 = static_cast<std::size_t>(s.y0) * w + s.x1;
      const std::size_t i10 = static_cast<std::size_t>(s.y1) * w + s.x0, i11 = static_cast<std::size_t>(s.y1) * w + s.x1;
      for (int c = 0; c < p.channels(); ++c) {
        const double* q = src + static_cast<std::size_t>(c) * plane;
        const double top = (1.0 - s.fx) * q[i00] + s.fx * q[i01];
        const double bot = (1.0 - s.fx) * q[i10] + s.fx * q[i11];
        dst[static_cast<std::size_t>(c) * plane + o] = (1.0 - s.fy) * top + s.fy * bot;
      }
    }
  return out;
}

FlowField warp_flow_grad(const Image& p, const FlowField& flow, const Image& upstream) {
  if (!upstream.same_shape(p) || flow.width() != p.width() || flow.height() != p.height())
    throw std::invalid_argument("warp_grad: dimension mismatch");
  const int w = p.width(), h = p.height();
  const std::size_t plane = p.plane_size();
  FlowField g(w, h, 2, DomainTag::LogLinear);
  const double* fx = flow.plane(0).data();
  const double* fy = flow.plane(1).data();
  const double* src = p.data().data();
  const double* up = upstream.data().data();
  double* gx_out = g.plane(0).data();
  double* gy_out = g.plane(1).data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t o = static_cast<std::size_t>(y) * w + x;
      const Sample s = sample_at(x + fx[o], y + fy[o], w, h);
      const std::size_t i00 = static_cast<std::size_t>(s.y0) * w + s.x0, i01 = static_cast<std::size_t>(s.y0) * w + s.x1;
      const std::size_t i10 = static_cast<std::size_t>(s.y1) * w + s.x0, i11 = static_cast<std::size_t>(s.y1) * w + s.x1;
      double gx = 0.0, gy = 0.0;
      for (int c = 0; c < p.channels(); ++c) {
        const double u = up[static_cast<std::size_t>(c) * plane + o];
        if (u == 0.0) continue;
        const double* q = src + static_cast<std::size_t>(c) * plane;
        const double p00 = q[i00], p01 = q[i01], p10 = q[i10], p11 = q[i11];
        gx += u * ((1.0 - s.fy) * (p01 - p00) + s.fy * (p11 - p10));
        if (!s.y_clamped) gy += u * ((1.0 - s.fx) * (p10 - p00) + s.fx * (p11 - p01));
      }
      gx_out[o] = gx;
      gy_out[o] = gy;
    }
  return g;
}

Image warp_with_jacobian(const Image& p, const FlowField& flow, Image& jac_x, Image& jac_y) {
  Image out;
  warp_with_jacobian(p, flow, out, jac_x, jac_y);
  return out;
}

void warp_with_jacobian(const Image& p, const FlowField& flow, Image& out, Image& jac_x, Image& jac_y) {
  if (flow.channels() != 2 || flow.width() != p.width() || flow.height() != p.height())
    throw std::invalid_argument("warp: flow/image dimension mismatch");
  const int w = p.width(), h = p.height();
  const std::size_t plane = p.plane_size();
  // every element is overwritten, so storage of the right shape is reused
  auto reuse = [&](Image& img, DomainTag tag) {
    if (!img.same_shape(p)) img = Image(w, h, p.channels(), tag);
    img.set_tag(tag);
  };
  reuse(out, p.tag());
  reuse(jac_x, DomainTag::LogLinear);
  reuse(jac_y, DomainTag::LogLinear);
  const int channels = p.channels();
  const double* fx = flow.plane(0).data();
  const double* fy = flow.plane(1).data();
  const double* src = p.data().data();
  double* dst = out.data().data();
  double* jx = jac_x.data().data();
  double* jy = jac_y.data().data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t o = static_cast<std::size_t>(y) * w + x;
      const Sample s = sample_at(x + fx[o], y + fy[o], w, h);
      const std::size_t i00 = static_cast<std::size_t>(s.y0) * w + s.x0, i01 = static_cast<std::size_t>(s.y0) * w + s.x1;
      const std::size_t i10 = static_cast<std::size_t>(s.y1) * w + s.x0, i11 = static_cast<std::size_t>(s.y1) * w + s.x1;
      for (int c = 0; c < channels; ++c) {
        const double* q = src + static_cast<std::size_t>(c) * plane;
        const double p00 = q[i00], p01 = q[i01], p10 = q[i10], p11 = q[i11];
        const double top = (1.0 - s.fx) * p00 + s.fx * p01;
        const double bot = (1.0 - s.fx) * p10 + s.fx * p11;
        const std::size_t k = static_cast<std::size_t>(c) * plane + o;
        dst[k] = (1.0 - s.fy) * top + s.fy * bot;
        jx[k] = (1.0 - s.fy) * (p01 - p00) + s.fy * (p11 - p10);
        jy[k] = s.y_clamped ? 0.0 : bot - top;
      }
    }
}

WarpGrid warp_grad(const Image& p, const WarpGrid& theta, const Image& upstream) {
  const FlowField flow = eval_spline(theta, p.height(), p.width());
  return eval_spline_adjoint(warp_flow_grad(p, flow, upstream));
}

double mean_endpoint_error(const FlowField& a, const FlowField& b) {
  if (!a.same_shape(b) || a.channels() != 2)
    throw std::invalid_argument("mean_endpoint_error: shape mismatch");
  double acc = 0.0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x)
      acc += std::hypot(a.at(0, y, x) - b.at(0, y, x), a.at(1, y, x) - b.at(1, y, x));
  return acc / static_cast<double>(a.plane_size());
}

FlowField invert_flow(const FlowField& f, int iterations) {
  FlowField g = f;
  for (double& v : g.data()) v = -v;
  for (int it = 0; it < iterations; ++it) {
    g = warp(f, g);
    for (double& v : g.data()) v = -v;
  }
  return g;
}

void write_warp_grid(const std::filesystem::path& path, const WarpGrid& grid) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  for (double v : grid.values()) {
    const float f = static_cast<float>(v);
    os.write(reinterpret_cast<const char*>(&f), sizeof f);
  }
  io::write_json(io::sidecar_path(path), {{"rows", WarpGrid::kRows},
                                          {"cols", WarpGrid::kCols},
                                          {"channels", 2},
                                          {"dtype", "f32le"},
                                          {"layout", "interleaved"}});
}

WarpGrid read_warp_grid(const std::filesystem::path& path) {
  const auto meta = io::read_json(io::sidecar_path(path));
  if (meta.value("rows", 0) != WarpGrid::kRows || meta.value("cols", 0) != WarpGrid::kCols ||
      meta.value("channels", 0) != 2)
    throw DataError("warp grid sidecar must describe an 8x32x2 lattice: " + path.string());
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing file: " + path.string());
  WarpGrid grid;
  for (double& v : grid.values()) {
    float f = 0.0f;
    if (!is.read(reinterpret_cast<char*>(&f), sizeof f))
      throw DataError("truncated warp grid: " + path.string());
    v = f;
  }
  return grid;
}

}  // namespace tli
