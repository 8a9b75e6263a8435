#include "tli/intrinsics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace tli {

namespace {

double sgn(double v) { return (v > 0.0 ? 1.0 : 0.0) - (v < 0.0 ? 1.0 : 0.0); }

void check_same_shapes(std::span<const Image> maps, const char* what) {
  for (const auto& m : maps)
    if (!m.same_shape(maps.front())) throw std::invalid_argument(std::string(what) + ": frame shapes differ");
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

constexpr double kMaskInitScale = 0.25;  // log-intensity units

// Flat parameter vector of a bi-color fit.
struct Layout {
  std::size_t frames = 0;
  std::size_t hw = 0;

  std::size_t r(int c) const { return static_cast<std::size_t>(c) * hw; }
  std::size_t frame_base(std::size_t i) const { return 3 * hw + i * (2 * hw + 6); }
  std::size_t l(std::size_t i) const { return frame_base(i); }
  std::size_t m(std::size_t i) const { return frame_base(i) + hw; }
  std::size_t c1(std::size_t i) const { return frame_base(i) + 2 * hw; }
  std::size_t c2(std::size_t i) const { return frame_base(i) + 2 * hw + 3; }
  std::size_t size() const { return frame_base(frames); }
};

struct Objective {
  std::span<const Image> frames;
  const FitConfig& cfg;
  Layout layout;
  // scratch buffers reused across evaluations
  mutable std::vector<double> mask, e, bsum, rc_sign;

  // Returns the loss terms; fills grad when non-null.
  FitReport operator()(const std::vector<double>& x, std::vector<double>* grad) const {
    const std::size_t n = layout.frames, hw = layout.hw, plane3 = 3 * hw;
    const double inv_recon = 1.0 / (static_cast<double>(n) * 3.0 * static_cast<double>(hw));
    const std::size_t pairs = n * (n - 1) / 2;
    const double inv_rc = pairs ? 1.0 / (static_cast<double>(pairs) * 3.0 * static_cast<double>(hw)) : 0.0;
    const double inv_wl = 1.0 / (3.0 * static_cast<double>(hw));
    const bool mono = cfg.mono_color;

    mask.assign(n * hw, 0.0);
    e.resize(n * plane3);
    bsum.assign(plane3, 0.0);
    rc_sign.assign(n * plane3, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* lg = &x[layout.m(i)];
      const double* li = &x[layout.l(i)];
      const double* c1 = &x[layout.c1(i)];
      const double* c2 = &x[layout.c2(i)];
      double* mk = &mask[i * hw];
      if (!mono)
        for (std::size_t p = 0; p < hw; ++p) mk[p] = sigmoid(lg[p]);
      for (int c = 0; c < 3; ++c) {
        const double* d = frames[i].plane(c).data();
        const double* r = &x[layout.r(c)];
        double* bs = &bsum[static_cast<std::size_t>(c) * hw];
        double* ei = &e[i * plane3 + static_cast<std::size_t>(c) * hw];
        const double a1 = mono ? 0.0 : c1[c], a2 = mono ? 0.0 : c2[c];
        for (std::size_t p = 0; p < hw; ++p) {
          const double b = a2 + (a1 - a2) * mk[p];
          bs[p] += b;
          ei[p] = d[p] - r[p] - li[p] - b;
        }
      }
    }

    FitReport rep;
    for (double v : e) rep.recon += std::abs(v);
    rep.recon *= inv_recon;
    // rc term via sign sums: sum_{i<j} |e_i - e_j| = sum_i e_i * s_i
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double* __restrict ea = &e[i * plane3];
        const double* __restrict eb = &e[j * plane3];
        double* __restrict sa = &rc_sign[i * plane3];
        double* __restrict sb = &rc_sign[j * plane3];
        for (std::size_t k = 0; k < plane3; ++k) {
          const double sg = sgn(ea[k] - eb[k]);
          sa[k] += sg;
          sb[k] -= sg;
        }
      }
    for (std::size_t k = 0; k < e.size(); ++k) rep.rc += e[k] * rc_sign[k];
    rep.rc *= inv_rc;
    for (double v : bsum) rep.wl += std::abs(v);
    rep.wl *= inv_wl;
    rep.objective = cfg.weight_recon * rep.recon + cfg.weight_rc * rep.rc + cfg.weight_wl * rep.wl;
    if (!std::isfinite(rep.objective)) throw std::runtime_error("bicolor_fit: non-finite objective");
    if (!grad) return rep;

    std::vector<double>& g = *grad;
    g.assign(layout.size(), 0.0);
    const double k_recon = cfg.weight_recon * inv_recon, k_rc = cfg.weight_rc * inv_rc;
    const double k_wl = cfg.weight_wl * inv_wl;
    for (std::size_t i = 0; i < n; ++i) {
      const double* c1 = &x[layout.c1(i)];
      const double* c2 = &x[layout.c2(i)];
      const double* mk = &mask[i * hw];
      double* gl = &g[layout.l(i)];
      double* gm = &g[layout.m(i)];
      for (int c = 0; c < 3; ++c) {
        const std::size_t base = i * plane3 + static_cast<std::size_t>(c) * hw;
        const double* ei = &e[base];
        const double* si = &rc_sign[base];
        const double* bs = &bsum[static_cast<std::size_t>(c) * hw];
        double* gr = &g[layout.r(c)];
        const double dc = c1[c] - c2[c];
        double acc1 = 0.0, acc2 = 0.0;
        for (std::size_t p = 0; p < hw; ++p) {
          // d objective / d e, negated: e = D - R - L - B
          const double gs = -(k_recon * sgn(ei[p]) + k_rc * si[p]);
          gr[p] += gs;
          gl[p] += gs;
          if (mono) continue;
          const double gb = gs + k_wl * sgn(bs[p]);
          acc1 += gb * mk[p];
          acc2 += gb * (1.0 - mk[p]);
          gm[p] += gb * dc * mk[p] * (1.0 - mk[p]);
        }
        if (!mono) {
          g[layout.c1(i) + static_cast<std::size_t>(c)] += acc1;
          g[layout.c2(i) + static_cast<std::size_t>(c)] += acc2;
        }
      }
    }
    return rep;
  }
};

Decomposition unpack(const std::vector<double>& x, const Layout& layout, int width, int height, bool mono) {
  Decomposition d;
  d.log_reflectance = Image(width, height, 3, DomainTag::LogLinear);
  std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(3 * layout.hw), d.log_reflectance.data().begin());
  for (std::size_t i = 0; i < layout.frames; ++i) {
    BiColorShading s;
    s.log_intensity = Image(width, height, 1, DomainTag::LogLinear);
    s.mask = Image(width, height, 1, DomainTag::SrgbUnit);
    for (std::size_t p = 0; p < layout.hw; ++p) {
      s.log_intensity.data()[p] = x[layout.l(i) + p];
      s.mask.data()[p] = mono ? 0.0 : sigmoid(x[layout.m(i) + p]);
    }
    for (int c = 0; c < 3; ++c) {
      s.c1[c] = mono ? 0.0 : x[layout.c1(i) + static_cast<std::size_t>(c)];
      s.c2[c] = mono ? 0.0 : x[layout.c2(i) + static_cast<std::size_t>(c)];
    }
    d.shadings.push_back(std::move(s));
  }
  return d;
}

double logit(double m) {
  const double q = std::clamp(m, 1e-9, 1.0 - 1e-9);
  return std::log(q / (1.0 - q));
}

std::vector<double> pack(const Decomposition& d, const Layout& layout) {
  std::vector<double> x(layout.size(), 0.0);
  std::copy(d.log_reflectance.data().begin(), d.log_reflectance.data().end(), x.begin());
  for (std::size_t i = 0; i < layout.frames; ++i) {
    const auto& s = d.shadings[i];
    for (std::size_t p = 0; p < layout.hw; ++p) {
      x[layout.l(i) + p] = s.log_intensity.data()[p];
      x[layout.m(i) + p] = logit(s.mask.data()[p]);
    }
    for (int c = 0; c < 3; ++c) {
      x[layout.c1(i) + static_cast<std::size_t>(c)] = s.c1[c];
      x[layout.c2(i) + static_cast<std::size_t>(c)] = s.c2[c];
    }
  }
  return x;
}

}  // namespace

double loss_rc(std::span<const Image> log_reflectances) {
  if (log_reflectances.size() < 2) throw std::invalid_argument("loss_rc needs at least two frames");
  check_same_shapes(log_reflectances, "loss_rc");
  double acc = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < log_reflectances.size(); ++i)
    for (std::size_t j = i + 1; j < log_reflectances.size(); ++j, ++pairs)
      for (std::size_t k = 0; k < log_reflectances[i].size(); ++k)
        acc += std::abs(log_reflectances[i].data()[k] - log_reflectances[j].data()[k]);
  return acc / (static_cast<double>(pairs) * static_cast<double>(log_reflectances.front().size()));
}

double loss_wl(std::span<const Image> bicolor_fields) {
  if (bicolor_fields.empty()) throw std::invalid_argument("loss_wl needs at least one frame");
  check_same_shapes(bicolor_fields, "loss_wl");
  std::vector<double> sum(bicolor_fields.front().size(), 0.0);
  for (const auto& b : bicolor_fields)
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += b.data()[k];
  double acc = 0.0;
  for (double v : sum) acc += std::abs(v);
  return acc / static_cast<double>(sum.size());
}

std::vector<Image> log_frames(const Stack& stack, const GammaParams& gamma) {
  std::vector<Image> out;
  out.reserve(stack.frames.size());
  for (const auto& f : stack.frames) out.push_back(log_encode(gamma_decode(f, gamma)));
  return out;
}

Image temporal_median(std::span<const Image> images) {
  if (images.empty()) throw std::invalid_argument("temporal_median of no images");
  check_same_shapes(images, "temporal_median");
  Image out = images.front();
  std::vector<double> vals(images.size());
  const std::size_t n = images.size();
  for (std::size_t k = 0; k < out.size(); ++k) {
    for (std::size_t i = 0; i < n; ++i) vals[i] = images[i].data()[k];
    std::sort(vals.begin(), vals.end());
    out.data()[k] = n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
  }
  return out;
}

Image temporal_quantile(std::span<const Image> images, double q) {
  Image out = images.front();
  std::vector<double> vals(images.size());
  const double pos = q * static_cast<double>(images.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, images.size() - 1);
  const double t = pos - static_cast<double>(lo);
  for (std::size_t k = 0; k < out.size(); ++k) {
    for (std::size_t i = 0; i < images.size(); ++i) vals[i] = images[i].data()[k];
    std::sort(vals.begin(), vals.end());
    out.data()[k] = (1.0 - t) * vals[lo] + t * vals[hi];
  }
  return out;
}

// Upper temporal quantile of the frames after removing each frame's
// per-channel median offset from the running estimate. Shadows only darken,
// so where most frames are sunlit this reads the reflectance up to a constant.
Image level_corrected_reflectance(std::span<const Image> frames) {
  constexpr double kQuantile = 0.75;
  Image r = temporal_median(frames);
  std::vector<Image> shifted(frames.begin(), frames.end());
  std::vector<double> diff(r.plane_size());
  for (int round = 0; round < 2; ++round) {
    for (std::size_t i = 0; i < frames.size(); ++i)
      for (int c = 0; c < r.channels(); ++c) {
        const auto f = frames[i].plane(c);
        const auto rc = r.plane(c);
        for (std::size_t p = 0; p < diff.size(); ++p) diff[p] = f[p] - rc[p];
        auto mid = diff.begin() + static_cast<std::ptrdiff_t>(diff.size() / 2);
        std::nth_element(diff.begin(), mid, diff.end());
        const double level = *mid;
        auto out = shifted[i].plane(c);
        for (std::size_t p = 0; p < diff.size(); ++p) out[p] = f[p] - level;
      }
    r = temporal_quantile(shifted, kQuantile);
  }
  return r;
}

Decomposition weiss_mle(const Stack& stack, const GammaParams& gamma) {
  if (stack.frames.empty()) throw std::invalid_argument("weiss_mle needs at least one frame");
  const auto logs = log_frames(stack, gamma);
  const int w = logs.front().width(), h = logs.front().height();
  Decomposition d;
  d.log_reflectance = Image(w, h, 3, DomainTag::LogLinear);
  for (int c = 0; c < 3; ++c) {
    std::vector<Image> gxs, gys;
    for (const auto& l : logs) {
      auto [gx, gy] = forward_gradients(l.channel(c));
      gxs.push_back(std::move(gx));
      gys.push_back(std::move(gy));
    }
    const Image u = poisson_reconstruct(temporal_median(gxs), temporal_median(gys));
    std::copy(u.data().begin(), u.data().end(), d.log_reflectance.plane(c).begin());
  }
  for (const auto& l : logs) {
    BiColorShading s;
    s.log_intensity = Image(w, h, 1, DomainTag::LogLinear);
    s.mask = Image(w, h, 1, DomainTag::SrgbUnit);
    for (std::size_t p = 0; p < l.plane_size(); ++p) {
      double acc = 0.0;
      for (int c = 0; c < 3; ++c) acc += l.plane(c)[p] - d.log_reflectance.plane(c)[p];
      s.log_intensity.data()[p] = acc / 3.0;
    }
    d.shadings.push_back(std::move(s));
  }
  if (logs.size() >= 2) d.report = evaluate_objective(logs, d, FitConfig{});
  return d;
}

FitReport evaluate_objective(std::span<const Image> log_frames, const Decomposition& d, const FitConfig& cfg) {
  Layout layout{log_frames.size(), log_frames.front().plane_size()};
  FitConfig c = cfg;
  Objective obj{log_frames, c, layout, {}, {}, {}, {}};
  return obj(pack(d, layout), nullptr);
}

Decomposition bicolor_fit_log(std::span<const Image> frames, const FitConfig& cfg, const Decomposition* warm_start) {
  if (frames.size() < 2) throw std::invalid_argument("bicolor_fit needs at least two frames");
  check_same_shapes(frames, "bicolor_fit");
  if (cfg.weight_recon < 0 || cfg.weight_rc < 0 || cfg.weight_wl < 0)
    throw std::invalid_argument("fit weights must be non-negative");
  const int w = frames.front().width(), h = frames.front().height();
  const Layout layout{frames.size(), frames.front().plane_size()};

  // initialization: level-corrected upper-quantile reflectance, channel-mean residual intensity,
  // neutral colors; the mask starts as a soft threshold of the residual
  // intensity around its median (brighter than usual reads as sunlit), which
  // breaks the c1/c2 symmetry a constant mask would keep forever
  Decomposition init;
  init.log_reflectance = level_corrected_reflectance(frames);
  init.log_reflectance.set_tag(DomainTag::LogLinear);
  for (const auto& f : frames) {
    BiColorShading s;
    s.log_intensity = Image(w, h, 1, DomainTag::LogLinear);
    s.mask = Image(w, h, 1, DomainTag::SrgbUnit, 0.5);
    for (std::size_t p = 0; p < layout.hw; ++p) {
      double acc = 0.0;
      for (int c = 0; c < 3; ++c) acc += f.plane(c)[p] - init.log_reflectance.plane(c)[p];
      s.log_intensity.data()[p] = acc / 3.0;
    }
    std::vector<double> sorted(s.log_intensity.data().begin(), s.log_intensity.data().end());
    auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2);
    std::nth_element(sorted.begin(), mid, sorted.end());
    for (std::size_t p = 0; p < layout.hw; ++p)
      s.mask.data()[p] = cfg.mono_color ? 0.0 : sigmoid((s.log_intensity.data()[p] - *mid) / kMaskInitScale);
    init.shadings.push_back(std::move(s));
  }

  if (warm_start) {
    if (warm_start->shadings.size() != frames.size() || !warm_start->log_reflectance.same_shape(frames.front()))
      throw std::invalid_argument("bicolor_fit: warm start does not match the frames");
    init = *warm_start;
  }
  std::vector<double> x = pack(init, layout);
  const Objective objective{frames, cfg, layout, {}, {}, {}, {}};
  std::vector<double> grad;
  FitReport current = objective(x, &grad);
  std::vector<double> trace{current.objective};

  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  std::vector<double> m1(x.size(), 0.0), m2(x.size(), 0.0), candidate(x.size()), direction(x.size()), cand_grad;
  double step_scale = 1.0;
  for (int it = 1; it <= cfg.iterations; ++it) {
    const double bc1 = 1.0 - std::pow(kBeta1, it), bc2 = 1.0 - std::pow(kBeta2, it);
    for (std::size_t k = 0; k < x.size(); ++k) {
      m1[k] = kBeta1 * m1[k] + (1.0 - kBeta1) * grad[k];
      m2[k] = kBeta2 * m2[k] + (1.0 - kBeta2) * grad[k] * grad[k];
      direction[k] = (m1[k] / bc1) / (std::sqrt(m2[k] / bc2) + kEps);
    }
    bool accepted = false;
    for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
      const double lr = cfg.learning_rate * step_scale;
      for (std::size_t k = 0; k < x.size(); ++k)
        candidate[k] = x[k] - lr * direction[k];
      const FitReport next = objective(candidate, &cand_grad);
      if (next.objective <= current.objective) {
        x.swap(candidate);
        grad.swap(cand_grad);
        current = next;
        accepted = true;
        step_scale = std::min(1.0, step_scale * 1.25);
      } else {
        step_scale *= 0.5;
      }
    }
    trace.push_back(current.objective);
  }

  Decomposition out = unpack(x, layout, w, h, cfg.mono_color);
  out.report = current;
  out.report.iterations = cfg.iterations;
  out.report.trace = std::move(trace);
  return out;
}

Decomposition bicolor_fit(const Stack& stack, const FitConfig& cfg, const GammaParams& gamma) {
  if (stack.frames.size() < 2) throw std::invalid_argument("bicolor_fit needs at least two frames");
  const auto logs = log_frames(stack, gamma);
  return bicolor_fit_log(logs, cfg);
}

Panorama reconstruct_with(const Image& log_reflectance, const BiColorShading& shading, const GammaParams& gamma) {
  return gamma_encode(recompose(log_reflectance, shading.full_log_shading()), gamma);
}

Panorama reconstruct_frame(const Decomposition& d, std::size_t frame, const GammaParams& gamma) {
  return reconstruct_with(d.log_reflectance, d.shadings.at(frame), gamma);
}

double reconstruction_mse(const Stack& stack, const Decomposition& d, const GammaParams& gamma) {
  double acc = 0.0;
  for (std::size_t i = 0; i < stack.frames.size(); ++i) acc += mse(reconstruct_frame(d, i, gamma), stack.frames[i]);
  return acc / static_cast<double>(stack.frames.size());
}

PixelNnResult pixel_nn_baseline(const Stack& stack, std::size_t target_index) {
  if (stack.frames.size() < 2) throw std::invalid_argument("pixel_nn_baseline needs at least two frames");
  if (target_index >= stack.frames.size()) throw std::out_of_range("pixel_nn_baseline: target out of range");
  PixelNnResult best{std::numeric_limits<double>::infinity(), 0};
  for (std::size_t j = 0; j < stack.frames.size(); ++j) {
    if (j == target_index) continue;
    const double e = mse(stack.frames[target_index], stack.frames[j]);
    if (e < best.mse) best = {e, j};
  }
  return best;
}

}  // namespace tli
