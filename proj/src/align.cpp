#include "tli/align.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>

#include "tli/rng.hpp"

namespace tli {

namespace {

// Pairwise L1 loss over maps and its gradient w.r.t. every map. With
// g_i = sum_j sgn(v_i - v_j), the loss equals sum_i v_i g_i.
double pairwise_l1(const std::vector<Image>& maps, std::vector<Image>* grads) {
  const std::size_t n = maps.size();
  const std::size_t pairs = n * (n - 1) / 2;
  const std::size_t size = maps.front().size();
  const double norm = 1.0 / (static_cast<double>(pairs) * static_cast<double>(size));
  if (!grads) {
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double* __restrict a = maps[i].data().data();
        const double* __restrict b = maps[j].data().data();
        double acc = 0.0;
        for (std::size_t k = 0; k < size; ++k) acc += std::abs(a[k] - b[k]);
        loss += acc;
      }
    return loss * norm;
  }
  std::vector<Image>& g = *grads;
  g.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!g[i].same_shape(maps[i])) g[i] = Image(maps[i].width(), maps[i].height(), maps[i].channels(), DomainTag::LogLinear);
    std::fill(g[i].data().begin(), g[i].data().end(), 0.0);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double* __restrict a = maps[i].data().data();
      const double* __restrict b = maps[j].data().data();
      double* __restrict gi = g[i].data().data();
      double* __restrict gj = g[j].data().data();
      for (std::size_t k = 0; k < size; ++k) {
        const double d = a[k] - b[k];
        const double sg = (d > 0.0 ? 1.0 : 0.0) - (d < 0.0 ? 1.0 : 0.0);
        gi[k] += sg;
        gj[k] -= sg;
      }
    }
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* v = maps[i].data().data();
    double* gi = g[i].data().data();
    for (std::size_t k = 0; k < size; ++k) {
      loss += v[k] * gi[k];
      gi[k] *= norm;
    }
  }
  return loss * norm;
}

constexpr int kMaxHalvings = 10;
constexpr double kGrowth = 1.5;

double blur_level(const AlignConfig& cfg, int step) {
  if (cfg.blur_sigma <= 0.0 || cfg.steps == 0) return 0.0;
  const int phase = std::min(3, 4 * step / std::max(1, cfg.steps));
  static constexpr double kFactor[4] = {1.0, 0.5, 0.25, 0.0};
  return cfg.blur_sigma * kFactor[phase];
}

}  // namespace

std::string to_string(AlignMode mode) { return mode == AlignMode::Rgb ? "rgb" : "reflectance"; }

AlignMode align_mode_from_string(const std::string& s) {
  if (s == "rgb") return AlignMode::Rgb;
  if (s == "reflectance") return AlignMode::Reflectance;
  throw std::invalid_argument("unknown alignment mode '" + s + "'");
}

void AlignConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  if (init_noise < 0.0) throw std::invalid_argument("init noise must be >= 0");
  if (refit_every < 1) throw std::invalid_argument("refit period must be >= 1");
}

Factorizer bicolor_factorizer(int iterations) {
  // each call continues from the previous call's fit
  auto previous = std::make_shared<std::optional<Decomposition>>();
  return [iterations, previous](std::span<const Image> frames) {
    FitConfig cfg;
    cfg.iterations = iterations;
    const Decomposition* warm = previous->has_value() && (*previous)->shadings.size() == frames.size() &&
                                        (*previous)->log_reflectance.same_shape(frames.front())
                                    ? &**previous
                                    : nullptr;
    *previous = bicolor_fit_log(frames, cfg, warm);
    std::vector<Image> out;
    for (const auto& s : (*previous)->shadings) out.push_back(s.full_log_shading());
    return out;
  };
}

AlignResult align_stack(const Stack& stack, const AlignConfig& cfg, const Factorizer& factorizer,
                        const GammaParams& gamma) {
  cfg.validate();
  if (stack.frames.size() < 2) throw std::invalid_argument("align_stack needs at least two frames");
  const std::size_t n = stack.frames.size();
  const int h = stack.frames.front().height(), w = stack.frames.front().width();
  const std::vector<Image> logs = log_frames(stack, gamma);
  const Factorizer factor = factorizer ? factorizer : bicolor_factorizer(cfg.factor_iterations);

  Rng rng(derive_seed(cfg.seed, 0xA119));
  std::vector<WarpGrid> theta(n);
  for (auto& t : theta)
    for (double& v : t.values()) v = cfg.init_noise * rng.normal();

  auto recenter = [&] {
    for (std::size_t k = 0; k < WarpGrid::kSize; ++k) {
      double mean = 0.0;
      for (const auto& t : theta) mean += t.values()[k];
      mean /= static_cast<double>(n);
      for (auto& t : theta) t.values()[k] -= mean;
    }
  };
  if (n > 1) recenter();

  std::vector<std::array<double, WarpGrid::kSize>> m1(n), m2(n);
  for (std::size_t i = 0; i < n; ++i) {
    m1[i].fill(0.0);
    m2[i].fill(0.0);
  }

  std::vector<Image> shading(n);  // reflectance mode only
  auto refit = [&] {
    std::vector<Image> aligned;
    for (std::size_t i = 0; i < n; ++i) aligned.push_back(warp(logs[i], eval_spline(theta[i], h, w)));
    shading = factor(aligned);
    for (auto& s : shading) s = gaussian_blur(s, cfg.shading_sigma);
  };

  auto residual_maps = [&](const std::vector<Image>& src, const std::vector<FlowField>& flows) {
    std::vector<Image> maps;
    for (std::size_t i = 0; i < n; ++i) {
      Image m = warp(src[i], flows[i]);
      if (cfg.mode == AlignMode::Reflectance)
        for (std::size_t k = 0; k < m.size(); ++k) m.data()[k] -= shading[i].data()[k];
      maps.push_back(std::move(m));
    }
    return maps;
  };
  auto current_flows = [&] {
    std::vector<FlowField> flows;
    for (std::size_t i = 0; i < n; ++i) flows.push_back(eval_spline(theta[i], h, w));
    return flows;
  };
  auto checked = [](double l) {
    if (!std::isfinite(l)) throw std::runtime_error("align_stack: non-finite loss");
    return l;
  };

  AlignResult result;
  if (cfg.mode == AlignMode::Reflectance) refit();
  result.initial_loss = checked(pairwise_l1(residual_maps(logs, current_flows()), nullptr));

  // Warped maps (and their Jacobians) at the current theta for the current
  // blur level and shading; refreshed when either changes.
  struct Evaluation {
    std::vector<Image> maps, jx, jy;
    double loss = 0.0;
  };
  std::vector<Image> sources;
  auto evaluate = [&](const std::vector<WarpGrid>& at, Evaluation& e) {
    e.maps.resize(n);
    e.jx.resize(n);
    e.jy.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      warp_with_jacobian(sources[i], eval_spline(at[i], h, w), e.maps[i], e.jx[i], e.jy[i]);
      if (cfg.mode == AlignMode::Reflectance)
        for (std::size_t k = 0; k < e.maps[i].size(); ++k) e.maps[i].data()[k] -= shading[i].data()[k];
    }
    e.loss = checked(pairwise_l1(e.maps, nullptr));
  };

  double sigma = -1.0;
  Evaluation here, trial;
  bool here_valid = false;
  std::vector<Image> upstream;
  std::vector<std::array<double, WarpGrid::kSize>> direction(n);
  double scale = 1.0;  // backtracking factor, carried across steps
  for (int step = 0; step < cfg.steps; ++step) {
    if (cfg.mode == AlignMode::Reflectance && step > 0 && step % cfg.refit_every == 0) {
      refit();
      here_valid = false;
    }
    const double s = blur_level(cfg, step);
    if (s != sigma) {
      sigma = s;
      sources.clear();
      for (const auto& l : logs) sources.push_back(sigma > 0.0 ? gaussian_blur(l, sigma) : l);
      here_valid = false;
    }
    if (!here_valid) evaluate(theta, here);
    here_valid = true;
    const double loss = pairwise_l1(here.maps, &upstream);
    result.loss_trace.push_back(loss);

    const int t = step + 1;
    const double bc1 = cfg.beta1 > 0.0 ? 1.0 - std::pow(cfg.beta1, t) : 1.0;
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < n; ++i) {
      FlowField gflow(w, h, 2, DomainTag::LogLinear);
      const std::size_t plane = gflow.plane_size();
      for (int c = 0; c < here.maps[i].channels(); ++c) {
        const std::size_t off = static_cast<std::size_t>(c) * plane;
        const double* u = upstream[i].data().data() + off;
        const double* ax = here.jx[i].data().data() + off;
        const double* ay = here.jy[i].data().data() + off;
        double* gx = gflow.plane(0).data();
        double* gy = gflow.plane(1).data();
        for (std::size_t k = 0; k < plane; ++k) {
          gx[k] += u[k] * ax[k];
          gy[k] += u[k] * ay[k];
        }
      }
      const WarpGrid g = eval_spline_adjoint(gflow);
      for (std::size_t k = 0; k < WarpGrid::kSize; ++k) {
        const double gk = g.values()[k];
        m1[i][k] = cfg.beta1 * m1[i][k] + (1.0 - cfg.beta1) * gk;
        m2[i][k] = cfg.beta2 * m2[i][k] + (1.0 - cfg.beta2) * gk * gk;
        direction[i][k] = cfg.learning_rate * (m1[i][k] / bc1) / (std::sqrt(m2[i][k] / bc2) + 1e-12);
      }
    }
    // backtrack on the Adam step so the optimized loss never increases
    const std::vector<WarpGrid> start = theta;
    for (int halving = 0; halving <= kMaxHalvings; ++halving, scale *= 0.5) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < WarpGrid::kSize; ++k)
          theta[i].values()[k] = start[i].values()[k] - scale * direction[i][k];
      recenter();
      evaluate(theta, trial);
      if (trial.loss <= loss) {
        std::swap(here, trial);
        scale = std::min(1.0, scale * kGrowth);
        break;
      }
      if (halving == kMaxHalvings) {
        theta = start;
        scale = std::min(1.0, scale * std::pow(2.0, kMaxHalvings) * kGrowth);
      }
    }
  }
  if (cfg.mode == AlignMode::Reflectance && cfg.steps > 0) refit();
  result.final_loss = checked(pairwise_l1(residual_maps(logs, current_flows()), nullptr));

  result.warps = theta;
  result.aligned.stack_id = stack.stack_id;
  result.aligned.records = stack.records;
  for (std::size_t i = 0; i < n; ++i) {
    Image f = warp(stack.frames[i], eval_spline(theta[i], h, w));
    for (double& v : f.data()) v = std::clamp(v, 0.0, 1.0);
    result.aligned.frames.push_back(std::move(f));
  }
  result.aligned.warps = theta;
  return result;
}

StackVariance stack_variance(const Stack& stack) {
  if (stack.frames.size() < 2) throw std::invalid_argument("stack_variance needs at least two frames");
  const auto& first = stack.frames.front();
  StackVariance out;
  out.per_pixel = Image(first.width(), first.height(), first.channels(), DomainTag::LogLinear);
  const double n = static_cast<double>(stack.frames.size());
  for (std::size_t k = 0; k < first.size(); ++k) {
    double mean = 0.0;
    for (const auto& f : stack.frames) mean += f.data()[k];
    mean /= n;
    double ss = 0.0;
    for (const auto& f : stack.frames) ss += (f.data()[k] - mean) * (f.data()[k] - mean);
    out.per_pixel.data()[k] = ss / (n - 1.0);
    out.mean += out.per_pixel.data()[k];
  }
  out.mean /= static_cast<double>(first.size());
  return out;
}

Image stack_average(const Stack& stack) {
  Image avg = stack.frames.front();
  for (std::size_t i = 1; i < stack.frames.size(); ++i)
    for (std::size_t k = 0; k < avg.size(); ++k) avg.data()[k] += stack.frames[i].data()[k];
  for (double& v : avg.data()) v /= static_cast<double>(stack.frames.size());
  return avg;
}

double alignment_endpoint_error(const std::vector<WarpGrid>& recovered,
                                const std::vector<WarpGrid>& gt_perturbations, int height, int width) {
  if (recovered.size() != gt_perturbations.size() || recovered.empty())
    throw std::invalid_argument("alignment_endpoint_error: warp counts differ");
  const std::size_t n = recovered.size();
  std::vector<FlowField> rec, truth;
  for (std::size_t i = 0; i < n; ++i) {
    rec.push_back(eval_spline(recovered[i], height, width));
    truth.push_back(invert_flow(eval_spline(gt_perturbations[i], height, width)));
  }
  auto center = [n](std::vector<FlowField>& flows) {
    for (std::size_t k = 0; k < flows.front().size(); ++k) {
      double mean = 0.0;
      for (const auto& f : flows) mean += f.data()[k];
      mean /= static_cast<double>(n);
      for (auto& f : flows) f.data()[k] -= mean;
    }
  };
  center(rec);
  center(truth);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += mean_endpoint_error(rec[i], truth[i]);
  return acc / static_cast<double>(n);
}

}  // namespace tli
