#include "tli/eval.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "tli/azimuth.hpp"

namespace tli::eval {

namespace {

using nlohmann::json;

Stack substack(const Stack& s, std::size_t begin, std::size_t count) {
  Stack out;
  out.stack_id = s.stack_id;
  for (std::size_t i = begin; i < begin + count; ++i) {
    out.frames.push_back(s.frames[i]);
    if (i < s.records.size()) out.records.push_back(s.records[i]);
  }
  return out;
}

Decomposition fit_with(const Stack& s, Method m, const FitConfig& fit, const GammaParams& gamma) {
  switch (m) {
    case Method::Weiss: return weiss_mle(s, gamma);
    case Method::Bicolor: {
      FitConfig c = fit;
      c.mono_color = false;
      return bicolor_fit(s, c, gamma);
    }
    case Method::Monocolor: {
      FitConfig c = fit;
      c.mono_color = true;
      return bicolor_fit(s, c, gamma);
    }
    case Method::PixelNn: break;
  }
  throw std::invalid_argument("method has no factorization");
}

double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

void finite_or_throw(double v, const char* what) {
  if (!std::isfinite(v)) throw std::runtime_error(std::string(what) + ": non-finite value");
}

double nearest_mse(const Panorama& target, const std::vector<Panorama>& pool, std::size_t skip = SIZE_MAX) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (i != skip) best = std::min(best, mse(pool[i], target));
  return best;
}

// Pixels usable for fitting shading: surfaces, not clipped in the frame.
Image fit_weight(const synth::SynthScene& scene, const Panorama& frame) {
  const Image sky = synth::sky_mask(scene, frame.width(), frame.height());
  Image w(frame.width(), frame.height(), 1, DomainTag::SrgbUnit);
  for (std::size_t p = 0; p < w.size(); ++p) {
    bool ok = sky.data()[p] < 0.5;
    for (int c = 0; c < frame.channels() && ok; ++c) {
      const double v = frame.plane(c)[p];
      ok = v < 0.999 && v > kDefaultLogFloor;
    }
    w.data()[p] = ok ? 1.0 : 0.0;
  }
  return w;
}

Image minus(const Image& a, const Image& b) {
  Image out = a;
  out.set_tag(DomainTag::LogLinear);
  for (std::size_t k = 0; k < out.size(); ++k) out.data()[k] -= b.data()[k];
  return out;
}

// Log shading of every frame of one grid row against the row's fitted
// reflectance.
struct RowShading {
  std::vector<Image> log_shading;
  std::vector<Image> weight;
};

RowShading fit_row(const synth::SpaceTimeGrid& grid, std::size_t row, const FitConfig& fit,
                   const GammaParams& gamma) {
  Stack s;
  s.stack_id = "row" + std::to_string(row);
  for (const auto& cell : grid.cells[row]) s.frames.push_back(cell.pano);
  const Decomposition d = bicolor_fit(s, fit, gamma);
  const auto logs = log_frames(s, gamma);
  RowShading out;
  for (std::size_t c = 0; c < logs.size(); ++c) {
    out.log_shading.push_back(minus(logs[c], d.log_reflectance));
    out.weight.push_back(fit_weight(grid.scenes[row], s.frames[c]));
  }
  return out;
}

constexpr int kJointRounds = 6;

// A row's shadings share the reflectance error of its factorization. Fits
// each time's illumination jointly with a per-pixel offset common to all
// times, alternating between the two.
std::vector<IlluminationFit> joint_fit(const RowShading& row, const std::vector<Image>& masks,
                                       std::vector<IlluminationFit> fits, int rounds) {
  const std::size_t n = row.log_shading.size();
  for (int it = 0; it < rounds; ++it) {
    const Image& first = row.log_shading.front();
    Image offset(first.width(), first.height(), 3, DomainTag::LogLinear);
    for (std::size_t c = 0; c < n; ++c) {
      const Image model = illumination_shading(fits[c], masks[c]);
      for (std::size_t k = 0; k < offset.size(); ++k)
        offset.data()[k] += (row.log_shading[c].data()[k] - model.data()[k]) / static_cast<double>(n);
    }
    for (std::size_t c = 0; c < n; ++c)
      fits[c] = fit_illumination(minus(row.log_shading[c], offset), masks[c], row.weight[c], &fits[c]);
  }
  return fits;
}

// The brightness estimator falls back to a flat distribution when no sun is
// visible.
bool sun_visible(const Panorama& p) {
  const AzimuthDistribution d = estimate_azimuth(p);
  return *std::max_element(d.bins.begin(), d.bins.end()) > 3.0 / kAzimuthBins;
}

// Azimuth whose oracle shadow mask best explains a log shading: bin centers,
// then golden-section refinement inside the best bin's neighbourhood.
double shadow_scan_azimuth(const synth::SynthScene& scene, const Image& log_shading, const Image& weight) {
  const int w = log_shading.width(), h = log_shading.height();
  auto residual = [&](double phi) {
    return fit_illumination(log_shading, synth::shadow_mask(scene, phi, w, h), weight).residual;
  };
  double best_phi = 0.0, best = std::numeric_limits<double>::infinity();
  for (int b = 0; b < kAzimuthBins; ++b) {
    const double phi = AzimuthDistribution::bin_center(b);
    const double r = residual(phi);
    if (r < best) {
      best = r;
      best_phi = phi;
    }
  }
  double lo = best_phi - AzimuthDistribution::bin_width(), hi = best_phi + AzimuthDistribution::bin_width();
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double t1 = hi - g * (hi - lo), t2 = lo + g * (hi - lo);
  double r1 = residual(t1), r2 = residual(t2);
  for (int it = 0; it < 12; ++it) {
    if (r1 < r2) {
      hi = t2;
      t2 = t1;
      r2 = r1;
      t1 = hi - g * (hi - lo);
      r1 = residual(t1);
    } else {
      lo = t1;
      t1 = t2;
      r1 = r2;
      t2 = lo + g * (hi - lo);
      r2 = residual(t2);
    }
  }
  const double refined = r1 < r2 ? t1 : t2;
  return wrap_angle(std::min(r1, r2) < best ? refined : best_phi);
}

struct StackIllumination {
  std::vector<IlluminationFit> fits;
  std::vector<Image> masks;
};

StackIllumination stack_illumination(const synth::SynthScene& scene, const Stack& stack, const Decomposition& fit,
                                     const std::vector<double>& azimuths, const GammaParams& gamma) {
  const auto logs = log_frames(stack, gamma);
  RowShading rs;
  StackIllumination out;
  std::vector<IlluminationFit> start;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    const Panorama& f = stack.frames[i];
    rs.log_shading.push_back(minus(logs[i], fit.log_reflectance));
    rs.weight.push_back(fit_weight(scene, f));
    out.masks.push_back(synth::shadow_mask(scene, azimuths[i], f.width(), f.height()));
    start.push_back(fit_illumination(rs.log_shading.back(), out.masks.back(), rs.weight.back()));
  }
  out.fits = joint_fit(rs, out.masks, std::move(start), kJointRounds);
  return out;
}

// rows[d] must be set for every d != row
CompletionResult complete_cell(const synth::SpaceTimeGrid& grid, std::size_t row, std::size_t col,
                               const std::vector<RowShading>& rows, const GammaParams& gamma) {
  const std::size_t n_rows = grid.cells.size(), n_cols = grid.cells.front().size();
  const Panorama& truth = grid.cells[row][col].pano;
  const int w = truth.width(), h = truth.height();
  CompletionResult out;
  for (std::size_t d = 0; d < n_rows; ++d)
    if (d != row) out.donor_rows.push_back(d);

  // Per time: the azimuth whose shadow geometry best explains the donors'
  // shadings, and each donor's illumination fit under it. Candidates are
  // the point estimates of every visible frame of that time.
  std::vector<double> azimuth(n_cols);
  std::vector<std::vector<IlluminationFit>> fits(n_cols);  // [time][donor]
  for (std::size_t c = 0; c < n_cols; ++c) {
    std::vector<double> candidates;
    for (std::size_t r = 0; r < n_rows; ++r)
      if (r != row || c != col) candidates.push_back(estimate_sun_azimuth(grid.cells[r][c].pano));
    double best = std::numeric_limits<double>::infinity();
    for (double phi : candidates) {
      std::vector<IlluminationFit> f;
      double residual = 0.0;
      for (std::size_t d : out.donor_rows) {
        f.push_back(fit_illumination(rows[d].log_shading[c], synth::shadow_mask(grid.scenes[d], phi, w, h),
                                     rows[d].weight[c]));
        residual += f.back().residual;
      }
      if (residual < best) {
        best = residual;
        azimuth[c] = phi;
        fits[c] = std::move(f);
      }
    }
  }

  for (std::size_t d = 0; d < out.donor_rows.size(); ++d) {
    const std::size_t donor = out.donor_rows[d];
    std::vector<Image> masks;
    std::vector<IlluminationFit> start;
    for (std::size_t c = 0; c < n_cols; ++c) {
      masks.push_back(synth::shadow_mask(grid.scenes[donor], azimuth[c], w, h));
      start.push_back(fits[c][d]);
    }
    const auto refined = joint_fit(rows[donor], masks, start, kJointRounds);
    for (std::size_t c = 0; c < n_cols; ++c) fits[c][d] = refined[c];
  }

  // Within one donor, fit(col) - fit(j) is free of that scene's gauge, so
  // log frame j + model(col) - model(j) predicts the withheld frame.
  const auto logs = [&] {
    Stack s;
    for (const auto& cell : grid.cells[row]) s.frames.push_back(cell.pano);
    return log_frames(s, gamma);
  }();
  const Image target_mask = synth::shadow_mask(grid.scenes[row], azimuth[col], w, h);
  Image prediction(w, h, 3, DomainTag::LogLinear);
  const double share = 1.0 / static_cast<double>(out.donor_rows.size() * (n_cols - 1));
  for (std::size_t j = 0; j < n_cols; ++j) {
    if (j == col) continue;
    const Image mask = synth::shadow_mask(grid.scenes[row], azimuth[j], w, h);
    for (std::size_t d = 0; d < out.donor_rows.size(); ++d) {
      const Image there = illumination_shading(fits[col][d], target_mask);
      const Image here = illumination_shading(fits[j][d], mask);
      for (std::size_t k = 0; k < prediction.size(); ++k)
        prediction.data()[k] += share * (logs[j].data()[k] + there.data()[k] - here.data()[k]);
    }
  }
  const Image zero(w, h, 3, DomainTag::LogLinear);
  out.transfer_mse = mse(gamma_encode(recompose(prediction, zero), gamma), truth);
  out.estimated_azimuth = azimuth[col];
  out.true_azimuth = grid.illuminations[col].sun_azimuth;
  std::vector<Panorama> pool;
  for (std::size_t c = 0; c < n_cols; ++c)
    if (c != col) pool.push_back(grid.cells[row][c].pano);
  out.pixel_nn_mse = nearest_mse(truth, pool);
  finite_or_throw(out.transfer_mse, "spacetime_completion");
  return out;
}

void check_grid(const synth::SpaceTimeGrid& grid, std::size_t row, std::size_t col) {
  if (grid.cells.size() < 2 || grid.cells.front().size() < 2) throw std::invalid_argument("grid must be at least 2x2");
  if (row >= grid.cells.size() || col >= grid.cells.front().size())
    throw std::out_of_range("withheld cell outside the grid");
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::Weiss: return "weiss";
    case Method::Bicolor: return "bicolor";
    case Method::Monocolor: return "monocolor";
    case Method::PixelNn: return "pixel_nn";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  for (Method m : {Method::Weiss, Method::Bicolor, Method::Monocolor, Method::PixelNn})
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown method '" + s + "'");
}

ConsistencyResult scene_consistency(const Stack& stack, Method method, const FitConfig& fit,
                                    const GammaParams& gamma) {
  if (stack.frames.size() != 8) throw std::invalid_argument("scene consistency needs exactly 8 frames");
  const Stack a = substack(stack, 0, 4), b = substack(stack, 4, 4);
  ConsistencyResult r;
  if (method == Method::PixelNn) {
    for (std::size_t i = 0; i < 4; ++i) {
      r.swap_mse += nearest_mse(a.frames[i], b.frames) + nearest_mse(b.frames[i], a.frames);
      r.own_mse += nearest_mse(a.frames[i], a.frames, i) + nearest_mse(b.frames[i], b.frames, i);
    }
  } else {
    const Decomposition da = fit_with(a, method, fit, gamma), db = fit_with(b, method, fit, gamma);
    for (std::size_t i = 0; i < 4; ++i) {
      r.swap_mse += mse(reconstruct_with(db.log_reflectance, da.shadings[i], gamma), a.frames[i]);
      r.swap_mse += mse(reconstruct_with(da.log_reflectance, db.shadings[i], gamma), b.frames[i]);
      r.own_mse += mse(reconstruct_frame(da, i, gamma), a.frames[i]);
      r.own_mse += mse(reconstruct_frame(db, i, gamma), b.frames[i]);
    }
  }
  r.swap_mse /= 8.0;
  r.own_mse /= 8.0;
  return r;
}

IlluminationFit fit_illumination(const Image& log_shading, const Image& mask, const Image& weight,
                                 const IlluminationFit* warm_start) {
  if (log_shading.channels() != 3 || mask.channels() != 1 || weight.channels() != 1 ||
      mask.plane_size() != log_shading.plane_size() || weight.plane_size() != mask.plane_size())
    throw std::invalid_argument("fit_illumination: shape mismatch");
  const std::size_t n = mask.plane_size();
  const double* m = mask.data().data();
  const double* w = weight.data().data();
  double sw = 0.0, sm = 0.0, smm = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    sw += w[p];
    sm += w[p] * m[p];
    smm += w[p] * m[p] * m[p];
  }
  if (sw <= 0.0) throw std::invalid_argument("fit_illumination: no usable pixels");
  const double det = sw * smm - sm * sm;

  // for fixed rho the model is linear in (a_c, b_c)
  auto solve = [&](double rho, IlluminationFit& f) {
    double sse = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double* s = log_shading.plane(c).data();
      double sy = 0.0, sym = 0.0, syy = 0.0;
      for (std::size_t p = 0; p < n; ++p) {
        if (w[p] == 0.0) continue;
        const double y = s[p] - std::log1p(rho * m[p]);
        sy += w[p] * y;
        sym += w[p] * y * m[p];
        syy += w[p] * y * y;
      }
      double a = sy / sw, b = 0.0;
      if (std::abs(det) > 1e-12 * sw * sw) {
        a = (smm * sy - sm * sym) / det;
        b = (sw * sym - sm * sy) / det;
      }
      f.a[static_cast<std::size_t>(c)] = a;
      f.b[static_cast<std::size_t>(c)] = b;
      // sum w (y - a - b m)^2 expanded
      sse += syy - 2.0 * a * sy - 2.0 * b * sym + a * a * sw + 2.0 * a * b * sm + b * b * smm;
    }
    f.rho = rho;
    f.residual = std::max(0.0, sse) / (3.0 * sw);
    return f.residual;
  };

  // coarse scan of log(rho), then golden-section refinement
  IlluminationFit best;
  solve(0.0, best);
  double best_t = -std::numeric_limits<double>::infinity();
  double t0 = -4.0;
  int steps = 72;
  if (warm_start && warm_start->rho > 0.0) {
    t0 = std::log(warm_start->rho) - 0.5;
    steps = 8;
  }
  for (int k = 0; k <= steps; ++k) {
    const double t = t0 + 0.125 * k;
    IlluminationFit f;
    if (solve(std::exp(t), f) < best.residual) {
      best = f;
      best_t = t;
    }
  }
  if (std::isfinite(best_t)) {
    double lo = best_t - 0.125, hi = best_t + 0.125;
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int it = 0; it < 30; ++it) {
      const double t1 = hi - g * (hi - lo), t2 = lo + g * (hi - lo);
      IlluminationFit f1, f2;
      if (solve(std::exp(t1), f1) < solve(std::exp(t2), f2)) {
        hi = t2;
        if (f1.residual < best.residual) best = f1;
      } else {
        lo = t1;
        if (f2.residual < best.residual) best = f2;
      }
    }
  }
  return best;
}

Image illumination_shading(const IlluminationFit& f, const Image& mask) {
  Image out(mask.width(), mask.height(), 3, DomainTag::LogLinear);
  for (int c = 0; c < 3; ++c) {
    double* o = out.plane(c).data();
    const double* m = mask.data().data();
    for (std::size_t p = 0; p < mask.plane_size(); ++p)
      o[p] = f.a[static_cast<std::size_t>(c)] + std::log1p(f.rho * m[p]) + f.b[static_cast<std::size_t>(c)] * m[p];
  }
  return out;
}

double estimate_sun_azimuth(const Panorama& p) {
  const AzimuthDistribution d = estimate_azimuth(p);
  try {
    return circular_mean(d);
  } catch (const UndefinedMeanError&) {
    return AzimuthDistribution::bin_center(d.argmax());
  }
}

CompletionResult spacetime_completion(const synth::SpaceTimeGrid& grid, std::size_t row, std::size_t col,
                                      const FitConfig& fit, const GammaParams& gamma) {
  check_grid(grid, row, col);
  std::vector<RowShading> rows(grid.cells.size());
  for (std::size_t d = 0; d < rows.size(); ++d)
    if (d != row) rows[d] = fit_row(grid, d, fit, gamma);
  return complete_cell(grid, row, col, rows, gamma);
}

RelightResult relight_azimuth(const synth::SynthScene& scene, const synth::SynthStack& stack,
                              const Decomposition& fit, std::size_t frame, double new_azimuth,
                              const GammaParams& gamma) {
  if (frame >= stack.stack.frames.size() || frame >= fit.shadings.size())
    throw std::out_of_range("relight: frame index out of range");
  const Panorama& p = stack.stack.frames[frame];
  const int w = p.width(), h = p.height();
  std::vector<double> azimuths;
  for (const auto& il : stack.illuminations) azimuths.push_back(il.sun_azimuth);
  const auto own = stack_illumination(scene, stack.stack, fit, azimuths, gamma);

  Image shading = fit.shadings[frame].full_log_shading();
  if (new_azimuth != azimuths[frame]) {
    const Image moved = illumination_shading(own.fits[frame], synth::shadow_mask(scene, new_azimuth, w, h));
    const Image delta = minus(moved, illumination_shading(own.fits[frame], own.masks[frame]));
    for (std::size_t k = 0; k < shading.size(); ++k) shading.data()[k] += delta.data()[k];
  }
  RelightResult r;
  r.relit = gamma_encode(recompose(fit.log_reflectance, shading), gamma);
  synth::Illumination target = stack.illuminations[frame];
  target.sun_azimuth = new_azimuth;
  r.ground_truth = synth::render(scene, target, w, h, gamma).pano;
  r.mse = mse(r.relit, r.ground_truth);
  return r;
}

RelightResult relight_donor(const synth::SynthScene& scene, const synth::SynthStack& stack,
                            const Decomposition& fit, std::size_t frame, const synth::SynthScene& donor_scene,
                            const synth::SynthStack& donor_stack, const Decomposition& donor_fit,
                            std::size_t donor_same_time, std::size_t donor_new_time, const GammaParams& gamma) {
  if (frame >= stack.stack.frames.size() || frame >= fit.shadings.size())
    throw std::out_of_range("relight: frame index out of range");
  if (donor_same_time >= donor_stack.stack.frames.size() || donor_new_time >= donor_stack.stack.frames.size())
    throw std::out_of_range("relight: donor frame index out of range");
  const Panorama& p = stack.stack.frames[frame];
  const int w = p.width(), h = p.height();
  const auto own_logs = log_frames(stack.stack, gamma), donor_logs = log_frames(donor_stack.stack, gamma);
  auto estimated = [&](const synth::SynthScene& sc, const Stack& s, const Decomposition& d,
                       const std::vector<Image>& logs) {
    std::vector<double> az;
    for (std::size_t i = 0; i < s.size(); ++i)
      az.push_back(sun_visible(s.frames[i]) ? estimate_sun_azimuth(s.frames[i])
                                            : shadow_scan_azimuth(sc, minus(logs[i], d.log_reflectance),
                                                                  fit_weight(sc, s.frames[i])));
    return az;
  };
  auto own_az = estimated(scene, stack.stack, fit, own_logs);
  auto donor_az = estimated(donor_scene, donor_stack.stack, donor_fit, donor_logs);
  // both scenes saw the frame's illumination: keep the azimuth whose shadow
  // geometry explains both shadings best
  {
    const Image own_s = minus(own_logs[frame], fit.log_reflectance);
    const Image donor_s = minus(donor_logs[donor_same_time], donor_fit.log_reflectance);
    const Image own_w = fit_weight(scene, p);
    const Image donor_w = fit_weight(donor_scene, donor_stack.stack.frames[donor_same_time]);
    double best = std::numeric_limits<double>::infinity(), chosen = own_az[frame];
    for (double phi : {own_az[frame], donor_az[donor_same_time]}) {
      const double res = fit_illumination(own_s, synth::shadow_mask(scene, phi, w, h), own_w).residual +
                         fit_illumination(donor_s, synth::shadow_mask(donor_scene, phi, w, h), donor_w).residual;
      if (res < best) {
        best = res;
        chosen = phi;
      }
    }
    own_az[frame] = donor_az[donor_same_time] = chosen;
  }
  const auto own = stack_illumination(scene, stack.stack, fit, own_az, gamma);
  const auto donor = stack_illumination(donor_scene, donor_stack.stack, donor_fit, donor_az, gamma);

  // the donor's level change between the two times is free of its gauge
  IlluminationFit moved = donor.fits[donor_new_time];
  for (std::size_t c = 0; c < 3; ++c)
    moved.a[c] = own.fits[frame].a[c] + donor.fits[donor_new_time].a[c] - donor.fits[donor_same_time].a[c];
  Image shading = fit.shadings[frame].full_log_shading();
  const Image delta =
      minus(illumination_shading(moved, synth::shadow_mask(scene, donor_az[donor_new_time], w, h)),
            illumination_shading(own.fits[frame], own.masks[frame]));
  for (std::size_t k = 0; k < shading.size(); ++k) shading.data()[k] += delta.data()[k];
  RelightResult r;
  r.relit = gamma_encode(recompose(fit.log_reflectance, shading), gamma);
  r.ground_truth = synth::render(scene, donor_stack.illuminations[donor_new_time], w, h, gamma).pano;
  r.mse = mse(r.relit, r.ground_truth);
  return r;
}

AlignmentInstance alignment_bench(const synth::SynthStack& s, const AlignConfig& cfg) {
  const int h = s.stack.frames.front().height(), w = s.stack.frames.front().width();
  AlignmentInstance r;
  r.epe_before = alignment_endpoint_error(std::vector<WarpGrid>(s.gt_warps.size()), s.gt_warps, h, w);
  r.variance_before = stack_variance(s.stack).mean;
  const AlignResult res = align_stack(s.stack, cfg);
  r.epe_after = alignment_endpoint_error(res.warps, s.gt_warps, h, w);
  r.variance_after = stack_variance(res.aligned).mean;
  r.loss_before = res.initial_loss;
  r.loss_after = res.final_loss;
  return r;
}

json ProtocolOptions::to_json() const {
  return {{"seed", seed},
          {"stacks", stacks},
          {"grid", {grid_rows, grid_cols}},
          {"resolution", std::to_string(width) + "x" + std::to_string(height)},
          {"jitter_px", jitter},
          {"panoramas", panoramas},
          {"varying_stacks", varying_stacks},
          {"gamma", {{"scale", gamma.scale}, {"gamma", gamma.gamma}}},
          {"fit",
           {{"iterations", fit.iterations},
            {"learning_rate", fit.learning_rate},
            {"weight_recon", fit.weight_recon},
            {"weight_rc", fit.weight_rc},
            {"weight_wl", fit.weight_wl}}},
          {"align",
           {{"steps", align.steps},
            {"learning_rate", align.learning_rate},
            {"beta1", align.beta1},
            {"beta2", align.beta2},
            {"init_noise", align.init_noise},
            {"refit_every", align.refit_every},
            {"blur_sigma", align.blur_sigma},
            {"shading_sigma", align.shading_sigma},
            {"factor_iterations", align.factor_iterations}}}};
}

std::vector<synth::SynthStack> consistency_corpus(const ProtocolOptions& o) {
  std::vector<synth::SynthStack> out;
  for (int k = 0; k < o.stacks; ++k) {
    const auto kk = static_cast<std::uint64_t>(k);
    const synth::SynthScene scene = synth::random_scene(derive_seed(o.seed, 2 * kk));
    out.push_back(synth::make_stack(scene, synth::random_illuminations(8, derive_seed(o.seed, 2 * kk + 1)), 0.0,
                                    derive_seed(o.seed, kk), o.width, o.height, o.gamma));
  }
  return out;
}

synth::SpaceTimeGrid completion_grid(const ProtocolOptions& o) {
  return synth::spacetime_grid(o.grid_rows, o.grid_cols, o.seed, o.width, o.height, o.gamma);
}

std::vector<synth::SynthStack> alignment_corpus(const ProtocolOptions& o) {
  std::vector<synth::SynthStack> out;
  for (int k = 0; k < o.stacks; ++k) {
    const auto kk = static_cast<std::uint64_t>(k);
    const synth::SynthScene scene = synth::random_scene(derive_seed(o.seed, 1000 + kk));
    auto illum = synth::random_illuminations(8, derive_seed(o.seed, 2000 + kk));
    if (k < o.stacks - o.varying_stacks) std::fill(illum.begin(), illum.end(), illum.front());
    out.push_back(synth::make_stack(scene, illum, o.jitter, derive_seed(o.seed, 3000 + kk), o.width, o.height,
                                    o.gamma));
  }
  return out;
}

namespace {

const char* kOracleNote =
    "sun masks for transferred illumination are recomputed by the synthetic renderer's shadow oracle; "
    "this stands in for a learned geometry pathway";

EvalReport base_report(const std::string& protocol, const std::string& metric, const ProtocolOptions& o) {
  EvalReport r;
  r.protocol = protocol;
  r.metric = metric;
  r.config = o.to_json();
  r.seed = o.seed;
  return r;
}

}  // namespace

EvalReport run_consistency(const std::vector<synth::SynthStack>& corpus, const ProtocolOptions& o) {
  const std::vector<Method> methods{Method::Weiss, Method::Bicolor, Method::Monocolor, Method::PixelNn};
  EvalReport r = base_report("consistency", "srgb_mse", o);
  r.notes.push_back("frames 0-3 and 4-7 are fitted independently and reconstructed with the other half's reflectance");
  const auto per_stack = parallel_map<std::vector<ConsistencyResult>>(
      corpus.size(), o.threads, [&](std::size_t i) {
        std::vector<ConsistencyResult> v;
        for (Method m : methods) v.push_back(scene_consistency(corpus[i].stack, m, o.fit, o.gamma));
        return v;
      });
  for (std::size_t m = 0; m < methods.size(); ++m) {
    const std::string name = to_string(methods[m]);
    r.methods.push_back(name);
    std::vector<double> values;
    for (const auto& v : per_stack) values.push_back(v[m].swap_mse);
    r.results[name] = mean_of(values);
  }
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    json inst{{"stack_id", corpus[i].stack.stack_id}};
    for (std::size_t m = 0; m < methods.size(); ++m)
      inst[to_string(methods[m])] = {{"swap_mse", per_stack[i][m].swap_mse}, {"own_mse", per_stack[i][m].own_mse}};
    r.instances.push_back(inst);
  }
  return r;
}

EvalReport run_completion(const synth::SpaceTimeGrid& grid, const ProtocolOptions& o) {
  EvalReport r = base_report("completion", "srgb_mse", o);
  r.notes.push_back(kOracleNote);
  const std::size_t rows = grid.cells.size(), cols = grid.cells.front().size();
  const auto shadings =
      parallel_map<RowShading>(rows, o.threads, [&](std::size_t r) { return fit_row(grid, r, o.fit, o.gamma); });
  const auto results = parallel_map<CompletionResult>(rows * cols, o.threads, [&](std::size_t i) {
    check_grid(grid, i / cols, i % cols);
    return complete_cell(grid, i / cols, i % cols, shadings, o.gamma);
  });
  std::vector<double> transfer, nn;
  int wins = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& c = results[i];
    transfer.push_back(c.transfer_mse);
    nn.push_back(c.pixel_nn_mse);
    wins += c.transfer_mse < c.pixel_nn_mse;
    r.instances.push_back({{"row", i / cols},
                           {"col", i % cols},
                           {"donor_rows", c.donor_rows},
                           {"bicolor_transfer", c.transfer_mse},
                           {"pixel_nn", c.pixel_nn_mse},
                           {"estimated_azimuth", c.estimated_azimuth},
                           {"true_azimuth", c.true_azimuth}});
  }
  r.methods = {"bicolor_transfer", "pixel_nn"};
  r.results["bicolor_transfer"] = mean_of(transfer);
  r.results["pixel_nn"] = mean_of(nn);
  r.summary["transfer_win_fraction"] = static_cast<double>(wins) / static_cast<double>(results.size());
  return r;
}

EvalReport run_alignment(const std::vector<synth::SynthStack>& corpus, const ProtocolOptions& o) {
  EvalReport r = base_report("alignment", "endpoint_error_px", o);
  struct Row {
    bool varying = false;
    AlignmentInstance rgb, refl;
  };
  const auto rows = parallel_map<Row>(corpus.size(), o.threads, [&](std::size_t i) {
    Row row;
    const auto& il = corpus[i].illuminations;
    row.varying = std::any_of(il.begin(), il.end(), [&](const auto& x) { return !(x == il.front()); });
    AlignConfig cfg = o.align;
    cfg.mode = AlignMode::Rgb;
    row.rgb = alignment_bench(corpus[i], cfg);
    if (row.varying) {
      cfg.mode = AlignMode::Reflectance;
      row.refl = alignment_bench(corpus[i], cfg);
    }
    return row;
  });
  auto inst_json = [](const AlignmentInstance& a) {
    return json{{"epe_before", a.epe_before},          {"epe_after", a.epe_after},
                {"variance_before", a.variance_before}, {"variance_after", a.variance_after},
                {"loss_before", a.loss_before},         {"loss_after", a.loss_after}};
  };
  std::vector<double> fixed_rgb, varying_rgb, varying_refl;
  int decreased = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    json inst{{"stack_id", corpus[i].stack.stack_id},
              {"illumination_varies", rows[i].varying},
              {"rgb", inst_json(rows[i].rgb)}};
    decreased += rows[i].rgb.variance_after < rows[i].rgb.variance_before;
    if (rows[i].varying) {
      inst["reflectance"] = inst_json(rows[i].refl);
      varying_rgb.push_back(rows[i].rgb.epe_after);
      varying_refl.push_back(rows[i].refl.epe_after);
    } else {
      fixed_rgb.push_back(rows[i].rgb.epe_after);
    }
    r.instances.push_back(inst);
  }
  r.methods = {"rgb"};
  r.results["rgb"] = mean_of(fixed_rgb);
  if (!varying_refl.empty()) {
    r.methods.push_back("rgb_varying_illumination");
    r.methods.push_back("reflectance_varying_illumination");
    r.results["rgb_varying_illumination"] = mean_of(varying_rgb);
    r.results["reflectance_varying_illumination"] = mean_of(varying_refl);
  }
  r.summary["variance_decreased_fraction"] = static_cast<double>(decreased) / static_cast<double>(rows.size());
  return r;
}

EvalReport run_azimuth(const ProtocolOptions& o) {
  constexpr std::size_t kPerScene = 10;
  const auto n = static_cast<std::size_t>(std::max(0, o.panoramas));
  std::vector<Panorama> panos(n);
  std::vector<double> truth(n);
  parallel_map<int>(n, o.threads, [&](std::size_t i) {
    const auto scene = synth::random_scene(derive_seed(o.seed, 5000 + i / kPerScene));
    const auto illum = synth::random_illuminations(1, derive_seed(o.seed, 6000 + i)).front();
    panos[i] = synth::render(scene, illum, o.width, o.height, o.gamma).pano;
    truth[i] = illum.sun_azimuth;
    return 0;
  });
  return run_azimuth(panos, truth, o);
}

EvalReport run_azimuth(const std::vector<Panorama>& panos, const std::vector<double>& truth,
                       const ProtocolOptions& o) {
  if (panos.size() != truth.size()) throw std::invalid_argument("run_azimuth: one ground truth per panorama");
  EvalReport r = base_report("azimuth", "median_error_deg", o);
  std::vector<double> pred = parallel_map<double>(panos.size(), o.threads,
                                                  [&](std::size_t i) { return estimate_sun_azimuth(panos[i]); });
  const double offset = pred.empty() ? 0.0 : calibrate_offset(pred, truth);
  for (double& p : pred) p = wrap_angle(p + offset);
  const AzimuthMetrics m = pred.empty() ? AzimuthMetrics{} : azimuth_metrics(pred, truth);
  for (std::size_t i = 0; i < pred.size(); ++i)
    r.instances.push_back({{"true_azimuth", truth[i]}, {"predicted_azimuth", pred[i]}});
  r.methods = {"brightest_component"};
  r.results["brightest_component"] = m.median_error_deg;
  r.summary = {{"mean_cosine", m.mean_cosine},
               {"calibration_offset", offset},
               {"reference_trained_model", {{"mean_cosine", kReferenceGsvMetrics.mean_cosine},
                                            {"median_error_deg", kReferenceGsvMetrics.median_error_deg}}}};
  return r;
}

json report_to_json(const EvalReport& r) {
  json results = json::object();
  for (const auto& [k, v] : r.results) results[k] = v;
  return {{"schema_version", kReportSchemaVersion},
          {"protocol", r.protocol},
          {"metric", r.metric},
          {"methods", r.methods},
          {"results", results},
          {"summary", r.summary},
          {"instances", r.instances},
          {"config", r.config},
          {"seed", r.seed},
          {"notes", r.notes}};
}

std::vector<std::string> validate_report(const json& j) {
  std::vector<std::string> errors;
  if (!j.is_object()) return {"report must be a JSON object"};
  auto require = [&](const char* key, bool ok, const char* what) {
    if (!j.contains(key)) errors.push_back(std::string("missing field '") + key + "'");
    else if (!ok) errors.push_back(std::string("field '") + key + "' must be " + what);
  };
  require("schema_version", j.contains("schema_version") && j["schema_version"] == kReportSchemaVersion,
          "the current schema version");
  static const std::set<std::string> protocols{"consistency", "completion", "alignment", "azimuth"};
  require("protocol",
          j.contains("protocol") && j["protocol"].is_string() && protocols.count(j["protocol"].get<std::string>()),
          "one of consistency|completion|alignment|azimuth");
  require("metric", j.contains("metric") && j["metric"].is_string(), "a string");
  require("methods", j.contains("methods") && j["methods"].is_array() && !j["methods"].empty(),
          "a non-empty array");
  require("results", j.contains("results") && j["results"].is_object(), "an object");
  require("summary", j.contains("summary") && j["summary"].is_object(), "an object");
  require("instances", j.contains("instances") && j["instances"].is_array(), "an array");
  require("config", j.contains("config") && j["config"].is_object(), "an object");
  require("seed", j.contains("seed") && j["seed"].is_number_unsigned(), "a non-negative integer");
  require("notes", j.contains("notes") && j["notes"].is_array(), "an array");
  if (!errors.empty()) return errors;
  std::set<std::string> methods;
  for (const auto& m : j["methods"]) {
    if (!m.is_string()) errors.push_back("method names must be strings");
    else methods.insert(m.get<std::string>());
  }
  for (const auto& [k, v] : j["results"].items()) {
    if (!methods.count(k)) errors.push_back("result for unlisted method '" + k + "'");
    if (!v.is_number() || !std::isfinite(v.get<double>()) || v.get<double>() < 0.0)
      errors.push_back("result '" + k + "' must be a finite number >= 0");
  }
  for (const auto& m : methods)
    if (!j["results"].contains(m)) errors.push_back("no result for method '" + m + "'");
  return errors;
}

std::string table_csv(const std::vector<EvalReport>& reports) {
  std::vector<std::string> rows;
  for (const auto& r : reports)
    for (const auto& m : r.methods)
      if (std::find(rows.begin(), rows.end(), m) == rows.end()) rows.push_back(m);
  std::ostringstream os;
  os.precision(6);
  os << "method";
  for (const auto& r : reports) os << ',' << r.protocol;
  os << '\n';
  for (const auto& m : rows) {
    os << m;
    for (const auto& r : reports) {
      os << ',';
      const auto it = r.results.find(m);
      if (it != r.results.end()) os << it->second;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace tli::eval
