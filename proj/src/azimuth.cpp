#include "tli/azimuth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace tli {

int AzimuthDistribution::bin_of(double angle) {
  const double a = wrap_angle(angle);
  int b = static_cast<int>(std::floor((a + kPi) / bin_width()));
  return std::clamp(b, 0, kAzimuthBins - 1);
}

AzimuthDistribution AzimuthDistribution::uniform() {
  AzimuthDistribution d;
  d.bins.fill(1.0 / kAzimuthBins);
  return d;
}

void AzimuthDistribution::validate() const {
  double total = 0.0;
  for (double v : bins) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("azimuth bins must be non-negative");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("azimuth distribution must sum to 1");
}

int AzimuthDistribution::argmax() const {
  return static_cast<int>(std::max_element(bins.begin(), bins.end()) - bins.begin());
}

AzimuthDistribution AzimuthDistribution::shifted(int k) const {
  AzimuthDistribution out;
  for (int b = 0; b < kAzimuthBins; ++b)
    out.bins[static_cast<std::size_t>(((b + k) % kAzimuthBins + kAzimuthBins) % kAzimuthBins)] =
        bins[static_cast<std::size_t>(b)];
  return out;
}

double circular_mean(const AzimuthDistribution& phi) {
  double s = 0.0, c = 0.0;
  for (int b = 0; b < kAzimuthBins; ++b) {
    const double a = AzimuthDistribution::bin_center(b);
    s += phi.bins[static_cast<std::size_t>(b)] * std::sin(a);
    c += phi.bins[static_cast<std::size_t>(b)] * std::cos(a);
  }
  const double total = std::accumulate(phi.bins.begin(), phi.bins.end(), 0.0);
  if (!(total > 0.0) || std::hypot(s, c) / total <= 1e-9)
    throw UndefinedMeanError("circular mean undefined: resultant vector vanishes");
  return std::atan2(s, c);
}

double wrap_angle(double a) {
  double w = std::fmod(a + kPi, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  return w - kPi;
}

double snap_to_bins(double angle) {
  return std::round(angle / AzimuthDistribution::bin_width()) * AzimuthDistribution::bin_width();
}

namespace {

AzimuthDistribution column_marginal(const Image& lum, int rows) {
  const int w = lum.width();
  const int cols_per_bin = w / kAzimuthBins;
  AzimuthDistribution d;
  double total = 0.0;
  for (int b = 0; b < kAzimuthBins; ++b) {
    double acc = 0.0;
    for (int x = b * cols_per_bin; x < (b + 1) * cols_per_bin; ++x)
      for (int y = 0; y < rows; ++y) acc += lum.at(0, y, x);
    d.bins[static_cast<std::size_t>(b)] = acc;
    total += acc;
  }
  if (!(total > 0.0)) return AzimuthDistribution::uniform();
  for (double& v : d.bins) v /= total;
  return d;
}

}  // namespace

AzimuthDistribution estimate_azimuth(const Panorama& p, const SunEstimatorOptions& opts) {
  if (p.channels() != 3 || p.tag() != DomainTag::SrgbUnit)
    throw std::invalid_argument("estimate_azimuth expects an SRGB_UNIT panorama");
  if (p.width() % kAzimuthBins != 0)
    throw std::invalid_argument("panorama width must be divisible by 60");
  const int w = p.width();
  const int rows = std::max(1, static_cast<int>(std::ceil(opts.sky_fraction * p.height())));
  const Image lum = luminance(p);

  std::vector<double> band(lum.data().begin(), lum.data().begin() + static_cast<std::ptrdiff_t>(rows) * w);
  std::vector<double> sorted = band;
  std::sort(sorted.begin(), sorted.end());
  const auto rank = static_cast<std::size_t>(
      std::clamp(std::ceil(opts.percentile / 100.0 * static_cast<double>(sorted.size())) - 1.0, 0.0,
                 static_cast<double>(sorted.size() - 1)));
  const double threshold = std::max(opts.relax * sorted[rank], opts.floor);

  // 4-connected components of bright pixels, wrapping horizontally.
  std::vector<int> label(band.size(), -1);
  int best_label = -1;
  std::size_t best_size = 0;
  std::vector<std::vector<std::size_t>> components;
  for (std::size_t start = 0; start < band.size(); ++start) {
    if (label[start] != -1 || band[start] < threshold) continue;
    const int id = static_cast<int>(components.size());
    std::vector<std::size_t> members;
    std::vector<std::size_t> todo{start};
    label[start] = id;
    while (!todo.empty()) {
      const std::size_t i = todo.back();
      todo.pop_back();
      members.push_back(i);
      const int y = static_cast<int>(i) / w, x = static_cast<int>(i) % w;
      const int nx[4] = {(x + 1) % w, (x + w - 1) % w, x, x};
      const int ny[4] = {y, y, y - 1, y + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || ny[k] >= rows) continue;
        const std::size_t j = static_cast<std::size_t>(ny[k]) * w + static_cast<std::size_t>(nx[k]);
        if (label[j] == -1 && band[j] >= threshold) {
          label[j] = id;
          todo.push_back(j);
        }
      }
    }
    if (members.size() > best_size) {
      best_size = members.size();
      best_label = id;
    }
    components.push_back(std::move(members));
  }
  if (best_label < 0) return column_marginal(lum, rows);

  auto& comp = components[static_cast<std::size_t>(best_label)];
  std::sort(comp.begin(), comp.end());
  double s = 0.0, c = 0.0;
  for (std::size_t i : comp) {
    const double yaw = column_center_yaw(static_cast<int>(i) % w, w);
    s += band[i] * std::sin(yaw);
    c += band[i] * std::cos(yaw);
  }
  const double mu = std::atan2(s, c);
  AzimuthDistribution d;
  double total = 0.0;
  for (int b = 0; b < kAzimuthBins; ++b) {
    const double v = std::exp(opts.kappa * (std::cos(AzimuthDistribution::bin_center(b) - mu) - 1.0));
    d.bins[static_cast<std::size_t>(b)] = v;
    total += v;
  }
  for (double& v : d.bins) v /= total;
  return d;
}

Image sun_normalize(const Image& map, double phi_bar) {
  if (!std::isfinite(phi_bar)) throw std::invalid_argument("sun_normalize: non-finite azimuth");
  return rotate_pano(map, -snap_to_bins(phi_bar));
}

Image sun_denormalize(const Image& map, double phi_bar) {
  if (!std::isfinite(phi_bar)) throw std::invalid_argument("sun_denormalize: non-finite azimuth");
  return rotate_pano(map, snap_to_bins(phi_bar));
}

namespace {

void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || a.size() != b.size())
    throw std::invalid_argument("azimuth lists must be non-empty and of equal length");
}

}  // namespace

double calibrate_offset(std::span<const double> predictions, std::span<const double> ground_truth) {
  check_pair(predictions, ground_truth);
  double best_offset = 0.0, best_score = -std::numeric_limits<double>::infinity();
  for (int k = -kAzimuthBins / 2; k < kAzimuthBins / 2; ++k) {
    const double offset = k * AzimuthDistribution::bin_width();
    double score = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
      score += std::cos(predictions[i] + offset - ground_truth[i]);
    // strict improvement keeps the smallest-magnitude offset on exact ties
    if (score > best_score + 1e-12 ||
        (std::abs(score - best_score) <= 1e-12 && std::abs(offset) < std::abs(best_offset))) {
      best_score = std::max(score, best_score);
      best_offset = offset;
    }
  }
  return best_offset;
}

AzimuthMetrics azimuth_metrics(std::span<const double> predictions, std::span<const double> ground_truth) {
  check_pair(predictions, ground_truth);
  AzimuthMetrics m;
  std::vector<double> errors;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double d = predictions[i] - ground_truth[i];
    m.mean_cosine += std::cos(d);
    errors.push_back(std::abs(wrap_angle(d)) * 180.0 / kPi);
  }
  m.mean_cosine /= static_cast<double>(predictions.size());
  std::sort(errors.begin(), errors.end());
  const std::size_t n = errors.size();
  m.median_error_deg = n % 2 ? errors[n / 2] : 0.5 * (errors[n / 2 - 1] + errors[n / 2]);
  return m;
}

}  // namespace tli
