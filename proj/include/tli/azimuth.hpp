#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <vector>

#include "tli/image.hpp"

namespace tli {

/// Probability distribution over 60 sun-azimuth bins; bin b covers
/// [-pi + b * 2pi/60, -pi + (b + 1) * 2pi/60).
struct AzimuthDistribution {
  std::array<double, kAzimuthBins> bins{};

  static constexpr double bin_width() { return kTwoPi / kAzimuthBins; }
  static double bin_center(int b) { return -kPi + (b + 0.5) * bin_width(); }
  static int bin_of(double angle);

  static AzimuthDistribution uniform();
  void validate() const;
  int argmax() const;
  /// Cyclic shift: mass in bin b moves to bin b + k.
  AzimuthDistribution shifted(int k) const;
};

/// Raised when the resultant vector vanishes (e.g. a uniform distribution).
class UndefinedMeanError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// atan2(E[sin], E[cos]) over bin centers.
double circular_mean(const AzimuthDistribution& phi);

/// Wraps an angle to [-pi, pi).
double wrap_angle(double a);
/// Nearest multiple of the bin width.
double snap_to_bins(double angle);

struct SunEstimatorOptions {
  double sky_fraction = 0.4;   // top rows searched for the sun
  double percentile = 99.5;    // luminance percentile of the sky band
  double relax = 0.9;          // threshold = max(relax * percentile value, floor)
  double floor = 0.8;          // absolute luminance floor
  double kappa = 100.0;        // von Mises concentration: ~24% mass on each adjacent bin
};

/// Brightest-component sun estimator over an sRGB panorama. Falls back to the
/// normalized column-luminance marginal of the sky band (uniform when black).
AzimuthDistribution estimate_azimuth(const Panorama& p, const SunEstimatorOptions& opts = {});

/// Rotates a map so the sun sits at the canonical heading (by -phi_bar,
/// snapped to bins); sun_denormalize undoes it.
Image sun_normalize(const Image& map, double phi_bar);
Image sun_denormalize(const Image& map, double phi_bar);

/// Bin-offset maximizing mean cos(pred + offset - gt), searched over 60 offsets.
double calibrate_offset(std::span<const double> predictions, std::span<const double> ground_truth);

struct AzimuthMetrics {
  double mean_cosine = 0.0;
  double median_error_deg = 0.0;
};

AzimuthMetrics azimuth_metrics(std::span<const double> predictions, std::span<const double> ground_truth);

/// Metrics of a trained estimator on real street panoramas (mean cosine 0.806,
/// median error 9.2 degrees). Echoed in azimuth reports for scale only.
inline constexpr AzimuthMetrics kReferenceGsvMetrics{0.806, 9.2};

}  // namespace tli
