#pragma once

#include <array>
#include <vector>

#include "tli/image.hpp"

namespace tli {

using Rgb = std::array<double, 3>;

/// Outdoor bi-color shading of one frame in log space:
///   log S(x) + c1 * M(x) + c2 * (1 - M(x))
/// with c1 the sunlight and c2 the skylight color offsets.
struct BiColorShading {
  Image log_intensity;  // 1 channel
  Rgb c1{0.0, 0.0, 0.0};
  Rgb c2{0.0, 0.0, 0.0};
  Image mask;           // 1 channel, values in [0,1]

  /// B = c1 * M + c2 * (1 - M), 3 channels.
  Image bicolor_field() const;
  /// log_intensity broadcast to 3 channels plus B.
  Image full_log_shading() const;
};

/// Loss terms of a fitted decomposition; `trace` holds the objective after
/// every accepted iteration (index 0 = initialization).
struct FitReport {
  double objective = 0.0;
  double recon = 0.0;
  double rc = 0.0;
  double wl = 0.0;
  int iterations = 0;
  std::vector<double> trace;
};

struct Decomposition {
  Image log_reflectance;  // 3 channels, shared by the stack
  std::vector<BiColorShading> shadings;
  FitReport report;
};

}  // namespace tli
