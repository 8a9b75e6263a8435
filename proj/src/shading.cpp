#include "tli/shading.hpp"

namespace tli {

Image BiColorShading::bicolor_field() const {
  Image out(mask.width(), mask.height(), 3, DomainTag::LogLinear);
  auto m = mask.plane(0);
  for (int c = 0; c < 3; ++c) {
    auto o = out.plane(c);
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = c1[c] * m[i] + c2[c] * (1.0 - m[i]);
  }
  return out;
}

Image BiColorShading::full_log_shading() const {
  Image out = bicolor_field();
  auto l = log_intensity.plane(0);
  for (int c = 0; c < 3; ++c) {
    auto o = out.plane(c);
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += l[i];
  }
  return out;
}

}  // namespace tli
