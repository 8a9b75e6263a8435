#include "tli/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tli {

std::string to_string(DomainTag tag) {
  return tag == DomainTag::SrgbUnit ? "SRGB_UNIT" : "LOG_LINEAR";
}

DomainTag domain_tag_from_string(const std::string& s) {
  if (s == "SRGB_UNIT") return DomainTag::SrgbUnit;
  if (s == "LOG_LINEAR") return DomainTag::LogLinear;
  throw DataError("unknown domain tag '" + s + "'");
}

Image::Image(int width, int height, int channels, DomainTag tag, double fill)
    : width_(width), height_(height), channels_(channels), tag_(tag) {
  if (width <= 0 || height <= 0 || channels <= 0)
    throw std::invalid_argument("image dimensions must be positive");
  data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

Image Image::channel(int c) const {
  Image out(width_, height_, 1, tag_);
  auto src = plane(c);
  std::copy(src.begin(), src.end(), out.data_.begin());
  return out;
}

void GammaParams::validate() const {
  if (!(scale > 0.0)) throw std::invalid_argument("gamma scale A must be > 0");
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw std::invalid_argument("gamma exponent must lie in (0, 1]");
}

void check_panorama_geometry(int width, int height) {
  if (width <= 0 || height <= 0 || width % kAzimuthBins != 0 || width != 3 * height)
    throw DataError("panorama must satisfy W = 3H with W divisible by 60, got " +
                    std::to_string(width) + "x" + std::to_string(height));
}

Image gamma_decode(const Image& p, const GammaParams& g) {
  g.validate();
  if (p.tag() != DomainTag::SrgbUnit)
    throw std::invalid_argument("gamma_decode expects an SRGB_UNIT image");
  Image out = p;
  const double inv = 1.0 / g.gamma;
  for (double& v : out.data()) {
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument("gamma_decode input outside [0,1]");
    v = std::pow(v / g.scale, inv);
  }
  return out;
}

Image gamma_encode(const Image& p, const GammaParams& g) {
  g.validate();
  if (p.tag() != DomainTag::SrgbUnit)
    throw std::invalid_argument("gamma_encode expects linear intensities in SRGB_UNIT range");
  Image out = p;
  for (double& v : out.data()) {
    if (!(v >= 0.0)) throw std::invalid_argument("gamma_encode input must be non-negative");
    v = g.scale * std::pow(v, g.gamma);
  }
  return out;
}

Image log_encode(const Image& p, double floor) {
  if (!(floor > 0.0)) throw std::invalid_argument("log floor must be positive");
  Image out = p;
  out.set_tag(DomainTag::LogLinear);
  for (double& v : out.data()) v = std::log(std::max(v, floor));
  return out;
}

Image log_decode(const Image& p) {
  Image out = p;
  out.set_tag(DomainTag::SrgbUnit);
  for (double& v : out.data()) v = std::exp(v);
  return out;
}

Image recompose(const Image& log_reflectance, const Image& log_shading) {
  const Image& r = log_reflectance;
  const Image& s = log_shading;
  if (r.width() != s.width() || r.height() != s.height() ||
      (s.channels() != r.channels() && s.channels() != 1))
    throw std::invalid_argument("recompose: dimension mismatch");
  Image out(r.width(), r.height(), r.channels(), DomainTag::SrgbUnit);
  for (int c = 0; c < r.channels(); ++c) {
    auto rp = r.plane(c);
    auto sp = s.plane(s.channels() == 1 ? 0 : c);
    auto op = out.plane(c);
    for (std::size_t i = 0; i < op.size(); ++i)
      op[i] = std::clamp(std::exp(rp[i] + sp[i]), 0.0, 1.0);
  }
  return out;
}

int angle_to_columns(double angle, int width) {
  double turns = std::fmod(angle / kTwoPi, 1.0);
  long shift = std::lround(turns * width);
  shift %= width;
  if (shift < 0) shift += width;
  return static_cast<int>(shift);
}

Image shift_columns(const Image& p, int shift) {
  const int w = p.width();
  shift %= w;
  if (shift < 0) shift += w;
  Image out = p;
  for (int c = 0; c < p.channels(); ++c)
    for (int y = 0; y < p.height(); ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, (x + shift) % w) = p.at(c, y, x);
  return out;
}

Image rotate_pano(const Image& p, double angle) {
  return shift_columns(p, angle_to_columns(angle, p.width()));
}

double column_center_yaw(int column, int width) {
  return -kPi + kTwoPi * (column + 0.5) / width;
}

Image luminance(const Image& p) {
  if (p.channels() != 3) throw std::invalid_argument("luminance expects 3 channels");
  Image out(p.width(), p.height(), 1, p.tag());
  auto r = p.plane(0), g = p.plane(1), b = p.plane(2);
  auto o = out.plane(0);
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = 0.2126 * r[i] + 0.7152 * g[i] + 0.0722 * b[i];
  return out;
}

Image gaussian_blur(const Image& p, double sigma) {
  if (sigma <= 0.0) return p;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  for (int k = -radius; k <= radius; ++k)
    kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
  const double norm = std::accumulate(kernel.begin(), kernel.end(), 0.0);
  for (double& k : kernel) k /= norm;

  const int w = p.width(), h = p.height();
  Image out = p;
  std::vector<double> padded(static_cast<std::size_t>(w + 2 * radius));
  std::vector<double> tmp(p.plane_size());
  for (int c = 0; c < p.channels(); ++c) {
    const double* src = p.plane(c).data();
    double* dst = out.plane(c).data();
    for (int y = 0; y < h; ++y) {
      const double* row = src + static_cast<std::size_t>(y) * w;
      for (int x = -radius; x < w + radius; ++x) padded[x + radius] = row[((x % w) + w) % w];
      double* trow = tmp.data() + static_cast<std::size_t>(y) * w;
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = 0; k <= 2 * radius; ++k) acc += kernel[k] * padded[x + k];
        trow[x] = acc;
      }
    }
    for (int y = 0; y < h; ++y) {
      double* orow = dst + static_cast<std::size_t>(y) * w;
      std::fill(orow, orow + w, 0.0);
      for (int k = -radius; k <= radius; ++k) {
        const double* trow = tmp.data() + static_cast<std::size_t>(std::clamp(y + k, 0, h - 1)) * w;
        const double kv = kernel[k + radius];
        for (int x = 0; x < w; ++x) orow[x] += kv * trow[x];
      }
    }
  }
  return out;
}

double mse(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mse: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

namespace {

double pearson_about(const Image& a, const Image& b, bool per_channel) {
  if (!a.same_shape(b)) throw std::invalid_argument("pearson: shape mismatch");
  std::vector<double> ma(static_cast<std::size_t>(a.channels())), mb(ma.size());
  for (int c = 0; c < a.channels(); ++c) {
    const auto pa = per_channel ? a.plane(c) : std::span<const double>(a.data());
    const auto pb = per_channel ? b.plane(c) : std::span<const double>(b.data());
    ma[c] = std::accumulate(pa.begin(), pa.end(), 0.0) / static_cast<double>(pa.size());
    mb[c] = std::accumulate(pb.begin(), pb.end(), 0.0) / static_cast<double>(pb.size());
  }
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    const auto pa = a.plane(c), pb = b.plane(c);
    for (std::size_t i = 0; i < pa.size(); ++i) {
      const double da = pa[i] - ma[c], db = pb[i] - mb[c];
      sab += da * db;
      saa += da * da;
      sbb += db * db;
    }
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

double pearson(const Image& a, const Image& b) { return pearson_about(a, b, false); }

double pearson_per_channel_offset(const Image& a, const Image& b) { return pearson_about(a, b, true); }

}  // namespace tli
