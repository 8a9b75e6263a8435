#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tli {

inline constexpr int kAzimuthBins = 60;
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;
inline constexpr double kDegToRad = kPi / 180.0;
inline constexpr double kRadToDeg = 180.0 / kPi;

/// Thrown for malformed or out-of-contract data (bad files, wrong sizes).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Value domain of an image. SrgbUnit covers every [0,1]-bounded encoding
/// (display sRGB as well as gamma-decoded linear intensities); LogLinear is
/// the unbounded natural-log domain where intrinsic arithmetic happens.
enum class DomainTag { SrgbUnit, LogLinear };

std::string to_string(DomainTag tag);
DomainTag domain_tag_from_string(const std::string& s);

/// Planar, row-major float64 image. A Panorama is an Image with 3 channels
/// whose columns map linearly to yaw: column c starts at yaw -pi + 2*pi*c/W,
/// so the center column W/2 starts at the canonical heading 0.
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, DomainTag tag = DomainTag::SrgbUnit,
        double fill = 0.0);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  DomainTag tag() const { return tag_; }
  void set_tag(DomainTag tag) { tag_ = tag; }
  std::size_t plane_size() const {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::span<double> plane(int c) {
    return {data_.data() + static_cast<std::size_t>(c) * plane_size(), plane_size()};
  }
  std::span<const double> plane(int c) const {
    return {data_.data() + static_cast<std::size_t>(c) * plane_size(), plane_size()};
  }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Image& o) const {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }

  /// Copy of a single channel as a 1-channel image.
  Image channel(int c) const;

  friend bool operator==(const Image& a, const Image& b) {
    return a.same_shape(b) && a.tag_ == b.tag_ && a.data_ == b.data_;
  }

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * static_cast<std::size_t>(height_) +
            static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  DomainTag tag_ = DomainTag::SrgbUnit;
  std::vector<double> data_;
};

using Panorama = Image;

/// Power-law display model I_srgb = A * I^gamma.
struct GammaParams {
  double scale = 1.0;
  double gamma = 1.0 / 2.2;

  void validate() const;
};

inline constexpr double kDefaultLogFloor = 1.0 / 255.0;

/// Throws DataError unless the panorama geometry is W = 3H and W % 60 == 0.
void check_panorama_geometry(int width, int height);

Image gamma_decode(const Image& p, const GammaParams& g = {});
Image gamma_encode(const Image& p, const GammaParams& g = {});

Image log_encode(const Image& p, double floor = kDefaultLogFloor);
Image log_decode(const Image& p);

/// exp(log_reflectance + log_shading) clamped to [0,1]. A 1-channel shading is
/// broadcast across the reflectance channels.
Image recompose(const Image& log_reflectance, const Image& log_shading);

/// Cyclic horizontal shift by round(angle / 2pi * W) columns; the pixel at
/// column c lands on column (c + shift) mod W.
Image rotate_pano(const Image& p, double angle);
Image shift_columns(const Image& p, int shift);
int angle_to_columns(double angle, int width);

/// Yaw (radians) of the center of column c.
double column_center_yaw(int column, int width);

/// Rec. 709 luminance of a 3-channel image; 1-channel result.
Image luminance(const Image& p);

/// Separable Gaussian blur, horizontally periodic and vertically clamped.
Image gaussian_blur(const Image& p, double sigma);

/// Mean squared difference over all values.
double mse(const Image& a, const Image& b);

/// Pearson correlation across every value of two equally shaped images.
double pearson(const Image& a, const Image& b);
/// Same, after removing each channel's mean from both images: invariant to
/// per-channel offsets, the gauge of log-reflectance estimates.
double pearson_per_channel_offset(const Image& a, const Image& b);

}  // namespace tli
