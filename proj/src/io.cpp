#include "tli/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>
#include <png.h>

namespace tli::io {

static_assert(std::endian::native == std::endian::little,
              "float map I/O assumes a little-endian host");

Image read_png(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("missing file: " + path.string());
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw DataError("cannot decode PNG " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  const int w = static_cast<int>(image.width), h = static_cast<int>(image.height);
  Image out(w, h, 3, DomainTag::SrgbUnit);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) = buffer[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
  return out;
}

void write_png(const fs::path& path, const Image& img) {
  if (img.channels() != 3 && img.channels() != 1)
    throw std::invalid_argument("write_png expects 1 or 3 channels");
  const int w = img.width(), h = img.height();
  std::vector<png_byte> buffer(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = img.at(img.channels() == 1 ? 0 : c, y, x);
        const double q = std::round(std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0) * 255.0);
        buffer[(static_cast<std::size_t>(y) * w + x) * 3 + c] = static_cast<png_byte>(q);
      }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_RGB;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr))
    throw DataError("cannot write PNG " + path.string() + ": " + image.message);
}

fs::path sidecar_path(const fs::path& raw_path) {
  return fs::path(raw_path.string() + ".json");
}

void write_float_map(const fs::path& path, const Image& img) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  std::vector<float> buf(img.size());
  std::transform(img.data().begin(), img.data().end(), buf.begin(),
                 [](double v) { return static_cast<float>(v); });
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
  nlohmann::json meta = {{"width", img.width()},
                         {"height", img.height()},
                         {"channels", img.channels()},
                         {"dtype", "f32le"},
                         {"layout", "planar"},
                         {"domain_tag", to_string(img.tag())}};
  write_json(sidecar_path(path), meta);
}

Image read_float_map(const fs::path& path) {
  const auto meta = read_json(sidecar_path(path));
  if (meta.value("dtype", "") != "f32le" || meta.value("layout", "") != "planar")
    throw DataError("unsupported float map encoding in " + sidecar_path(path).string());
  Image img(meta.at("width").get<int>(), meta.at("height").get<int>(),
            meta.at("channels").get<int>(),
            domain_tag_from_string(meta.at("domain_tag").get<std::string>()));
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing file: " + path.string());
  std::vector<float> buf(img.size());
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (is.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
    throw DataError("truncated float map: " + path.string());
  std::copy(buf.begin(), buf.end(), img.data().begin());
  return img;
}

void write_preview_png(const fs::path& path, const Image& img) {
  Image view = img;
  const auto [lo, hi] = std::minmax_element(view.data().begin(), view.data().end());
  const double a = *lo, span = *hi - *lo;
  for (double& v : view.data()) v = span > 0.0 ? (v - a) / span : 0.5;
  view.set_tag(DomainTag::SrgbUnit);
  write_png(path, view);
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("missing file: " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os << text;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing file: " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::array<char, 1 << 16> chunk{};
  while (is) {
    is.read(chunk.data(), chunk.size());
    if (is.gcount() > 0) EVP_DigestUpdate(ctx, chunk.data(), static_cast<std::size_t>(is.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest.data(), &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i)
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return hex.str();
}

}  // namespace tli::io
