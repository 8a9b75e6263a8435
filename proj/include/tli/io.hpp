#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "tli/image.hpp"

namespace tli::io {

namespace fs = std::filesystem;

/// 8-bit RGB PNG to an SRGB_UNIT image (v / 255).
Image read_png(const fs::path& path);
/// Writes round(clamp(v,0,1) * 255); 1-channel images are written as gray RGB.
void write_png(const fs::path& path, const Image& img);

/// Raw little-endian f32, planar, row-major, plus `<path>.json` sidecar
/// {width, height, channels, dtype:"f32le", layout:"planar", domain_tag}.
void write_float_map(const fs::path& path, const Image& img);
Image read_float_map(const fs::path& path);
fs::path sidecar_path(const fs::path& raw_path);

/// Display-only preview of an unbounded map: per-image min/max normalization.
void write_preview_png(const fs::path& path, const Image& img);

nlohmann::json read_json(const fs::path& path);
/// Pretty-printed with a trailing newline; deterministic key order.
void write_json(const fs::path& path, const nlohmann::json& j);
void write_text(const fs::path& path, const std::string& text);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const fs::path& path);

}  // namespace tli::io
