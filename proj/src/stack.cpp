#include "tli/stack.hpp"

#include <algorithm>
#include <cmath>

#include "tli/io.hpp"

namespace tli {

namespace {


CaptureRecord record_from_json(const nlohmann::json& f) {
  if (!f.is_object()) throw DataError("manifest frame must be an object");
  CaptureRecord r;
  try {
    r.id = f.at("id").get<std::string>();
    r.path = f.at("path").get<std::string>();
    r.lat = f.at("lat").get<double>();
    r.lon = f.at("lon").get<double>();
    r.heading_deg = f.at("heading_deg").get<double>();
    r.timestamp_utc = f.at("timestamp_utc").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest frame schema violation: ") + e.what());
  }
  r.validate();
  return r;
}

nlohmann::json record_to_json(const CaptureRecord& r) {
  return {{"id", r.id},
          {"path", r.path},
          {"lat", r.lat},
          {"lon", r.lon},
          {"heading_deg", r.heading_deg},
          {"timestamp_utc", r.timestamp_utc}};
}

}  // namespace

void CaptureRecord::validate() const {
  if (id.empty()) throw DataError("capture record without id");
  if (!(lat >= -90.0 && lat <= 90.0))
    throw DataError("record " + id + ": latitude out of [-90, 90]");
  if (!(lon >= -180.0 && lon <= 180.0))
    throw DataError("record " + id + ": longitude out of [-180, 180]");
  if (!std::isfinite(heading_deg)) throw DataError("record " + id + ": non-finite heading");
  if (!(timestamp_utc > 0.0)) throw DataError("record " + id + ": timestamp must be positive");
}

void Stack::validate() const {
  if (frames.empty() || frames.size() > kMaxStackSize)
    throw DataError("stack " + stack_id + " must hold 1..8 frames");
  for (const auto& f : frames)
    if (!f.same_shape(frames.front()))
      throw DataError("stack " + stack_id + ": frames differ in dimensions");
  if (warps && warps->size() != frames.size())
    throw DataError("stack " + stack_id + ": warp count differs from frame count");
}

double haversine_m(double lat1, double lon1, double lat2, double lon2) {
  const double p1 = lat1 * kDegToRad, p2 = lat2 * kDegToRad;
  const double dp = p2 - p1, dl = (lon2 - lon1) * kDegToRad;
  const double a =
      std::sin(dp / 2) * std::sin(dp / 2) + std::cos(p1) * std::cos(p2) * std::sin(dl / 2) * std::sin(dl / 2);
  return 2.0 * kEarthRadius * std::asin(std::min(1.0, std::sqrt(a)));
}

std::vector<StackSkeleton> greedy_cluster(const std::vector<CaptureRecord>& records,
                                          double radius_m) {
  if (!(radius_m > 0.0)) throw std::invalid_argument("cluster radius must be positive");
  std::vector<bool> assigned(records.size(), false);
  std::vector<StackSkeleton> stacks;
  for (std::size_t seed = 0; seed < records.size(); ++seed) {
    if (assigned[seed]) continue;
    StackSkeleton s;
    s.stack_id = "stack_" + std::to_string(stacks.size());
    s.frames.push_back(records[seed]);
    assigned[seed] = true;
    for (std::size_t j = seed + 1; j < records.size() && s.frames.size() < kMaxStackSize; ++j) {
      if (assigned[j]) continue;
      const bool near_all = std::all_of(s.frames.begin(), s.frames.end(), [&](const CaptureRecord& m) {
        return haversine_m(m.lat, m.lon, records[j].lat, records[j].lon) <= radius_m;
      });
      if (near_all) {
        s.frames.push_back(records[j]);
        assigned[j] = true;
      }
    }
    stacks.push_back(std::move(s));
  }
  return stacks;
}

Image resample_area(const Image& src, int width, int height) {
  if (src.width() == width && src.height() == height) return src;
  Image out(width, height, src.channels(), src.tag());
  const double sx = static_cast<double>(src.width()) / width;
  const double sy = static_cast<double>(src.height()) / height;
  for (int y = 0; y < height; ++y) {
    const double y0 = y * sy, y1 = (y + 1) * sy;
    for (int x = 0; x < width; ++x) {
      const double x0 = x * sx, x1 = (x + 1) * sx;
      for (int c = 0; c < src.channels(); ++c) {
        double acc = 0.0, area = 0.0;
        for (int v = static_cast<int>(y0); v < std::min<double>(std::ceil(y1), src.height()); ++v) {
          const double wy = std::min<double>(v + 1, y1) - std::max<double>(v, y0);
          if (wy <= 0.0) continue;
          for (int u = static_cast<int>(x0); u < std::min<double>(std::ceil(x1), src.width()); ++u) {
            const double wx = std::min<double>(u + 1, x1) - std::max<double>(u, x0);
            if (wx <= 0.0) continue;
            acc += wx * wy * src.at(c, v, u);
            area += wx * wy;
          }
        }
        out.at(c, y, x) = acc / area;
      }
    }
  }
  return out;
}

Stack load_stack(const StackSkeleton& skeleton, int width, int height,
                 const std::filesystem::path& base_dir) {
  check_panorama_geometry(width, height);
  if (skeleton.frames.empty() || skeleton.frames.size() > kMaxStackSize)
    throw DataError("stack " + skeleton.stack_id + " must hold 1..8 frames");
  Stack stack;
  stack.stack_id = skeleton.stack_id;
  for (const auto& rec : skeleton.frames) {
    const std::filesystem::path p = std::filesystem::path(rec.path).is_absolute()
                                        ? std::filesystem::path(rec.path)
                                        : base_dir / rec.path;
    Image img;
    try {
      img = io::read_png(p);
    } catch (const DataError& e) {
      throw DataError("frame " + rec.id + ": " + e.what());
    }
    if (img.width() != 3 * img.height())
      throw DataError("frame " + rec.id + ": panorama aspect must be 3:1, got " +
                      std::to_string(img.width()) + "x" + std::to_string(img.height()));
    img = resample_area(img, width, height);
    img = rotate_pano(img, rec.heading_deg * kDegToRad);
    stack.frames.push_back(std::move(img));
    stack.records.push_back(rec);
  }
  return stack;
}

nlohmann::json manifest_to_json(const std::vector<StackSkeleton>& stacks) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : stacks) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& r : s.frames) frames.push_back(record_to_json(r));
    arr.push_back({{"stack_id", s.stack_id}, {"frames", frames}});
  }
  return {{"stacks", arr}};
}

std::vector<StackSkeleton> manifest_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("stacks") || !j["stacks"].is_array())
    throw DataError("manifest must be an object with a 'stacks' array");
  std::vector<StackSkeleton> out;
  for (const auto& s : j["stacks"]) {
    if (!s.is_object() || !s.contains("stack_id") || !s["stack_id"].is_string() ||
        !s.contains("frames") || !s["frames"].is_array())
      throw DataError("manifest stack entries need 'stack_id' and 'frames'");
    StackSkeleton sk;
    sk.stack_id = s["stack_id"].get<std::string>();
    for (const auto& f : s["frames"]) sk.frames.push_back(record_from_json(f));
    if (sk.frames.size() > kMaxStackSize)
      throw DataError("stack " + sk.stack_id + " holds more than 8 frames");
    out.push_back(std::move(sk));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<StackSkeleton>& stacks) {
  io::write_json(path, manifest_to_json(stacks));
}

std::vector<StackSkeleton> read_manifest(const std::filesystem::path& path) {
  return manifest_from_json(io::read_json(path));
}

std::vector<CaptureRecord> records_from_json(const nlohmann::json& j) {
  const nlohmann::json* arr = &j;
  if (j.is_object() && j.contains("records")) arr = &j["records"];
  if (!arr->is_array()) throw DataError("records file must be an array or {\"records\": [...]}");
  std::vector<CaptureRecord> out;
  for (const auto& f : *arr) out.push_back(record_from_json(f));
  return out;
}

}  // namespace tli
