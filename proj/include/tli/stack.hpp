#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tli/image.hpp"
#include "tli/warp.hpp"

namespace tli {

inline constexpr int kMaxStackSize = 8;
inline constexpr double kDefaultClusterRadius = 0.4;  // meters
inline constexpr double kEarthRadius = 6371000.0;     // meters

struct CaptureRecord {
  std::string id;
  std::string path;
  double lat = 0.0;
  double lon = 0.0;
  double heading_deg = 0.0;
  double timestamp_utc = 0.0;

  void validate() const;
  friend bool operator==(const CaptureRecord&, const CaptureRecord&) = default;
};

/// Records grouped into a stack, before any pixels are loaded.
struct StackSkeleton {
  std::string stack_id;
  std::vector<CaptureRecord> frames;

  bool singleton() const { return frames.size() == 1; }
  friend bool operator==(const StackSkeleton&, const StackSkeleton&) = default;
};

struct Stack {
  std::string stack_id;
  std::vector<Panorama> frames;
  std::vector<CaptureRecord> records;
  std::optional<std::vector<WarpGrid>> warps;

  std::size_t size() const { return frames.size(); }
  void validate() const;
};

/// Great-circle distance in meters.
double haversine_m(double lat1, double lon1, double lat2, double lon2);

/// Input-order greedy clustering: each unassigned record seeds a stack and
/// absorbs later unassigned records lying within `radius_m` of every current
/// member, until the stack holds 8 frames.
std::vector<StackSkeleton> greedy_cluster(const std::vector<CaptureRecord>& records,
                                          double radius_m = kDefaultClusterRadius);

/// Area-averaging resample to width x height.
Image resample_area(const Image& src, int width, int height);

/// Decodes every frame (paths resolved against base_dir), resamples to the
/// target resolution and rotates so every frame has canonical heading 0.
Stack load_stack(const StackSkeleton& skeleton, int width, int height,
                 const std::filesystem::path& base_dir = {});

nlohmann::json manifest_to_json(const std::vector<StackSkeleton>& stacks);
std::vector<StackSkeleton> manifest_from_json(const nlohmann::json& j);
void write_manifest(const std::filesystem::path& path, const std::vector<StackSkeleton>& stacks);
std::vector<StackSkeleton> read_manifest(const std::filesystem::path& path);

/// Parses either {"records":[...]} or a bare array of frame objects.
std::vector<CaptureRecord> records_from_json(const nlohmann::json& j);

}  // namespace tli
