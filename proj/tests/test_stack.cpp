#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "tli/io.hpp"
#include "tli/rng.hpp"
#include "tli/stack.hpp"

using namespace tli;
using namespace tli::io;
namespace fs = std::filesystem;

namespace {

CaptureRecord rec(const std::string& id, double lat, double lon, double heading = 0.0) {
  return {id, id + ".png", lat, lon, heading, 1.6e9};
}

// meters per degree of latitude on the sphere
double meters_per_degree() { return kEarthRadius * kPi / 180.0; }

}  // namespace

TEST_CASE("haversine on meridians and the equator") {
  CHECK(haversine_m(10.0, 20.0, 10.0, 20.0) == 0.0);
  CHECK(haversine_m(0.0, 0.0, 1.0, 0.0) == doctest::Approx(meters_per_degree()).epsilon(1e-12));
  CHECK(haversine_m(0.0, 0.0, 0.0, 1.0) == doctest::Approx(meters_per_degree()).epsilon(1e-12));
  CHECK(haversine_m(0.0, 0.0, 0.0, 180.0) == doctest::Approx(kEarthRadius * kPi).epsilon(1e-12));
  // at latitude 60 a degree of longitude is about half as long
  CHECK(haversine_m(60.0, 0.0, 60.0, 0.001) ==
        doctest::Approx(0.001 * meters_per_degree() * 0.5).epsilon(1e-6));
}

TEST_CASE("greedy clustering caps at eight and respects the radius") {
  const double step = 0.1 / meters_per_degree();  // 10 cm in latitude
  std::vector<CaptureRecord> records;
  for (int i = 0; i < 10; ++i) records.push_back(rec("a" + std::to_string(i), 40.0 + i * step * 0.1, -75.0));
  records.push_back(rec("far", 40.001, -75.0));
  const auto stacks = greedy_cluster(records);
  REQUIRE(stacks.size() == 3);
  CHECK(stacks[0].frames.size() == 8);
  CHECK(stacks[0].frames.front().id == "a0");
  CHECK(stacks[1].frames.size() == 2);
  CHECK(stacks[2].singleton());
  CHECK(stacks[2].frames.front().id == "far");
}

TEST_CASE("clustering requires closeness to every member") {
  const double m = 1.0 / meters_per_degree();
  // b is within radius of a, c within radius of b but not of a
  const std::vector<CaptureRecord> records{rec("a", 0.0, 0.0), rec("b", 0.3 * m, 0.0), rec("c", 0.6 * m, 0.0)};
  const auto stacks = greedy_cluster(records);
  REQUIRE(stacks.size() == 2);
  CHECK(stacks[0].frames.size() == 2);
  CHECK(stacks[1].frames.front().id == "c");
}

TEST_CASE("manifest round trip") {
  std::vector<StackSkeleton> stacks{{"s0", {rec("x", 1.0, 2.0, 33.0), rec("y", 1.0, 2.0, -5.5)}},
                                    {"s1", {rec("z", -3.0, 4.0)}}};
  CHECK(manifest_from_json(manifest_to_json(stacks)) == stacks);
  const auto path = fs::temp_directory_path() / "tli_test_manifest.json";
  write_manifest(path, stacks);
  CHECK(read_manifest(path) == stacks);
  fs::remove(path);
}

TEST_CASE("manifest schema violations are data errors") {
  CHECK_THROWS_AS(manifest_from_json(nlohmann::json::array()), DataError);
  auto j = manifest_to_json({{"s0", {rec("x", 1.0, 2.0)}}});
  j["stacks"][0]["frames"][0].erase("lat");
  CHECK_THROWS_AS(manifest_from_json(j), DataError);
  auto bad = manifest_to_json({{"s0", {rec("x", 1.0, 2.0)}}});
  bad["stacks"][0]["frames"][0]["lat"] = 95.0;
  CHECK_THROWS_AS(manifest_from_json(bad), DataError);
}

TEST_CASE("records accept both wrappers") {
  const nlohmann::json arr = nlohmann::json::array(
      {{{"id", "q"}, {"path", "q.png"}, {"lat", 1.0}, {"lon", 1.0}, {"heading_deg", 0.0}, {"timestamp_utc", 5.0}}});
  CHECK(records_from_json(arr).size() == 1);
  CHECK(records_from_json({{"records", arr}}).size() == 1);
  CHECK_THROWS_AS(records_from_json(nlohmann::json(3)), DataError);
}

TEST_CASE("load_stack resamples and canonicalizes heading") {
  const auto dir = fs::temp_directory_path() / "tli_test_load";
  fs::create_directories(dir);
  Image p(240, 80, 3);
  Rng rng(9);
  for (double& v : p.data()) v = rng.uniform_int(0, 255) / 255.0;
  write_png(dir / "h0.png", p);
  write_png(dir / "h90.png", p);
  StackSkeleton sk{"s", {rec("h0", 0.0, 0.0, 0.0), rec("h90", 0.0, 0.0, 90.0)}};
  const Stack s = load_stack(sk, 240, 80, dir);
  REQUIRE(s.size() == 2);
  CHECK(s.frames[0] == p);
  // heading 90 degrees moves content by a quarter turn
  CHECK(s.frames[1] == shift_columns(p, 60));

  const Stack small = load_stack(sk, 120, 40, dir);
  CHECK(small.frames[0].width() == 120);
  CHECK(small.frames[0].at(0, 0, 0) ==
        doctest::Approx((p.at(0, 0, 0) + p.at(0, 0, 1) + p.at(0, 1, 0) + p.at(0, 1, 1)) / 4.0));
  fs::remove_all(dir);
}

TEST_CASE("missing frame file names the frame") {
  StackSkeleton sk{"s", {rec("ghost_frame", 0.0, 0.0)}};
  try {
    load_stack(sk, 240, 80, fs::temp_directory_path() / "tli_nowhere");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("ghost_frame") != std::string::npos);
  }
}
