#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "tli/cli.hpp"
#include "tli/eval.hpp"
#include "tli/io.hpp"

using namespace tli;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "tli_cli_test" / name;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

int run(std::vector<std::string> args) { return cli::dispatch(args); }

json artifacts(const fs::path& run_manifest) { return io::read_json(run_manifest)["artifacts"]; }

std::vector<std::string> synth_args(const fs::path& out, int threads) {
  return {"synth", "--out", out.string(), "--resolution", "120x40", "--scenes", "2", "--times", "8",
          "--jitter", "1", "--seed", "3", "--threads", std::to_string(threads)};
}

// One synthetic corpus shared by the tests that only read it.
const fs::path& corpus() {
  static const fs::path dir = [] {
    const fs::path d = scratch("corpus");
    REQUIRE(run(synth_args(d, 1)) == cli::kExitOk);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(run({"frobnicate", "--out", "x"}) == cli::kExitUsage);
  CHECK(run({}) == cli::kExitUsage);
  CHECK(run({"align", "--out", scratch("u").string()}) == cli::kExitUsage);
  CHECK(run({"synth"}) == cli::kExitUsage);
  CHECK(run({"synth", "--out", scratch("u2").string(), "--resolution", "100x40"}) != cli::kExitOk);
  CHECK(run({"--version"}) == cli::kExitOk);
}

TEST_CASE("synth is reproducible and independent of the thread count") {
  const auto a = scratch("synth_a"), b = scratch("synth_b");
  REQUIRE(run(synth_args(a, 1)) == cli::kExitOk);
  REQUIRE(run(synth_args(b, 2)) == cli::kExitOk);
  const json ha = artifacts(a / "run_manifest.json"), hb = artifacts(b / "run_manifest.json");
  CHECK(ha == hb);
  CHECK(ha == artifacts(corpus() / "run_manifest.json"));
  CHECK(ha.contains("panos/s1_t7.png"));
  CHECK(ha.contains("manifest.json"));
}

TEST_CASE("align and decompose are reproducible") {
  const fs::path manifest = corpus() / "manifest.json";
  for (const std::string& cmd : {std::string("align"), std::string("decompose")}) {
    std::vector<std::string> extra = cmd == "align" ? std::vector<std::string>{"--steps", "5"}
                                                    : std::vector<std::string>{"--iters", "5"};
    const auto a = scratch(cmd + "_a"), b = scratch(cmd + "_b");
    std::vector<std::string> args{cmd, "--manifest", manifest.string(), "--stack-id", "scene_0",
                                  "--resolution", "120x40", "--out"};
    auto with = [&](const fs::path& out, const std::string& threads) {
      auto v = args;
      v.push_back(out.string());
      v.insert(v.end(), extra.begin(), extra.end());
      v.insert(v.end(), {"--threads", threads});
      return v;
    };
    REQUIRE(run(with(a, "1")) == cli::kExitOk);
    REQUIRE(run(with(b, "2")) == cli::kExitOk);
    CHECK(artifacts(a / "run_manifest.json") == artifacts(b / "run_manifest.json"));
  }
}

TEST_CASE("a missing frame is a data error naming the frame") {
  const auto copy = scratch("broken");
  fs::copy(corpus(), copy, fs::copy_options::recursive);
  fs::remove(copy / "panos" / "s0_t3.png");
  CHECK(run({"decompose", "--manifest", (copy / "manifest.json").string(), "--stack-id", "scene_0",
             "--resolution", "120x40", "--iters", "2", "--out", scratch("broken_out").string()}) == cli::kExitData);
}

TEST_CASE("eval writes a valid report, a csv and a run manifest") {
  const auto dir = scratch("eval");
  fs::create_directories(dir);
  const auto cfg = dir / "cfg.json";
  std::ofstream(cfg) << R"({"fit": {"iterations": 5}})";
  const auto report = dir / "report.json";
  REQUIRE(run({"eval", "--protocol", "consistency", "--corpus", corpus().string(), "--resolution", "120x40",
               "--config", cfg.string(), "--csv", "table.csv", "--out", report.string()}) == cli::kExitOk);
  const json j = io::read_json(report);
  CHECK(eval::validate_report(j).empty());
  CHECK(j["config"]["fit"]["iterations"] == 5);
  CHECK(fs::exists(dir / "table.csv"));
  CHECK(fs::exists(cli::run_manifest_path("eval", report)));
}

TEST_CASE("replay reproduces a run and flags tampering") {
  const auto out = scratch("replay");
  REQUIRE(run({"decompose", "--manifest", (corpus() / "manifest.json").string(), "--stack-id", "scene_1",
               "--method", "weiss", "--resolution", "120x40", "--out", out.string()}) == cli::kExitOk);
  const fs::path rm = out / "run_manifest.json";
  const auto saved = scratch("replay_saved.json");
  fs::copy_file(rm, saved);
  CHECK(run({"replay", "--run", saved.string(), "--out", scratch("replay_again").string()}) == cli::kExitOk);
  json tampered = io::read_json(saved);
  tampered["artifacts"]["log_reflectance.f32"] = "0000";
  io::write_json(saved, tampered);
  CHECK(run({"replay", "--run", saved.string(), "--out", scratch("replay_again2").string()}) == cli::kExitData);
}

TEST_CASE("replay of an eval report keeps the report name") {
  const auto dir = scratch("replay_eval");
  fs::create_directories(dir);
  const auto report = dir / "azimuth.json";
  REQUIRE(run({"eval", "--protocol", "azimuth", "--panoramas", "6", "--resolution", "120x40", "--out",
               report.string()}) == cli::kExitOk);
  const auto again = scratch("replay_eval_again");
  CHECK(run({"replay", "--run", cli::run_manifest_path("eval", report).string(), "--out", again.string()}) ==
        cli::kExitOk);
  CHECK(fs::exists(again / "azimuth.json"));
}

TEST_CASE("config precedence: defaults, then file, then flags") {
  const auto dir = scratch("precedence");
  fs::create_directories(dir);
  const auto cfg = dir / "cfg.json";
  std::ofstream(cfg) << R"({"seed": 5, "scenes": 1, "times": 2, "resolution": "120x40"})";
  REQUIRE(run({"synth", "--config", cfg.string(), "--out", (dir / "file").string()}) == cli::kExitOk);
  const json from_file = io::read_json(dir / "file" / "run_manifest.json")["config"];
  CHECK(from_file["seed"] == 5);
  CHECK(from_file["jitter"] == 0.0);
  REQUIRE(run({"synth", "--config", cfg.string(), "--seed", "6", "--out", (dir / "flag").string()}) == cli::kExitOk);
  CHECK(io::read_json(dir / "flag" / "run_manifest.json")["config"]["seed"] == 6);

  const auto bad = dir / "bad.json";
  std::ofstream(bad) << R"({"sceens": 1})";
  CHECK(run({"synth", "--config", bad.string(), "--out", (dir / "bad").string()}) == cli::kExitUsage);
}
