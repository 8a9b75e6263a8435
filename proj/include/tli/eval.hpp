#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tli/align.hpp"
#include "tli/intrinsics.hpp"
#include "tli/synth.hpp"

namespace tli::eval {

inline constexpr int kReportSchemaVersion = 1;

enum class Method { Weiss, Bicolor, Monocolor, PixelNn };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Results are
/// stored by index, so the output does not depend on scheduling.
template <class T>
std::vector<T> parallel_map(std::size_t count, int threads, const std::function<T(std::size_t)>& fn) {
  std::vector<T> out(count);
  const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) {
        try {
          out[i] = fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

struct ConsistencyResult {
  double swap_mse = 0.0;  // reconstruction with the other substack's reflectance
  double own_mse = 0.0;   // reconstruction with the substack's own reflectance
};

/// Splits an 8-frame stack into frames 0-3 and 4-7, fits each half and
/// reconstructs every frame from its own shading and the other half's
/// reflectance. pixel_nn instead uses the closest frame of the other half.
ConsistencyResult scene_consistency(const Stack& stack, Method method, const FitConfig& fit = {},
                                    const GammaParams& gamma = {});

/// Per-frame parametric shading: log S_c(x) = a_c + ln(1 + rho M(x)) + b_c M(x).
struct IlluminationFit {
  std::array<double, 3> a{};
  std::array<double, 3> b{};
  double rho = 0.0;
  double residual = 0.0;  // mean squared residual over fitted pixels
};

/// Least-squares fit of the parametric shading to a 3-channel log shading
/// given the sun mask; pixels with weight 0 are ignored. A warm start narrows
/// the search over rho to its neighbourhood.
IlluminationFit fit_illumination(const Image& log_shading, const Image& mask, const Image& weight,
                                 const IlluminationFit* warm_start = nullptr);
Image illumination_shading(const IlluminationFit& f, const Image& mask);

/// Azimuth point estimate (circular mean of the estimator's distribution).
double estimate_sun_azimuth(const Panorama& p);

struct CompletionResult {
  double transfer_mse = 0.0;
  double pixel_nn_mse = 0.0;
  std::vector<std::size_t> donor_rows;
  double estimated_azimuth = 0.0;
  double true_azimuth = 0.0;
};

/// Reconstructs grid cell (row, col) without looking at it. The other rows
/// are factorized and their shadings fitted with the parametric model; the
/// change of illumination between another time and the withheld one is then
/// applied to the row's frame at that time. Sun masks of the withheld row
/// come from the renderer's shadow oracle at the estimated azimuth.
CompletionResult spacetime_completion(const synth::SpaceTimeGrid& grid, std::size_t row, std::size_t col,
                                      const FitConfig& fit = {}, const GammaParams& gamma = {});

struct RelightResult {
  Panorama relit;
  Panorama ground_truth;
  double mse = 0.0;
};

/// Relights frame `frame` of a fitted synthetic stack to a new sun azimuth.
/// The stack's shadings are fitted with the parametric model (oracle masks at
/// the known azimuths) and the frame's fitted shading is corrected by the
/// model's change from the original to the new mask.
RelightResult relight_azimuth(const synth::SynthScene& scene, const synth::SynthStack& stack,
                              const Decomposition& fit, std::size_t frame, double new_azimuth,
                              const GammaParams& gamma = {});

/// Relights frame `frame` with the illumination of another fitted scene:
/// donor frames `donor_same_time` and `donor_new_time` were captured under
/// the frame's own illumination and under the target one. Azimuths are
/// estimated from the panoramas.
RelightResult relight_donor(const synth::SynthScene& scene, const synth::SynthStack& stack,
                            const Decomposition& fit, std::size_t frame, const synth::SynthScene& donor_scene,
                            const synth::SynthStack& donor_stack, const Decomposition& donor_fit,
                            std::size_t donor_same_time, std::size_t donor_new_time, const GammaParams& gamma = {});

struct AlignmentInstance {
  double epe_before = 0.0;
  double epe_after = 0.0;
  double variance_before = 0.0;
  double variance_after = 0.0;
  double loss_before = 0.0;
  double loss_after = 0.0;
};

AlignmentInstance alignment_bench(const synth::SynthStack& stack, const AlignConfig& cfg);

struct EvalReport {
  std::string protocol;
  std::string metric;  // what `results` holds, e.g. "srgb_mse"
  std::vector<std::string> methods;
  std::map<std::string, double> results;  // aggregate per method, >= 0
  nlohmann::json summary = nlohmann::json::object();
  nlohmann::json instances = nlohmann::json::array();
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> notes;
};

nlohmann::json report_to_json(const EvalReport& r);
/// Schema violations of a report document; empty when valid.
std::vector<std::string> validate_report(const nlohmann::json& j);
/// Rows are methods, columns are the protocols of the given reports.
std::string table_csv(const std::vector<EvalReport>& reports);

struct ProtocolOptions {
  std::uint64_t seed = 7;
  int stacks = 20;
  int grid_rows = 3;
  int grid_cols = 4;
  int width = 240;
  int height = 80;
  int threads = 1;
  FitConfig fit;
  AlignConfig align;
  double jitter = 3.0;
  int panoramas = 100;      // azimuth protocol
  int varying_stacks = 2;   // alignment protocol: stacks with per-frame illumination
  GammaParams gamma;

  nlohmann::json to_json() const;
};

/// Synthetic corpora used by the protocols (deterministic in the seed).
std::vector<synth::SynthStack> consistency_corpus(const ProtocolOptions& o);
synth::SpaceTimeGrid completion_grid(const ProtocolOptions& o);
/// Jittered stacks; the last `varying_stacks` change illumination per frame.
std::vector<synth::SynthStack> alignment_corpus(const ProtocolOptions& o);

EvalReport run_consistency(const std::vector<synth::SynthStack>& corpus, const ProtocolOptions& o);
EvalReport run_completion(const synth::SpaceTimeGrid& grid, const ProtocolOptions& o);
/// Fixed-illumination stacks are aligned in RGB mode; stacks whose frames
/// differ in illumination are aligned in both modes.
EvalReport run_alignment(const std::vector<synth::SynthStack>& corpus, const ProtocolOptions& o);
/// Renders `panoramas` random scenes/illuminations and scores the estimator.
EvalReport run_azimuth(const ProtocolOptions& o);
EvalReport run_azimuth(const std::vector<Panorama>& panos, const std::vector<double>& truth,
                       const ProtocolOptions& o);

}  // namespace tli::eval
