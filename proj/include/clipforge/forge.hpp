#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clipforge/backend.hpp"
#include "clipforge/losses.hpp"

#include "json.hpp"

namespace clipforge {

enum class InitMode { from_image, uniform_noise };

const char* to_string(InitMode m);
InitMode init_mode_from_string(const std::string& s);

struct OptimizerConfig {
  double learning_rate = 7.0;  // full-scale default; toy-backend runs want far smaller
  double momentum = 0.5;
  std::int64_t iterations = 1000;
  LossWeights weights;
  Bounds bounds;
  std::uint64_t seed = 1234;
  InitMode init_mode = InitMode::from_image;

  void validate() const;
  nlohmann::json to_json() const;
  static OptimizerConfig from_json(const nlohmann::json& j);
};

// Per-iteration trace of one forging run. The trace has iterations + 1
// entries (an evaluation at iteration 0 plus one per step) unless the run
// diverged, in which case it stops at the last finite state and
// `diverged_at` holds the offending step index.
struct RunRecord {
  std::vector<LossBreakdown> trace;
  ImageTensor initial_image;
  ImageTensor final_image;
  OptimizerConfig config;
  std::vector<std::string> prompts;
  std::string label;  // e.g. "run", an ablation arm, or a sweep cell id
  double duration_seconds = 0.0;
  std::optional<std::int64_t> diverged_at;

  double initial_mean_sim() const;
  double final_mean_sim() const;
  // Deterministic serialization: losses, sims and config only. Pixels go to
  // PNG and wall-clock time goes to the log, never into the record file.
  nlohmann::json to_json() const;
};

// Classical-momentum SGD (v <- m*v - lr*grad; x <- x + v; v0 = 0) minimizing
// the tripartite loss. Deterministic given (backend, init, prompts, cfg).
RunRecord forge_image(const EncoderBackend& backend, const ImageTensor& init,
                      const PromptSet& prompts, const OptimizerConfig& cfg);

// One matching prompt/image pair to dominate.
struct MasterPair {
  std::string prompt;
  ImageTensor image;
};

struct MasterCheckResult {
  std::vector<double> margins;     // s(x_fo, c_k) - s(x_k, c_k)
  std::vector<bool> exceeded;      // margin_k > 0
  bool satisfied = false;          // all margins positive

  nlohmann::json to_json() const;
};

MasterCheckResult check_master(const EncoderBackend& backend, const ImageTensor& x_fo,
                               const std::vector<MasterPair>& pairs);

struct SweepCell {
  double lower = 0.0;
  double upper = 0.0;
  double mean_final_score = 0.0;
  std::string run_id;
  bool ok = false;
  std::string error;
  RunRecord record;  // valid only when ok
};

struct SweepSurface {
  std::vector<SweepCell> cells;  // row-major over (grid_lower x grid_upper)
};

// One independent forging run per grid cell, identical config apart from the
// bounds. Cells are embarrassingly parallel; results are aggregated in grid
// order regardless of worker scheduling. Per-cell failures are recorded and
// the sweep continues.
SweepSurface bound_sweep(const EncoderBackend& backend, const ImageTensor& init,
                         const PromptSet& prompts, const OptimizerConfig& cfg,
                         const std::vector<double>& grid_lower,
                         const std::vector<double>& grid_upper, int workers = 1);

inline constexpr std::array<const char*, 4> kAblationArms = {
    "full", "no_pixel_guard", "no_variance", "alignment_only"};

// Four runs from the same seed and init, differing only in zeroed weights.
// Disabled terms are still evaluated and recorded (observed, not optimized).
std::array<RunRecord, 4> ablate(const EncoderBackend& backend, const ImageTensor& init,
                                const PromptSet& prompts, const OptimizerConfig& cfg);

}  // namespace clipforge
