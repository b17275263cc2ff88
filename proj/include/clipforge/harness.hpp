#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "clipforge/detect.hpp"
#include "clipforge/forge.hpp"

#include "json.hpp"

namespace clipforge {

enum class ExperimentKind { forge, sweep, ablate, detect, calibrate, gradcheck };

const char* to_string(ExperimentKind k);
ExperimentKind experiment_kind_from_string(const std::string& s);

struct SyntheticCalibrationSpec {
  int count = 200;
  double forged_drop = 0.632;
  double original_drop = 0.085;
  double jitter_sigma = 0.05;
};

// One experiment invocation, loadable from JSON. All randomness flows from
// optimizer.seed through named streams (see rng.hpp).
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::forge;
  std::string backend_path;
  std::vector<std::string> prompts;  // inline prompts, or:
  std::string prompts_file;
  std::string init_image;  // PNG path; required when init_mode == from_image
  OptimizerConfig optimizer;
  std::string out_dir = "runs";
  int workers = 1;

  // sweep
  std::vector<double> grid_lower;
  std::vector<double> grid_upper;

  // detect / calibrate (image mode): CSV manifest (image_path, label, prompt_set_id)
  std::string manifest;
  std::optional<DetectionThresholds> thresholds;
  std::string thresholds_file;

  // calibrate (synthetic mode)
  std::optional<SyntheticCalibrationSpec> synthetic;
  int calibration_grid = 200;

  // gradcheck
  int gradcheck_images = 20;
  double gradcheck_epsilon = 1e-3;
  double gradcheck_tolerance = 1e-3;

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig from_json_file(const std::string& path);
  nlohmann::json to_json() const;

  // Returns every problem found, in a stable order; never touches the
  // filesystem beyond existence/permission probes.
  std::vector<std::string> validate() const;
};

struct ReportBundle {
  std::string run_dir;
  nlohmann::json summary;
};

// Validates, loads every referenced input, then creates
//   <out>/<kind>-<seed>-<timestamp>/{config.json, images/, records/, tables/}
// and dispatches on kind. An invalid config performs zero filesystem writes.
// Re-running an identical config on the toy backend reproduces byte-identical
// CSV/JSON outputs (wall-clock time never enters the files).
ReportBundle run_experiment(const ExperimentConfig& cfg);

struct ManifestEntry {
  std::string image_path;
  bool tampered = false;
  std::string prompt_set_id;
};

std::vector<ManifestEntry> read_manifest(const std::string& path);

// Two-column CSV (score_original_domain, score_gray_domain), one row per
// image, input order preserved.
std::string emit_density_data(const std::vector<std::pair<double, double>>& pairs);

// Long-format CSV (prompt, method, score); scores indexed [prompt][method].
std::string emit_heatmap_data(const std::vector<std::string>& prompts,
                              const std::vector<std::string>& methods,
                              const std::vector<std::vector<double>>& scores);

// Post-processing over finished run directories: gathers forge-family records
// into score/heatmap tables, merges density tables from detect runs, and
// copies confusion matrices from calibration records.
ReportBundle build_report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

// Shortest round-trip decimal form; canonical for every CSV cell.
std::string format_double(double v);

std::string csv_escape(const std::string& field);

}  // namespace clipforge
