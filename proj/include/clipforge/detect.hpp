#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clipforge/backend.hpp"
#include "clipforge/embedding.hpp"
#include "clipforge/image.hpp"

#include "json.hpp"

namespace clipforge {

// Below this magnitude the relative threshold is undefined and the verdict
// degrades to "not flagged" with a warning: an image nobody would mistake for
// a match cannot satisfy the high-similarity premise anyway.
inline constexpr double kScoreFloor = 1e-9;

struct DetectionThresholds {
  double tau1 = 0.1;  // absolute threshold on the sensitivity d
  double tau2 = 0.3;  // relative threshold on d / s
  std::optional<double> theta;  // optional minimum-similarity gate; disabled by default

  void validate() const;
  nlohmann::json to_json() const;
  static DetectionThresholds from_json(const nlohmann::json& j);
  static DetectionThresholds from_json_file(const std::string& path);
};

struct DetectionVerdict {
  double d = 0.0;      // grayscale sensitivity
  double s = 0.0;      // mean similarity over prompts
  double ratio = 0.0;  // d / s (0 when degenerate)
  bool flagged = false;
  bool degenerate_score = false;
  std::vector<double> per_prompt_deltas;

  nlohmann::json to_json() const;
};

struct SensitivityResult {
  double d = 0.0;
  double s = 0.0;
  std::vector<double> deltas;
  std::vector<double> sims_original;
  std::vector<double> sims_gray;

  double mean_gray_score() const;
};

// d = mean_i |s(x, c_i) - s(Gray(x), c_i)|, s = mean_i s(x, c_i). Gray uses
// the backend's preprocessing descriptor so the luma is taken in the raw
// [0,1] domain.
SensitivityResult grayscale_sensitivity(const EncoderBackend& backend, const ImageTensor& x,
                                        const std::vector<UnitEmbedding>& texts);
SensitivityResult grayscale_sensitivity(const EncoderBackend& backend, const ImageTensor& x,
                                        const PromptSet& prompts);

// Strict-inequality AND rule: flagged iff d > tau1 and d/s > tau2 and
// (theta unset or s > theta).
DetectionVerdict detect(double d, double s, const DetectionThresholds& thresholds,
                        std::vector<double> per_prompt_deltas = {});

// One scored sample for calibration.
struct LabeledStats {
  double d = 0.0;
  double s = 0.0;
  bool tampered = false;
};

struct ConfusionMatrix {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::int64_t total() const { return tp + fp + tn + fn; }
  double accuracy() const;
  double precision() const;
  double recall() const;
  nlohmann::json to_json() const;
};

ConfusionMatrix confusion(const std::vector<bool>& flagged, const std::vector<bool>& tampered);
ConfusionMatrix confusion(const std::vector<DetectionVerdict>& verdicts,
                          const std::vector<bool>& tampered);

struct CalibrationResult {
  DetectionThresholds thresholds;
  ConfusionMatrix matrix;
  double accuracy = 0.0;
  int grid_cells = 0;
};

// Exhaustive grid search over (tau1, tau2), `grid_cells` points per axis
// spanning the observed [min, max] of d and d/s. Maximizes accuracy;
// ties break on the largest worst-case margin to the nearest
// misclassification boundary, then on the smallest tau1.
CalibrationResult calibrate_thresholds(const std::vector<LabeledStats>& samples,
                                       int grid_cells = 200);

// Synthetic calibration stats mirroring reported grayscale score drops:
// forged samples lose about `forged_drop` of their score under grayscale,
// originals about `original_drop`, with gaussian jitter on the drop fraction.
// Produces `count` samples, alternating tampered/original, from the
// "calibration-jitter" stream of `seed`.
std::vector<LabeledStats> synthetic_drop_stats(std::uint64_t seed, int count,
                                               double forged_drop = 0.632,
                                               double original_drop = 0.085,
                                               double jitter_sigma = 0.05);

}  // namespace clipforge
