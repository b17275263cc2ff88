#include "clipforge/detect.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "clipforge/error.hpp"
#include "clipforge/rng.hpp"

namespace clipforge {

using nlohmann::json;

void DetectionThresholds::validate() const {
  if (!(tau1 > 0.0) || !std::isfinite(tau1)) fail_invalid("thresholds: tau1 must be finite and > 0");
  if (!(tau2 > 0.0) || !std::isfinite(tau2)) fail_invalid("thresholds: tau2 must be finite and > 0");
  if (theta && (!(*theta >= 0.0) || !std::isfinite(*theta))) {
    fail_invalid("thresholds: theta must be finite and >= 0 when set");
  }
}

json DetectionThresholds::to_json() const {
  json j{{"tau1", tau1}, {"tau2", tau2}};
  if (theta) j["theta"] = *theta;
  return j;
}

DetectionThresholds DetectionThresholds::from_json(const json& j) {
  DetectionThresholds t;
  t.tau1 = j.at("tau1").get<double>();
  t.tau2 = j.at("tau2").get<double>();
  if (j.contains("theta") && !j.at("theta").is_null()) t.theta = j.at("theta").get<double>();
  t.validate();
  return t;
}

DetectionThresholds DetectionThresholds::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open threshold file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::io, std::string("threshold file is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

json DetectionVerdict::to_json() const {
  json j{{"d", d}, {"s", s}, {"ratio", ratio}, {"flagged", flagged}, {"deltas", per_prompt_deltas}};
  if (degenerate_score) j["degenerate_score"] = true;
  return j;
}

double SensitivityResult::mean_gray_score() const {
  double acc = 0.0;
  for (double v : sims_gray) acc += v;
  return sims_gray.empty() ? 0.0 : acc / static_cast<double>(sims_gray.size());
}

SensitivityResult grayscale_sensitivity(const EncoderBackend& backend, const ImageTensor& x,
                                        const std::vector<UnitEmbedding>& texts) {
  if (texts.empty()) fail_invalid("grayscale_sensitivity: needs at least one prompt embedding");
  backend.check_image(x);

  const UnitEmbedding g = normalize(backend.encode_image(x));
  const ImageTensor gray = grayscale(x, backend.descriptor().preprocess);
  const UnitEmbedding g_gray = normalize(backend.encode_image(gray));

  SensitivityResult res;
  res.sims_original.reserve(texts.size());
  res.sims_gray.reserve(texts.size());
  res.deltas.reserve(texts.size());
  double sum_d = 0.0;
  double sum_s = 0.0;
  for (const auto& f : texts) {
    const double so = clip_score(g, f);
    const double sg = clip_score(g_gray, f);
    res.sims_original.push_back(so);
    res.sims_gray.push_back(sg);
    res.deltas.push_back(std::abs(so - sg));
    sum_d += res.deltas.back();
    sum_s += so;
  }
  res.d = sum_d / static_cast<double>(texts.size());
  res.s = sum_s / static_cast<double>(texts.size());
  return res;
}

SensitivityResult grayscale_sensitivity(const EncoderBackend& backend, const ImageTensor& x,
                                        const PromptSet& prompts) {
  return grayscale_sensitivity(backend, x, encode_prompts(backend, prompts));
}

DetectionVerdict detect(double d, double s, const DetectionThresholds& thresholds,
                        std::vector<double> per_prompt_deltas) {
  thresholds.validate();
  if (!std::isfinite(d) || d < 0.0) fail_invalid("detect: d must be finite and >= 0");
  if (!std::isfinite(s)) fail_invalid("detect: s must be finite");

  DetectionVerdict v;
  v.d = d;
  v.s = s;
  v.per_prompt_deltas = std::move(per_prompt_deltas);
  if (std::abs(s) < kScoreFloor) {
    v.degenerate_score = true;
    v.ratio = 0.0;
    v.flagged = false;
    return v;
  }
  v.ratio = d / s;
  v.flagged = d > thresholds.tau1 && v.ratio > thresholds.tau2 &&
              (!thresholds.theta || s > *thresholds.theta);
  return v;
}

double ConfusionMatrix::accuracy() const {
  const std::int64_t n = total();
  return n == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(n);
}

double ConfusionMatrix::precision() const {
  const std::int64_t denom = tp + fp;
  return denom == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(denom);
}

double ConfusionMatrix::recall() const {
  const std::int64_t denom = tp + fn;
  return denom == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(denom);
}

json ConfusionMatrix::to_json() const {
  return json{{"tp", tp},       {"fp", fp},
              {"tn", tn},       {"fn", fn},
              {"accuracy", accuracy()}, {"precision", precision()},
              {"recall", recall()}};
}

ConfusionMatrix confusion(const std::vector<bool>& flagged, const std::vector<bool>& tampered) {
  if (flagged.size() != tampered.size()) fail_invalid("confusion: verdict/label length mismatch");
  ConfusionMatrix m;
  for (std::size_t i = 0; i < flagged.size(); ++i) {
    if (tampered[i]) {
      flagged[i] ? ++m.tp : ++m.fn;
    } else {
      flagged[i] ? ++m.fp : ++m.tn;
    }
  }
  return m;
}

ConfusionMatrix confusion(const std::vector<DetectionVerdict>& verdicts,
                          const std::vector<bool>& tampered) {
  std::vector<bool> flagged;
  flagged.reserve(verdicts.size());
  for (const auto& v : verdicts) flagged.push_back(v.flagged);
  return confusion(flagged, tampered);
}

namespace {

struct SampleEval {
  double d = 0.0;
  double ratio = 0.0;
  bool tampered = false;
  bool degenerate = false;
};

// Signed distance to the closest thresholds that would change this sample's
// classification. Positive means correctly classified.
double margin(const SampleEval& e, double tau1, double tau2) {
  if (e.degenerate) {
    // Never flagged, whatever the thresholds.
    return e.tampered ? -std::numeric_limits<double>::infinity()
                      : std::numeric_limits<double>::infinity();
  }
  if (e.tampered) return std::min(e.d - tau1, e.ratio - tau2);
  return std::max(tau1 - e.d, tau2 - e.ratio);
}

}  // namespace

CalibrationResult calibrate_thresholds(const std::vector<LabeledStats>& samples, int grid_cells) {
  if (grid_cells < 2) fail_invalid("calibrate: grid must have at least 2 cells per axis");
  bool any_pos = false;
  bool any_neg = false;
  for (const auto& s : samples) (s.tampered ? any_pos : any_neg) = true;
  if (!any_pos || !any_neg) {
    fail_invalid("calibrate: need at least one tampered and one original sample");
  }

  std::vector<SampleEval> evals;
  evals.reserve(samples.size());
  double d_min = std::numeric_limits<double>::infinity();
  double d_max = -d_min;
  double r_min = d_min;
  double r_max = -d_min;
  for (const auto& s : samples) {
    if (!std::isfinite(s.d) || s.d < 0.0 || !std::isfinite(s.s)) {
      fail_invalid("calibrate: samples must have finite d >= 0 and finite s");
    }
    SampleEval e;
    e.d = s.d;
    e.tampered = s.tampered;
    if (std::abs(s.s) < kScoreFloor) {
      e.degenerate = true;
    } else {
      e.ratio = s.d / s.s;
      r_min = std::min(r_min, e.ratio);
      r_max = std::max(r_max, e.ratio);
    }
    d_min = std::min(d_min, s.d);
    d_max = std::max(d_max, s.d);
    evals.push_back(e);
  }
  if (!std::isfinite(r_min)) fail_invalid("calibrate: every sample has a degenerate score");

  // Thresholds must stay positive (strict rule); the grid floor guards the
  // degenerate d_min == 0 case.
  const auto axis_value = [grid_cells](double lo, double hi, int i) {
    const double t = static_cast<double>(i) / static_cast<double>(grid_cells - 1);
    return std::max(lo + (hi - lo) * t, 1e-12);
  };

  double best_acc = -1.0;
  double best_margin = -std::numeric_limits<double>::infinity();
  DetectionThresholds best{1e-12, 1e-12, std::nullopt};
  const double n = static_cast<double>(evals.size());
  for (int i = 0; i < grid_cells; ++i) {
    const double tau1 = axis_value(d_min, d_max, i);
    for (int j = 0; j < grid_cells; ++j) {
      const double tau2 = axis_value(r_min, r_max, j);
      std::int64_t correct = 0;
      double worst = std::numeric_limits<double>::infinity();
      for (const auto& e : evals) {
        const bool flagged = !e.degenerate && e.d > tau1 && e.ratio > tau2;
        if (flagged == e.tampered) ++correct;
        worst = std::min(worst, margin(e, tau1, tau2));
      }
      const double acc = static_cast<double>(correct) / n;
      const bool better =
          acc > best_acc ||
          (acc == best_acc &&
           (worst > best_margin || (worst == best_margin && tau1 < best.tau1)));
      if (better) {
        best_acc = acc;
        best_margin = worst;
        best = DetectionThresholds{tau1, tau2, std::nullopt};
      }
    }
  }

  std::vector<bool> flagged;
  std::vector<bool> tampered;
  flagged.reserve(evals.size());
  tampered.reserve(evals.size());
  for (const auto& e : evals) {
    flagged.push_back(!e.degenerate && e.d > best.tau1 && e.ratio > best.tau2);
    tampered.push_back(e.tampered);
  }

  CalibrationResult res;
  res.thresholds = best;
  res.matrix = confusion(flagged, tampered);
  res.accuracy = best_acc;
  res.grid_cells = grid_cells;
  return res;
}

std::vector<LabeledStats> synthetic_drop_stats(std::uint64_t seed, int count, double forged_drop,
                                               double original_drop, double jitter_sigma) {
  if (count < 2) fail_invalid("synthetic_drop_stats: count must be at least 2");
  Rng rng = make_stream(seed, "calibration-jitter");
  std::vector<LabeledStats> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    LabeledStats s;
    s.tampered = (i % 2 == 0);
    // Forged scores sit high (the attack's whole point); originals live where
    // well-matched natural pairs do.
    s.s = s.tampered ? rng.uniform(0.45, 0.70) : rng.uniform(0.20, 0.35);
    const double mean_drop = s.tampered ? forged_drop : original_drop;
    const double drop = std::clamp(rng.normal(mean_drop, jitter_sigma), 0.0, 1.0);
    s.d = drop * s.s;
    out.push_back(s);
  }
  return out;
}

}  // namespace clipforge
