#include "clipforge/forge.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "clipforge/error.hpp"
#include "clipforge/parallel.hpp"

namespace clipforge {

using nlohmann::json;

const char* to_string(InitMode m) {
  return m == InitMode::from_image ? "from_image" : "uniform_noise";
}

InitMode init_mode_from_string(const std::string& s) {
  if (s == "from_image") return InitMode::from_image;
  if (s == "uniform_noise") return InitMode::uniform_noise;
  fail_invalid("unknown init mode '" + s + "' (expected from_image or uniform_noise)");
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    fail_invalid("optimizer: learning_rate must be finite and > 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) fail_invalid("optimizer: momentum must be in [0, 1)");
  if (iterations < 0) fail_invalid("optimizer: iterations must be >= 0");
  weights.validate();
  bounds.validate();
}

json OptimizerConfig::to_json() const {
  return json{{"learning_rate", learning_rate},
              {"momentum", momentum},
              {"iterations", iterations},
              {"alpha", weights.alpha},
              {"beta", weights.beta},
              {"bounds", {{"lower", bounds.lower}, {"upper", bounds.upper}}},
              {"seed", seed},
              {"init_mode", to_string(init_mode)}};
}

OptimizerConfig OptimizerConfig::from_json(const json& j) {
  OptimizerConfig cfg;
  if (j.contains("learning_rate")) cfg.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("momentum")) cfg.momentum = j.at("momentum").get<double>();
  if (j.contains("iterations")) cfg.iterations = j.at("iterations").get<std::int64_t>();
  if (j.contains("alpha")) cfg.weights.alpha = j.at("alpha").get<double>();
  if (j.contains("beta")) cfg.weights.beta = j.at("beta").get<double>();
  if (j.contains("bounds")) {
    cfg.bounds.lower = j.at("bounds").at("lower").get<double>();
    cfg.bounds.upper = j.at("bounds").at("upper").get<double>();
  }
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("init_mode")) cfg.init_mode = init_mode_from_string(j.at("init_mode").get<std::string>());
  return cfg;
}

namespace {
json breakdown_to_json(const LossBreakdown& b) {
  return json{{"align", b.align},
              {"var", b.var},
              {"pixel", b.pixel},
              {"total", b.total},
              {"sims", b.per_prompt_sims}};
}
}  // namespace

double RunRecord::initial_mean_sim() const {
  if (trace.empty()) fail(ErrorCode::runtime, "run record has an empty trace");
  return -trace.front().align;
}

double RunRecord::final_mean_sim() const {
  if (trace.empty()) fail(ErrorCode::runtime, "run record has an empty trace");
  return -trace.back().align;
}

json RunRecord::to_json() const {
  json t = json::array();
  for (const auto& b : trace) t.push_back(breakdown_to_json(b));
  json j{{"kind", "forge_run"},
         {"label", label},
         {"config", config.to_json()},
         {"prompts", prompts},
         {"trace", std::move(t)},
         {"initial_mean_sim", initial_mean_sim()},
         {"final_mean_sim", final_mean_sim()}};
  if (diverged_at) j["diverged_at"] = *diverged_at;
  return j;
}

RunRecord forge_image(const EncoderBackend& backend, const ImageTensor& init,
                      const PromptSet& prompts, const OptimizerConfig& cfg) {
  cfg.validate();
  backend.check_image(init);

  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<UnitEmbedding> texts = encode_prompts(backend, prompts);

  RunRecord rec;
  rec.config = cfg;
  rec.prompts = prompts.items();
  rec.label = "run";
  rec.initial_image = init;

  ImageTensor x = init;
  ImageTensor velocity(x.height(), x.width());

  LossBreakdown breakdown;
  ImageTensor grad =
      loss_pixel_gradient(backend, x, texts, cfg.bounds, cfg.weights, &breakdown);
  rec.trace.push_back(breakdown);

  for (std::int64_t step = 1; step <= cfg.iterations; ++step) {
    ImageTensor candidate = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
      velocity.data()[i] = cfg.momentum * velocity.data()[i] - cfg.learning_rate * grad.data()[i];
      candidate.data()[i] += velocity.data()[i];
    }
    if (!candidate.all_finite()) {
      rec.diverged_at = step;
      break;
    }
    ImageTensor next_grad;
    try {
      next_grad = loss_pixel_gradient(backend, candidate, texts, cfg.bounds, cfg.weights, &breakdown);
    } catch (const Error& e) {
      fail(e.code(), "forge: backend failure at iteration " + std::to_string(step) + ": " + e.what());
    }
    if (!breakdown.finite()) {
      // Divergence: keep the last finite state and stop.
      rec.diverged_at = step;
      break;
    }
    x = std::move(candidate);
    grad = std::move(next_grad);
    rec.trace.push_back(breakdown);
  }

  rec.final_image = std::move(x);
  rec.duration_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

json MasterCheckResult::to_json() const {
  return json{{"kind", "master_check"},
              {"margins", margins},
              {"exceeded", exceeded},
              {"satisfied", satisfied}};
}

MasterCheckResult check_master(const EncoderBackend& backend, const ImageTensor& x_fo,
                               const std::vector<MasterPair>& pairs) {
  if (pairs.empty()) fail_invalid("check_master: empty pair list");
  backend.check_image(x_fo);
  const UnitEmbedding g_fo = normalize(backend.encode_image(x_fo));

  MasterCheckResult res;
  res.margins.reserve(pairs.size());
  res.exceeded.reserve(pairs.size());
  for (const auto& pair : pairs) {
    backend.check_image(pair.image);
    const UnitEmbedding f = normalize(backend.encode_text(pair.prompt));
    const UnitEmbedding g_k = normalize(backend.encode_image(pair.image));
    const double margin = clip_score(g_fo, f) - clip_score(g_k, f);
    res.margins.push_back(margin);
    res.exceeded.push_back(margin > 0.0);
  }
  res.satisfied = std::all_of(res.exceeded.begin(), res.exceeded.end(), [](bool b) { return b; });
  return res;
}

SweepSurface bound_sweep(const EncoderBackend& backend, const ImageTensor& init,
                         const PromptSet& prompts, const OptimizerConfig& cfg,
                         const std::vector<double>& grid_lower,
                         const std::vector<double>& grid_upper, int workers) {
  if (grid_lower.empty() || grid_upper.empty()) fail_invalid("bound_sweep: empty grid");
  for (double lo : grid_lower) {
    if (!(lo >= -1.0 && lo <= 0.0)) fail_invalid("bound_sweep: grid_lower values must lie in [-1, 0]");
  }
  for (double up : grid_upper) {
    if (!(up >= 0.0 && up <= 1.0)) fail_invalid("bound_sweep: grid_upper values must lie in [0, 1]");
  }
  cfg.validate();
  backend.check_image(init);

  SweepSurface surface;
  surface.cells.resize(grid_lower.size() * grid_upper.size());
  const int effective_workers = backend.thread_safe() ? workers : 1;

  parallel_for(surface.cells.size(), effective_workers, [&](std::size_t idx) {
    const std::size_t li = idx / grid_upper.size();
    const std::size_t ui = idx % grid_upper.size();
    SweepCell& cell = surface.cells[idx];
    cell.lower = grid_lower[li];
    cell.upper = grid_upper[ui];
    char id[32];
    std::snprintf(id, sizeof(id), "cell-%03zu", idx);
    cell.run_id = id;
    try {
      OptimizerConfig cell_cfg = cfg;
      cell_cfg.bounds = Bounds{cell.lower, cell.upper};
      cell.record = forge_image(backend, init, prompts, cell_cfg);
      cell.record.label = cell.run_id;
      cell.mean_final_score = cell.record.final_mean_sim();
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.error = e.what();
    }
  });
  return surface;
}

std::array<RunRecord, 4> ablate(const EncoderBackend& backend, const ImageTensor& init,
                                const PromptSet& prompts, const OptimizerConfig& cfg) {
  cfg.validate();
  std::array<RunRecord, 4> runs;
  for (std::size_t arm = 0; arm < kAblationArms.size(); ++arm) {
    OptimizerConfig arm_cfg = cfg;
    if (arm == 1 || arm == 3) arm_cfg.weights.beta = 0.0;   // drop the pixel guard
    if (arm == 2 || arm == 3) arm_cfg.weights.alpha = 0.0;  // drop the variance term
    runs[arm] = forge_image(backend, init, prompts, arm_cfg);
    runs[arm].label = kAblationArms[arm];
  }
  return runs;
}

}  // namespace clipforge
