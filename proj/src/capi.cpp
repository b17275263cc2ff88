#include "clipforge/clipforge.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "clipforge/backend.hpp"
#include "clipforge/detect.hpp"
#include "clipforge/error.hpp"
#include "clipforge/forge.hpp"
#include "clipforge/harness.hpp"
#include "clipforge/losses.hpp"

using namespace clipforge;

struct cf_backend {
  std::unique_ptr<EncoderBackend> impl;
};
struct cf_image {
  ImageTensor tensor;
};
struct cf_prompts {
  PromptSet set;
};
struct cf_record {
  RunRecord record;
};

namespace {

thread_local std::string g_last_error;

cf_status from_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return CF_ERR_INVALID_ARGUMENT;
    case ErrorCode::io: return CF_ERR_IO;
    case ErrorCode::numeric: return CF_ERR_NUMERIC;
    case ErrorCode::runtime: return CF_ERR_RUNTIME;
  }
  return CF_ERR_RUNTIME;
}

cf_status set_error(cf_status status, const std::string& msg) {
  g_last_error = msg;
  return status;
}

// Runs fn inside the C boundary; fn returns a cf_status itself so callers can
// flag partial-success paths (divergence) while still populating outputs.
template <typename Fn>
cf_status guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    return set_error(from_code(e.code()), e.what());
  } catch (const std::exception& e) {
    return set_error(CF_ERR_RUNTIME, e.what());
  } catch (...) {
    return set_error(CF_ERR_RUNTIME, "unknown error");
  }
}

cf_status require(bool ok, const char* msg) {
  return ok ? CF_OK : set_error(CF_ERR_INVALID_ARGUMENT, msg);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) return nullptr;
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

OptimizerConfig to_optimizer(const cf_forge_params& p) {
  OptimizerConfig cfg;
  cfg.learning_rate = p.learning_rate;
  cfg.momentum = p.momentum;
  cfg.iterations = p.iterations;
  cfg.weights = LossWeights{p.alpha, p.beta};
  cfg.bounds = Bounds{p.bound_lower, p.bound_upper};
  cfg.seed = p.seed;
  cfg.init_mode = InitMode::from_image;
  return cfg;
}

cf_loss_breakdown to_c_breakdown(const LossBreakdown& b) {
  return cf_loss_breakdown{b.align, b.var, b.pixel, b.total};
}

// EncoderBackend over a caller-supplied vtable; the adapter contract any
// pretrained checkpoint satisfies to plug in.
class CustomBackend final : public EncoderBackend {
 public:
  CustomBackend(const cf_backend_vtable& vt, void* user, BackendDescriptor desc)
      : vt_(vt), user_(user), desc_(std::move(desc)) {}

  ~CustomBackend() override {
    if (vt_.destroy) vt_.destroy(user_);
  }

  const BackendDescriptor& descriptor() const override { return desc_; }
  bool thread_safe() const override { return vt_.thread_safe != 0; }

  Embedding encode_image(const ImageTensor& x) const override {
    check_image(x);
    Embedding g;
    g.v.assign(static_cast<std::size_t>(desc_.dim), 0.0);
    if (vt_.encode_image(user_, x.data().data(), x.height(), x.width(), g.v.data()) != 0) {
      fail(ErrorCode::runtime, "custom backend: encode_image failed");
    }
    return g;
  }

  Embedding encode_text(std::string_view prompt) const override {
    check_prompt(prompt);
    const std::string p = trim_prompt(prompt);
    Embedding e;
    e.v.assign(static_cast<std::size_t>(desc_.dim), 0.0);
    if (vt_.encode_text(user_, p.c_str(), e.v.data()) != 0) {
      fail(ErrorCode::runtime, "custom backend: encode_text failed");
    }
    return e;
  }

  ImageTensor image_gradient(const ImageTensor& x,
                             const std::vector<double>& cotangent) const override {
    check_image(x);
    if (cotangent.size() != static_cast<std::size_t>(desc_.dim)) {
      fail_invalid("image_gradient: cotangent dimension mismatch");
    }
    ImageTensor grad(x.height(), x.width());
    if (vt_.image_gradient(user_, x.data().data(), x.height(), x.width(), cotangent.data(),
                           grad.data().data()) != 0) {
      fail(ErrorCode::runtime, "custom backend: image_gradient failed");
    }
    return grad;
  }

 private:
  cf_backend_vtable vt_;
  void* user_;
  BackendDescriptor desc_;
};

}  // namespace

extern "C" {

const char* cf_status_name(cf_status status) {
  switch (status) {
    case CF_OK: return "ok";
    case CF_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case CF_ERR_IO: return "io";
    case CF_ERR_NUMERIC: return "numeric";
    case CF_ERR_RUNTIME: return "runtime";
  }
  return "unknown";
}

const char* cf_version(void) { return "0.1.0"; }

const char* cf_last_error(void) { return g_last_error.c_str(); }

void cf_string_free(char* s) { std::free(s); }

cf_status cf_backend_open(const char* descriptor_path, cf_backend** out) {
  if (cf_status st = require(descriptor_path && out, "cf_backend_open: null argument")) return st;
  return guarded([&]() -> cf_status {
    auto impl = load_backend(descriptor_path);
    *out = new cf_backend{std::move(impl)};
    return CF_OK;
  });
}

cf_status cf_backend_open_toy(uint64_t seed, int dim, int resolution, cf_backend** out) {
  if (cf_status st = require(out != nullptr, "cf_backend_open_toy: null out")) return st;
  return guarded([&]() -> cf_status {
    BackendDescriptor desc;
    desc.id = "toy-v1";
    desc.dim = dim;
    desc.resolution = resolution;
    desc.seed = seed;
    *out = new cf_backend{make_backend(desc)};
    return CF_OK;
  });
}

cf_status cf_backend_open_custom(const cf_backend_vtable* vtable, void* user, const char* id,
                                 int dim, int resolution, const double* shift3,
                                 const double* scale3, cf_backend** out) {
  if (cf_status st = require(vtable && id && out, "cf_backend_open_custom: null argument")) return st;
  if (cf_status st = require(vtable->encode_image && vtable->encode_text && vtable->image_gradient,
                             "cf_backend_open_custom: vtable callbacks must be set")) {
    return st;
  }
  return guarded([&]() -> cf_status {
    BackendDescriptor desc;
    desc.id = id;
    desc.dim = dim;
    desc.resolution = resolution;
    desc.seed = 0;
    for (int c = 0; c < 3; ++c) {
      if (shift3) desc.preprocess.shift[std::size_t(c)] = shift3[c];
      if (scale3) desc.preprocess.scale[std::size_t(c)] = scale3[c];
    }
    desc.validate();
    *out = new cf_backend{std::make_unique<CustomBackend>(*vtable, user, desc)};
    return CF_OK;
  });
}

void cf_backend_close(cf_backend* backend) { delete backend; }

int cf_backend_dim(const cf_backend* backend) { return backend ? backend->impl->dim() : 0; }

int cf_backend_resolution(const cf_backend* backend) {
  return backend ? backend->impl->resolution() : 0;
}

const char* cf_backend_id(const cf_backend* backend) {
  return backend ? backend->impl->id().c_str() : "";
}

cf_status cf_image_create(int height, int width, const double* data, cf_image** out) {
  if (cf_status st = require(out != nullptr, "cf_image_create: null out")) return st;
  return guarded([&]() -> cf_status {
    ImageTensor t(height, width);
    if (data) {
      std::memcpy(t.data().data(), data, t.size() * sizeof(double));
      if (!t.all_finite()) fail_invalid("cf_image_create: non-finite pixels");
    }
    *out = new cf_image{std::move(t)};
    return CF_OK;
  });
}

cf_status cf_image_clone(const cf_image* image, cf_image** out) {
  if (cf_status st = require(image && out, "cf_image_clone: null argument")) return st;
  *out = new cf_image{image->tensor};
  return CF_OK;
}

cf_status cf_image_load_png(const cf_backend* backend, const char* path, cf_image** out) {
  if (cf_status st = require(backend && path && out, "cf_image_load_png: null argument")) return st;
  return guarded([&]() -> cf_status {
    *out = new cf_image{preprocess(read_png(path), backend->impl->resolution(),
                                   backend->impl->descriptor().preprocess)};
    return CF_OK;
  });
}

cf_status cf_image_save_png(const cf_backend* backend, const cf_image* image, const char* path) {
  if (cf_status st = require(backend && image && path, "cf_image_save_png: null argument")) return st;
  return guarded([&]() -> cf_status {
    write_png(path, to_raw_8bit(image->tensor, backend->impl->descriptor().preprocess));
    return CF_OK;
  });
}

cf_status cf_image_noise(const cf_backend* backend, uint64_t seed, double lo, double hi,
                         cf_image** out) {
  if (cf_status st = require(backend && out, "cf_image_noise: null argument")) return st;
  return guarded([&]() -> cf_status {
    Rng rng = make_stream(seed, "init-noise");
    const int res = backend->impl->resolution();
    *out = new cf_image{noise_image(res, res, lo, hi, rng)};
    return CF_OK;
  });
}

cf_status cf_image_grayscale(const cf_backend* backend, const cf_image* image, cf_image** out) {
  if (cf_status st = require(backend && image && out, "cf_image_grayscale: null argument")) return st;
  return guarded([&]() -> cf_status {
    *out = new cf_image{grayscale(image->tensor, backend->impl->descriptor().preprocess)};
    return CF_OK;
  });
}

void cf_image_free(cf_image* image) { delete image; }

int cf_image_height(const cf_image* image) { return image ? image->tensor.height() : 0; }
int cf_image_width(const cf_image* image) { return image ? image->tensor.width() : 0; }

const double* cf_image_data(const cf_image* image) {
  return image ? image->tensor.data().data() : nullptr;
}

cf_status cf_prompts_create(const char* const* prompts, size_t count, cf_prompts** out) {
  if (cf_status st = require(prompts && out && count > 0, "cf_prompts_create: null or empty input")) {
    return st;
  }
  return guarded([&]() -> cf_status {
    std::vector<std::string> strs;
    strs.reserve(count);
    for (size_t i = 0; i < count; ++i) {
      if (!prompts[i]) fail_invalid("cf_prompts_create: null prompt entry");
      strs.emplace_back(prompts[i]);
    }
    *out = new cf_prompts{PromptSet::from_strings(strs)};
    return CF_OK;
  });
}

cf_status cf_prompts_load(const char* path, cf_prompts** out) {
  if (cf_status st = require(path && out, "cf_prompts_load: null argument")) return st;
  return guarded([&]() -> cf_status {
    *out = new cf_prompts{PromptSet::from_file(path)};
    return CF_OK;
  });
}

void cf_prompts_free(cf_prompts* prompts) { delete prompts; }

size_t cf_prompts_count(const cf_prompts* prompts) { return prompts ? prompts->set.size() : 0; }

const char* cf_prompts_get(const cf_prompts* prompts, size_t index) {
  if (!prompts || index >= prompts->set.size()) return nullptr;
  return prompts->set[index].c_str();
}

cf_status cf_encode_image(const cf_backend* backend, const cf_image* image, double* embedding_out) {
  if (cf_status st = require(backend && image && embedding_out, "cf_encode_image: null argument")) {
    return st;
  }
  return guarded([&]() -> cf_status {
    const Embedding g = backend->impl->encode_image(image->tensor);
    std::memcpy(embedding_out, g.v.data(), g.v.size() * sizeof(double));
    return CF_OK;
  });
}

cf_status cf_encode_text(const cf_backend* backend, const char* prompt, double* embedding_out) {
  if (cf_status st = require(backend && prompt && embedding_out, "cf_encode_text: null argument")) {
    return st;
  }
  return guarded([&]() -> cf_status {
    const Embedding e = backend->impl->encode_text(prompt);
    std::memcpy(embedding_out, e.v.data(), e.v.size() * sizeof(double));
    return CF_OK;
  });
}

cf_status cf_cosine(const double* a, const double* b, size_t dim, double* score_out) {
  if (cf_status st = require(a && b && score_out && dim > 0, "cf_cosine: null or empty input")) {
    return st;
  }
  return guarded([&]() -> cf_status {
    Embedding ea{std::vector<double>(a, a + dim)};
    Embedding eb{std::vector<double>(b, b + dim)};
    *score_out = clip_score(normalize(ea), normalize(eb));
    return CF_OK;
  });
}

cf_status cf_score(const cf_backend* backend, const cf_image* image, const char* prompt,
                   double* score_out) {
  if (cf_status st = require(backend && image && prompt && score_out, "cf_score: null argument")) {
    return st;
  }
  return guarded([&]() -> cf_status {
    *score_out = image_text_score(*backend->impl, image->tensor, prompt);
    return CF_OK;
  });
}

void cf_forge_params_init(cf_forge_params* params) {
  if (!params) return;
  const OptimizerConfig defaults;
  params->learning_rate = defaults.learning_rate;
  params->momentum = defaults.momentum;
  params->iterations = defaults.iterations;
  params->alpha = defaults.weights.alpha;
  params->beta = defaults.weights.beta;
  params->bound_lower = defaults.bounds.lower;
  params->bound_upper = defaults.bounds.upper;
  params->seed = defaults.seed;
}

cf_status cf_total_loss(const cf_backend* backend, const cf_image* image,
                        const cf_prompts* prompts, const cf_forge_params* params,
                        cf_loss_breakdown* breakdown_out, double* sims_out) {
  if (cf_status st = require(backend && image && prompts && params && breakdown_out,
                             "cf_total_loss: null argument")) {
    return st;
  }
  return guarded([&]() -> cf_status {
    const OptimizerConfig cfg = to_optimizer(*params);
    const auto texts = encode_prompts(*backend->impl, prompts->set);
    const LossBreakdown b = total_loss(backend->impl->encode_image(image->tensor), texts,
                                       image->tensor, cfg.bounds, cfg.weights);
    *breakdown_out = to_c_breakdown(b);
    if (sims_out) {
      std::memcpy(sims_out, b.per_prompt_sims.data(), b.per_prompt_sims.size() * sizeof(double));
    }
    return CF_OK;
  });
}

cf_status cf_loss_gradient(const cf_backend* backend, const cf_image* image,
                           const cf_prompts* prompts, const cf_forge_params* params,
                           double* grad_out, cf_loss_breakdown* breakdown_out) {
  if (cf_status st = require(backend && image && prompts && params && grad_out,
                             "cf_loss_gradient: null argument")) {
    return st;
  }
  return guarded([&]() -> cf_status {
    const OptimizerConfig cfg = to_optimizer(*params);
    const auto texts = encode_prompts(*backend->impl, prompts->set);
    LossBreakdown b;
    const ImageTensor grad =
        loss_pixel_gradient(*backend->impl, image->tensor, texts, cfg.bounds, cfg.weights, &b);
    std::memcpy(grad_out, grad.data().data(), grad.size() * sizeof(double));
    if (breakdown_out) *breakdown_out = to_c_breakdown(b);
    return CF_OK;
  });
}

cf_status cf_forge(const cf_backend* backend, const cf_image* init, const cf_prompts* prompts,
                   const cf_forge_params* params, cf_image** final_out, cf_record** record_out) {
  if (cf_status st = require(backend && init && prompts && params, "cf_forge: null argument")) {
    return st;
  }
  return guarded([&]() -> cf_status {
    RunRecord rec = forge_image(*backend->impl, init->tensor, prompts->set, to_optimizer(*params));
    const bool diverged = rec.diverged_at.has_value();
    const std::int64_t diverged_step = diverged ? *rec.diverged_at : 0;
    if (final_out) *final_out = new cf_image{rec.final_image};
    if (record_out) *record_out = new cf_record{std::move(rec)};
    if (diverged) {
      return set_error(CF_ERR_NUMERIC, "forging diverged at iteration " +
                                           std::to_string(diverged_step) +
                                           "; outputs hold the last finite state");
    }
    return CF_OK;
  });
}

size_t cf_record_length(const cf_record* record) {
  return record ? record->record.trace.size() : 0;
}

cf_status cf_record_breakdown(const cf_record* record, size_t index, cf_loss_breakdown* out) {
  if (cf_status st = require(record && out, "cf_record_breakdown: null argument")) return st;
  if (index >= record->record.trace.size()) {
    return set_error(CF_ERR_INVALID_ARGUMENT, "cf_record_breakdown: index out of range");
  }
  *out = to_c_breakdown(record->record.trace[index]);
  return CF_OK;
}

cf_status cf_record_sims(const cf_record* record, size_t index, double* sims_out) {
  if (cf_status st = require(record && sims_out, "cf_record_sims: null argument")) return st;
  if (index >= record->record.trace.size()) {
    return set_error(CF_ERR_INVALID_ARGUMENT, "cf_record_sims: index out of range");
  }
  const auto& sims = record->record.trace[index].per_prompt_sims;
  std::memcpy(sims_out, sims.data(), sims.size() * sizeof(double));
  return CF_OK;
}

cf_status cf_record_to_json(const cf_record* record, char** json_out) {
  if (cf_status st = require(record && json_out, "cf_record_to_json: null argument")) return st;
  return guarded([&]() -> cf_status {
    *json_out = dup_string(record->record.to_json().dump(2));
    if (!*json_out) return set_error(CF_ERR_RUNTIME, "out of memory");
    return CF_OK;
  });
}

void cf_record_free(cf_record* record) { delete record; }

cf_status cf_check_master(const cf_backend* backend, const cf_image* x_fo,
                          const cf_prompts* prompts, const cf_image* const* standins,
                          size_t count, double* margins_out, int* satisfied_out) {
  if (cf_status st = require(backend && x_fo && prompts && standins && margins_out,
                             "cf_check_master: null argument")) {
    return st;
  }
  if (cf_status st = require(count == cf_prompts_count(prompts),
                             "cf_check_master: one stand-in image per prompt")) {
    return st;
  }
  return guarded([&]() -> cf_status {
    std::vector<MasterPair> pairs;
    pairs.reserve(count);
    for (size_t i = 0; i < count; ++i) {
      if (!standins[i]) fail_invalid("cf_check_master: null stand-in image");
      pairs.push_back(MasterPair{prompts->set[i], standins[i]->tensor});
    }
    const MasterCheckResult res = check_master(*backend->impl, x_fo->tensor, pairs);
    std::memcpy(margins_out, res.margins.data(), res.margins.size() * sizeof(double));
    if (satisfied_out) *satisfied_out = res.satisfied ? 1 : 0;
    return CF_OK;
  });
}

cf_status cf_grayscale_sensitivity(const cf_backend* backend, const cf_image* image,
                                   const cf_prompts* prompts, double* d_out, double* s_out,
                                   double* deltas_out) {
  if (cf_status st = require(backend && image && prompts && d_out && s_out,
                             "cf_grayscale_sensitivity: null argument")) {
    return st;
  }
  return guarded([&]() -> cf_status {
    const SensitivityResult res = grayscale_sensitivity(*backend->impl, image->tensor, prompts->set);
    *d_out = res.d;
    *s_out = res.s;
    if (deltas_out) std::memcpy(deltas_out, res.deltas.data(), res.deltas.size() * sizeof(double));
    return CF_OK;
  });
}

cf_status cf_detect(double d, double s, double tau1, double tau2, const double* theta,
                    cf_verdict* verdict_out) {
  if (cf_status st = require(verdict_out != nullptr, "cf_detect: null verdict_out")) return st;
  return guarded([&]() -> cf_status {
    DetectionThresholds t{tau1, tau2, std::nullopt};
    if (theta) t.theta = *theta;
    const DetectionVerdict v = detect(d, s, t);
    *verdict_out = cf_verdict{v.d, v.s, v.ratio, v.flagged ? 1 : 0, v.degenerate_score ? 1 : 0};
    return CF_OK;
  });
}

cf_status cf_calibrate(const double* d, const double* s, const int* labels, size_t count,
                       int grid_cells, double* tau1_out, double* tau2_out,
                       cf_confusion* confusion_out) {
  if (cf_status st = require(d && s && labels && tau1_out && tau2_out && count > 0,
                             "cf_calibrate: null or empty input")) {
    return st;
  }
  return guarded([&]() -> cf_status {
    std::vector<LabeledStats> stats(count);
    for (size_t i = 0; i < count; ++i) stats[i] = LabeledStats{d[i], s[i], labels[i] != 0};
    const CalibrationResult res = calibrate_thresholds(stats, grid_cells);
    *tau1_out = res.thresholds.tau1;
    *tau2_out = res.thresholds.tau2;
    if (confusion_out) {
      const auto& m = res.matrix;
      *confusion_out =
          cf_confusion{m.tp, m.fp, m.tn, m.fn, m.accuracy(), m.precision(), m.recall()};
    }
    return CF_OK;
  });
}

namespace {
cf_status run_experiment_common(ExperimentConfig cfg, char** report_json_out) {
  const ReportBundle bundle = run_experiment(cfg);
  if (report_json_out) {
    *report_json_out = dup_string(bundle.summary.dump(2));
    if (!*report_json_out) return set_error(CF_ERR_RUNTIME, "out of memory");
  }
  return CF_OK;
}
}  // namespace

cf_status cf_run_experiment_json(const char* config_json, char** report_json_out) {
  if (cf_status st = require(config_json != nullptr, "cf_run_experiment_json: null config")) {
    return st;
  }
  return guarded([&]() -> cf_status {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(config_json);
    } catch (const nlohmann::json::exception& e) {
      fail_invalid(std::string("config is not valid JSON: ") + e.what());
    }
    return run_experiment_common(ExperimentConfig::from_json(j), report_json_out);
  });
}

cf_status cf_run_experiment_file(const char* config_path, char** report_json_out) {
  if (cf_status st = require(config_path != nullptr, "cf_run_experiment_file: null path")) return st;
  return guarded([&]() -> cf_status {
    return run_experiment_common(ExperimentConfig::from_json_file(config_path), report_json_out);
  });
}

cf_status cf_report_runs(const char* const* run_dirs, size_t count, const char* out_dir,
                         char** report_json_out) {
  if (cf_status st = require(run_dirs && out_dir && count > 0, "cf_report_runs: null or empty input")) {
    return st;
  }
  return guarded([&]() -> cf_status {
    std::vector<std::string> dirs;
    dirs.reserve(count);
    for (size_t i = 0; i < count; ++i) {
      if (!run_dirs[i]) fail_invalid("cf_report_runs: null run directory entry");
      dirs.emplace_back(run_dirs[i]);
    }
    const ReportBundle bundle = build_report(dirs, out_dir);
    if (report_json_out) {
      *report_json_out = dup_string(bundle.summary.dump(2));
      if (!*report_json_out) return set_error(CF_ERR_RUNTIME, "out of memory");
    }
    return CF_OK;
  });
}

}  // extern "C"
