// Command-line front end. Everything flows through the C API in
// clipforge/clipforge.h: each subcommand assembles an experiment config
// (optionally seeded from --config) and hands it to cf_run_experiment_json.
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "clipforge/clipforge.h"
#include "json.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct GlobalOpts {
  std::string config_path;
  std::string backend;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out_dir;
};

struct ForgeOpts {
  std::string prompts_file;
  std::vector<std::string> prompts;
  std::string init_image;
  bool noise_init = false;
  std::optional<std::int64_t> iterations;
  std::optional<double> learning_rate;
  std::optional<double> momentum;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<double> lower;
  std::optional<double> upper;
};

int fail_with(cf_status status) {
  std::cerr << "error (" << cf_status_name(status) << "): " << cf_last_error() << "\n";
  return status == CF_ERR_INVALID_ARGUMENT ? kExitValidation : kExitRuntime;
}

json base_config(const GlobalOpts& g, const std::string& kind) {
  json cfg = json::object();
  if (!g.config_path.empty()) {
    std::ifstream in(g.config_path);
    if (!in) {
      std::cerr << "error (invalid_argument): cannot open config file: " << g.config_path << "\n";
      std::exit(kExitValidation);
    }
    try {
      in >> cfg;
    } catch (const json::exception& e) {
      std::cerr << "error (invalid_argument): config file is not valid JSON: " << e.what() << "\n";
      std::exit(kExitValidation);
    }
  }
  cfg["kind"] = kind;
  if (!g.backend.empty()) cfg["backend"] = g.backend;
  if (g.seed) cfg["seed"] = *g.seed;
  if (g.workers) cfg["workers"] = *g.workers;
  if (!g.out_dir.empty()) cfg["out"] = g.out_dir;
  return cfg;
}

void apply_forge_opts(json& cfg, const ForgeOpts& f) {
  if (!f.prompts_file.empty()) cfg["prompts_file"] = f.prompts_file;
  if (!f.prompts.empty()) cfg["prompts"] = f.prompts;
  json& opt = cfg["optimizer"];
  if (!opt.is_object()) opt = json::object();
  if (f.noise_init) {
    opt["init_mode"] = "uniform_noise";
  } else if (!f.init_image.empty()) {
    cfg["init_image"] = f.init_image;
    opt["init_mode"] = "from_image";
  }
  if (f.iterations) opt["iterations"] = *f.iterations;
  if (f.learning_rate) opt["learning_rate"] = *f.learning_rate;
  if (f.momentum) opt["momentum"] = *f.momentum;
  if (f.alpha) opt["alpha"] = *f.alpha;
  if (f.beta) opt["beta"] = *f.beta;
  if (f.lower || f.upper) {
    json& b = opt["bounds"];
    if (!b.is_object()) b = json{{"lower", 0.0}, {"upper", 1.0}};
    if (f.lower) b["lower"] = *f.lower;
    if (f.upper) b["upper"] = *f.upper;
  }
}

void add_forge_flags(CLI::App* cmd, ForgeOpts& f) {
  cmd->add_option("--prompts-file,-p", f.prompts_file, "prompt list file (one per line, # comments)");
  cmd->add_option("--prompt", f.prompts, "inline prompt (repeatable)");
  cmd->add_option("--init-image", f.init_image, "PNG to start from");
  cmd->add_flag("--noise", f.noise_init, "start from seeded uniform noise instead of an image");
  cmd->add_option("--iterations", f.iterations, "optimization steps");
  cmd->add_option("--lr", f.learning_rate, "learning rate");
  cmd->add_option("--momentum", f.momentum, "momentum in [0,1)");
  cmd->add_option("--alpha", f.alpha, "variance-loss weight");
  cmd->add_option("--beta", f.beta, "pixel-guard weight");
  cmd->add_option("--lower", f.lower, "pixel-guard lower bound");
  cmd->add_option("--upper", f.upper, "pixel-guard upper bound");
}

int run_and_report(const json& cfg, bool* gradcheck_pass = nullptr) {
  char* report = nullptr;
  const cf_status status = cf_run_experiment_json(cfg.dump().c_str(), &report);
  if (status != CF_OK) {
    if (report) cf_string_free(report);
    return fail_with(status);
  }
  std::cout << report << "\n";
  if (gradcheck_pass) {
    try {
      *gradcheck_pass = json::parse(report).value("pass", false);
    } catch (const json::exception&) {
      *gradcheck_pass = false;
    }
  }
  cf_string_free(report);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"forge fooling master images against contrastive image-text scoring, "
               "and detect them by grayscale sensitivity"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOpts g;
  app.add_option("--config", g.config_path, "experiment config JSON (flags override it)");
  app.add_option("--backend", g.backend, "backend descriptor JSON path");
  app.add_option("--seed", g.seed, "root seed for all random streams");
  app.add_option("--workers", g.workers, "worker threads for independent runs");
  app.add_option("--out", g.out_dir, "output directory for run artifacts");

  // forge
  auto* forge = app.add_subcommand("forge", "run one forging optimization");
  ForgeOpts forge_opts;
  add_forge_flags(forge, forge_opts);

  // sweep-bounds
  auto* sweep = app.add_subcommand("sweep-bounds", "forge once per (lower, upper) grid cell");
  ForgeOpts sweep_opts;
  std::vector<double> grid_lower;
  std::vector<double> grid_upper;
  add_forge_flags(sweep, sweep_opts);
  sweep->add_option("--grid-lower", grid_lower, "lower-bound grid values in [-1, 0]");
  sweep->add_option("--grid-upper", grid_upper, "upper-bound grid values in [0, 1]");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "four arms: full, no pixel guard, no variance, alignment only");
  ForgeOpts ablate_opts;
  add_forge_flags(ablate, ablate_opts);

  // detect
  auto* detect = app.add_subcommand("detect", "score a manifest of images with the dual-threshold rule");
  std::string det_manifest;
  std::string det_prompts_file;
  std::vector<std::string> det_prompts;
  std::optional<double> tau1, tau2, theta;
  std::string thresholds_file;
  detect->add_option("--manifest", det_manifest, "CSV manifest (image_path, label, prompt_set_id)");
  detect->add_option("--prompts-file,-p", det_prompts_file, "prompt list file");
  detect->add_option("--prompt", det_prompts, "inline prompt (repeatable)");
  detect->add_option("--tau1", tau1, "absolute sensitivity threshold");
  detect->add_option("--tau2", tau2, "relative (d/s) threshold");
  detect->add_option("--theta", theta, "optional minimum-similarity gate");
  detect->add_option("--thresholds-file", thresholds_file, "JSON {tau1, tau2, theta?}");

  // calibrate
  auto* calibrate = app.add_subcommand("calibrate", "grid-search tau1/tau2 on a labeled set");
  std::string cal_manifest;
  std::string cal_prompts_file;
  std::vector<std::string> cal_prompts;
  bool synthetic = false;
  std::optional<int> cal_count;
  std::optional<double> forged_drop, original_drop, jitter;
  std::optional<int> cal_grid;
  calibrate->add_option("--manifest", cal_manifest, "CSV manifest of labeled images");
  calibrate->add_option("--prompts-file,-p", cal_prompts_file, "prompt list file");
  calibrate->add_option("--prompt", cal_prompts, "inline prompt (repeatable)");
  calibrate->add_flag("--synthetic", synthetic, "use the synthetic grayscale-drop sample set");
  calibrate->add_option("--count", cal_count, "synthetic sample count");
  calibrate->add_option("--forged-drop", forged_drop, "mean score drop fraction for forged samples");
  calibrate->add_option("--original-drop", original_drop, "mean score drop fraction for originals");
  calibrate->add_option("--jitter", jitter, "gaussian jitter sigma on the drop fraction");
  calibrate->add_option("--grid", cal_grid, "grid cells per threshold axis");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "analytic pixel gradient vs central finite differences");
  std::string gc_prompts_file;
  std::vector<std::string> gc_prompts;
  std::optional<int> gc_images;
  std::optional<double> gc_epsilon, gc_tolerance;
  gradcheck->add_option("--prompts-file,-p", gc_prompts_file, "prompt list file");
  gradcheck->add_option("--prompt", gc_prompts, "inline prompt (repeatable)");
  gradcheck->add_option("--images", gc_images, "number of random test images");
  gradcheck->add_option("--epsilon", gc_epsilon, "finite-difference step");
  gradcheck->add_option("--tolerance", gc_tolerance, "max allowed relative error");

  // report
  auto* report = app.add_subcommand("report", "combine finished run directories into tables");
  std::vector<std::string> report_runs;
  report->add_option("--runs", report_runs, "run directories to combine")->required();

  CLI11_PARSE(app, argc, argv);

  if (forge->parsed()) {
    json cfg = base_config(g, "forge");
    apply_forge_opts(cfg, forge_opts);
    return run_and_report(cfg);
  }

  if (sweep->parsed()) {
    json cfg = base_config(g, "sweep");
    apply_forge_opts(cfg, sweep_opts);
    if (!grid_lower.empty() || !grid_upper.empty()) {
      cfg["sweep"] = json{{"grid_lower", grid_lower}, {"grid_upper", grid_upper}};
    }
    return run_and_report(cfg);
  }

  if (ablate->parsed()) {
    json cfg = base_config(g, "ablate");
    apply_forge_opts(cfg, ablate_opts);
    return run_and_report(cfg);
  }

  if (detect->parsed()) {
    json cfg = base_config(g, "detect");
    if (!det_prompts_file.empty()) cfg["prompts_file"] = det_prompts_file;
    if (!det_prompts.empty()) cfg["prompts"] = det_prompts;
    json& d = cfg["detect"];
    if (!d.is_object()) d = json::object();
    if (!det_manifest.empty()) d["manifest"] = det_manifest;
    if (!thresholds_file.empty()) d["thresholds_file"] = thresholds_file;
    if (tau1 || tau2 || theta) {
      json thr = d.contains("thresholds") ? d["thresholds"] : json::object();
      if (tau1) thr["tau1"] = *tau1;
      if (tau2) thr["tau2"] = *tau2;
      if (theta) thr["theta"] = *theta;
      d["thresholds"] = thr;
    }
    return run_and_report(cfg);
  }

  if (calibrate->parsed()) {
    json cfg = base_config(g, "calibrate");
    if (!cal_prompts_file.empty()) cfg["prompts_file"] = cal_prompts_file;
    if (!cal_prompts.empty()) cfg["prompts"] = cal_prompts;
    json& c = cfg["calibrate"];
    if (!c.is_object()) c = json::object();
    if (!cal_manifest.empty()) c["manifest"] = cal_manifest;
    if (cal_grid) c["grid"] = *cal_grid;
    if (synthetic || cal_count || forged_drop || original_drop || jitter) {
      json syn = c.contains("synthetic") ? c["synthetic"] : json::object();
      if (cal_count) syn["count"] = *cal_count;
      if (forged_drop) syn["forged_drop"] = *forged_drop;
      if (original_drop) syn["original_drop"] = *original_drop;
      if (jitter) syn["jitter_sigma"] = *jitter;
      c["synthetic"] = syn;
    }
    return run_and_report(cfg);
  }

  if (gradcheck->parsed()) {
    json cfg = base_config(g, "gradcheck");
    if (!gc_prompts_file.empty()) cfg["prompts_file"] = gc_prompts_file;
    if (!gc_prompts.empty()) cfg["prompts"] = gc_prompts;
    json& gc = cfg["gradcheck"];
    if (!gc.is_object()) gc = json::object();
    if (gc_images) gc["images"] = *gc_images;
    if (gc_epsilon) gc["epsilon"] = *gc_epsilon;
    if (gc_tolerance) gc["tolerance"] = *gc_tolerance;
    bool pass = false;
    const int code = run_and_report(cfg, &pass);
    if (code != kExitOk) return code;
    if (!pass) {
      std::cerr << "gradcheck failed: max relative error above tolerance\n";
      return kExitRuntime;
    }
    return kExitOk;
  }

  if (report->parsed()) {
    std::vector<const char*> dirs;
    dirs.reserve(report_runs.size());
    for (const auto& r : report_runs) dirs.push_back(r.c_str());
    const std::string out = g.out_dir.empty() ? "runs" : g.out_dir;
    char* summary = nullptr;
    const cf_status status = cf_report_runs(dirs.data(), dirs.size(), out.c_str(), &summary);
    if (status != CF_OK) {
      if (summary) cf_string_free(summary);
      return fail_with(status);
    }
    std::cout << summary << "\n";
    cf_string_free(summary);
    return kExitOk;
  }

  return kExitValidation;
}
