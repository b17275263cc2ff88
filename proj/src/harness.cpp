#include "clipforge/harness.hpp"

#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "clipforge/error.hpp"
#include "clipforge/parallel.hpp"

namespace clipforge {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::forge: return "forge";
    case ExperimentKind::sweep: return "sweep";
    case ExperimentKind::ablate: return "ablate";
    case ExperimentKind::detect: return "detect";
    case ExperimentKind::calibrate: return "calibrate";
    case ExperimentKind::gradcheck: return "gradcheck";
  }
  return "unknown";
}

ExperimentKind experiment_kind_from_string(const std::string& s) {
  if (s == "forge") return ExperimentKind::forge;
  if (s == "sweep") return ExperimentKind::sweep;
  if (s == "ablate") return ExperimentKind::ablate;
  if (s == "detect") return ExperimentKind::detect;
  if (s == "calibrate") return ExperimentKind::calibrate;
  if (s == "gradcheck") return ExperimentKind::gradcheck;
  fail_invalid("unknown experiment kind '" + s + "'");
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

// ---------------------------------------------------------------------------
// Config

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) fail_invalid("config: top level must be a JSON object");
  ExperimentConfig cfg;
  try {
    cfg.kind = experiment_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("backend")) cfg.backend_path = j.at("backend").get<std::string>();
    if (j.contains("prompts")) cfg.prompts = j.at("prompts").get<std::vector<std::string>>();
    if (j.contains("prompts_file")) cfg.prompts_file = j.at("prompts_file").get<std::string>();
    if (j.contains("init_image")) cfg.init_image = j.at("init_image").get<std::string>();
    if (j.contains("optimizer")) cfg.optimizer = OptimizerConfig::from_json(j.at("optimizer"));
    if (j.contains("seed")) cfg.optimizer.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();
    if (j.contains("workers")) cfg.workers = j.at("workers").get<int>();
    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      cfg.grid_lower = s.at("grid_lower").get<std::vector<double>>();
      cfg.grid_upper = s.at("grid_upper").get<std::vector<double>>();
    }
    if (j.contains("detect")) {
      const auto& d = j.at("detect");
      if (d.contains("manifest")) cfg.manifest = d.at("manifest").get<std::string>();
      if (d.contains("thresholds")) cfg.thresholds = DetectionThresholds::from_json(d.at("thresholds"));
      if (d.contains("thresholds_file")) cfg.thresholds_file = d.at("thresholds_file").get<std::string>();
    }
    if (j.contains("calibrate")) {
      const auto& c = j.at("calibrate");
      if (c.contains("manifest")) cfg.manifest = c.at("manifest").get<std::string>();
      if (c.contains("grid")) cfg.calibration_grid = c.at("grid").get<int>();
      if (c.contains("synthetic")) {
        const auto& s = c.at("synthetic");
        SyntheticCalibrationSpec spec;
        if (s.contains("count")) spec.count = s.at("count").get<int>();
        if (s.contains("forged_drop")) spec.forged_drop = s.at("forged_drop").get<double>();
        if (s.contains("original_drop")) spec.original_drop = s.at("original_drop").get<double>();
        if (s.contains("jitter_sigma")) spec.jitter_sigma = s.at("jitter_sigma").get<double>();
        cfg.synthetic = spec;
      }
    }
    if (j.contains("gradcheck")) {
      const auto& g = j.at("gradcheck");
      if (g.contains("images")) cfg.gradcheck_images = g.at("images").get<int>();
      if (g.contains("epsilon")) cfg.gradcheck_epsilon = g.at("epsilon").get<double>();
      if (g.contains("tolerance")) cfg.gradcheck_tolerance = g.at("tolerance").get<double>();
    }
  } catch (const json::exception& e) {
    fail_invalid(std::string("config: missing or mistyped field: ") + e.what());
  }

  static const std::set<std::string> known = {
      "kind", "backend", "prompts", "prompts_file", "init_image", "optimizer",
      "seed", "out",     "workers", "sweep",        "detect",     "calibrate", "gradcheck"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) fail_invalid("config: unknown key '" + it.key() + "'");
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_invalid("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail_invalid(std::string("config file is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  json j;
  j["kind"] = to_string(kind);
  j["backend"] = backend_path;
  if (!prompts.empty()) j["prompts"] = prompts;
  if (!prompts_file.empty()) j["prompts_file"] = prompts_file;
  if (!init_image.empty()) j["init_image"] = init_image;
  j["optimizer"] = optimizer.to_json();
  j["out"] = out_dir;
  j["workers"] = workers;
  if (kind == ExperimentKind::sweep) {
    j["sweep"] = json{{"grid_lower", grid_lower}, {"grid_upper", grid_upper}};
  }
  if (kind == ExperimentKind::detect) {
    json d;
    if (!manifest.empty()) d["manifest"] = manifest;
    if (thresholds) d["thresholds"] = thresholds->to_json();
    if (!thresholds_file.empty()) d["thresholds_file"] = thresholds_file;
    j["detect"] = d;
  }
  if (kind == ExperimentKind::calibrate) {
    json c;
    c["grid"] = calibration_grid;
    if (!manifest.empty()) c["manifest"] = manifest;
    if (synthetic) {
      c["synthetic"] = json{{"count", synthetic->count},
                            {"forged_drop", synthetic->forged_drop},
                            {"original_drop", synthetic->original_drop},
                            {"jitter_sigma", synthetic->jitter_sigma}};
    }
    j["calibrate"] = c;
  }
  if (kind == ExperimentKind::gradcheck) {
    j["gradcheck"] = json{{"images", gradcheck_images},
                          {"epsilon", gradcheck_epsilon},
                          {"tolerance", gradcheck_tolerance}};
  }
  return j;
}

namespace {

bool parent_writable(const fs::path& p) {
  fs::path probe = p.empty() ? fs::path(".") : p;
  std::error_code ec;
  while (!fs::exists(probe, ec) && probe.has_parent_path() && probe.parent_path() != probe) {
    probe = probe.parent_path();
  }
  if (!fs::exists(probe, ec)) probe = ".";
  return ::access(probe.c_str(), W_OK) == 0;
}

bool needs_prompts(ExperimentKind k, bool synthetic_calibration) {
  if (k == ExperimentKind::calibrate) return !synthetic_calibration;
  return true;
}

bool needs_optimizer(ExperimentKind k) {
  return k == ExperimentKind::forge || k == ExperimentKind::sweep || k == ExperimentKind::ablate;
}

}  // namespace

std::vector<std::string> ExperimentConfig::validate() const {
  std::vector<std::string> errs;
  const auto check = [&errs](bool ok, const std::string& msg) {
    if (!ok) errs.push_back(msg);
  };
  const auto file_exists = [](const std::string& p) { return fs::exists(fs::path(p)); };

  check(!backend_path.empty(), "backend descriptor path is required");
  if (!backend_path.empty()) check(file_exists(backend_path), "backend descriptor not found: " + backend_path);
  check(workers >= 1, "workers must be >= 1");
  check(!out_dir.empty(), "output directory is required");
  if (!out_dir.empty()) check(parent_writable(out_dir), "output directory is not writable: " + out_dir);

  if (needs_prompts(kind, synthetic.has_value())) {
    const bool inline_given = !prompts.empty();
    const bool file_given = !prompts_file.empty();
    check(inline_given || file_given, "prompts are required (inline list or prompts_file)");
    check(!(inline_given && file_given), "give either inline prompts or a prompts_file, not both");
    if (file_given) check(file_exists(prompts_file), "prompt file not found: " + prompts_file);
  }

  if (needs_optimizer(kind)) {
    try {
      optimizer.validate();
    } catch (const Error& e) {
      errs.emplace_back(e.what());
    }
    if (optimizer.init_mode == InitMode::from_image) {
      check(!init_image.empty(), "init_image is required when init_mode is from_image");
      if (!init_image.empty()) check(file_exists(init_image), "init image not found: " + init_image);
    } else {
      check(init_image.empty(), "init_image given but init_mode is uniform_noise");
    }
  }

  switch (kind) {
    case ExperimentKind::sweep: {
      check(!grid_lower.empty() && !grid_upper.empty(), "sweep: grid_lower and grid_upper must be nonempty");
      for (double v : grid_lower) check(v >= -1.0 && v <= 0.0, "sweep: grid_lower value out of [-1, 0]: " + format_double(v));
      for (double v : grid_upper) check(v >= 0.0 && v <= 1.0, "sweep: grid_upper value out of [0, 1]: " + format_double(v));
      break;
    }
    case ExperimentKind::detect: {
      check(!manifest.empty(), "detect: manifest path is required");
      if (!manifest.empty()) check(file_exists(manifest), "manifest not found: " + manifest);
      const bool inline_thr = thresholds.has_value();
      const bool file_thr = !thresholds_file.empty();
      check(inline_thr || file_thr, "detect: thresholds are required (inline or thresholds_file)");
      check(!(inline_thr && file_thr), "detect: give either inline thresholds or a thresholds_file, not both");
      if (file_thr) check(file_exists(thresholds_file), "threshold file not found: " + thresholds_file);
      if (inline_thr) {
        try {
          thresholds->validate();
        } catch (const Error& e) {
          errs.emplace_back(e.what());
        }
      }
      break;
    }
    case ExperimentKind::calibrate: {
      const bool manifest_mode = !manifest.empty();
      const bool synthetic_mode = synthetic.has_value();
      check(manifest_mode || synthetic_mode, "calibrate: give a manifest or a synthetic block");
      check(!(manifest_mode && synthetic_mode), "calibrate: manifest and synthetic modes are exclusive");
      if (manifest_mode) check(fs::exists(manifest), "manifest not found: " + manifest);
      if (synthetic_mode) {
        check(synthetic->count >= 2, "calibrate: synthetic count must be >= 2");
        check(synthetic->jitter_sigma >= 0.0, "calibrate: jitter_sigma must be >= 0");
        check(synthetic->forged_drop >= 0.0 && synthetic->forged_drop <= 1.0, "calibrate: forged_drop must be in [0, 1]");
        check(synthetic->original_drop >= 0.0 && synthetic->original_drop <= 1.0, "calibrate: original_drop must be in [0, 1]");
      }
      check(calibration_grid >= 2, "calibrate: grid must be >= 2");
      break;
    }
    case ExperimentKind::gradcheck: {
      check(gradcheck_images >= 1, "gradcheck: images must be >= 1");
      check(gradcheck_epsilon > 0.0, "gradcheck: epsilon must be > 0");
      check(gradcheck_tolerance > 0.0, "gradcheck: tolerance must be > 0");
      break;
    }
    default:
      break;
  }
  return errs;
}

// ---------------------------------------------------------------------------
// Manifest

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open manifest: " + path);
  const fs::path base = fs::path(path).parent_path();

  std::vector<ManifestEntry> entries;
  std::string line;
  bool first = true;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          cur += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        cols.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    cols.push_back(cur);
    if (first) {
      first = false;
      if (cols.size() == 3 && cols[0] == "image_path") continue;  // header
    }
    if (cols.size() != 3) {
      fail(ErrorCode::io, "manifest line " + std::to_string(lineno) + ": expected 3 columns");
    }
    ManifestEntry e;
    fs::path img(cols[0]);
    if (!img.is_absolute() && !fs::exists(img)) img = base / img;
    e.image_path = img.string();
    if (cols[1] == "tampered") {
      e.tampered = true;
    } else if (cols[1] == "original") {
      e.tampered = false;
    } else {
      fail(ErrorCode::io, "manifest line " + std::to_string(lineno) +
                              ": label must be 'tampered' or 'original', got '" + cols[1] + "'");
    }
    e.prompt_set_id = cols[2];
    entries.push_back(std::move(e));
  }
  if (entries.empty()) fail(ErrorCode::io, "manifest has no entries: " + path);
  for (const auto& e : entries) {
    if (e.prompt_set_id != entries.front().prompt_set_id) {
      fail_invalid("manifest mixes prompt sets ('" + entries.front().prompt_set_id + "' vs '" +
                   e.prompt_set_id + "'); one calibration set uses one prompt set");
    }
  }
  return entries;
}

// ---------------------------------------------------------------------------
// Emitters

std::string emit_density_data(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.empty()) fail_invalid("density data: empty pair list");
  std::string out = "score_original_domain,score_gray_domain\n";
  for (const auto& [orig, gray] : pairs) {
    out += format_double(orig);
    out += ',';
    out += format_double(gray);
    out += '\n';
  }
  return out;
}

std::string emit_heatmap_data(const std::vector<std::string>& prompts,
                              const std::vector<std::string>& methods,
                              const std::vector<std::vector<double>>& scores) {
  if (scores.size() != prompts.size()) fail_invalid("heatmap data: score rows != prompts");
  for (const auto& row : scores) {
    if (row.size() != methods.size()) fail_invalid("heatmap data: score columns != methods");
  }
  std::string out = "prompt,method,score\n";
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    for (std::size_t m = 0; m < methods.size(); ++m) {
      out += csv_escape(prompts[p]);
      out += ',';
      out += csv_escape(methods[m]);
      out += ',';
      out += format_double(scores[p][m]);
      out += '\n';
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment execution

namespace {

struct RunPaths {
  fs::path root;
  fs::path images;
  fs::path records;
  fs::path tables;
};

RunPaths create_run_dir(const std::string& out_dir, const std::string& kind, std::uint64_t seed) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  localtime_r(&tt, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);

  const std::string base = kind + "-" + std::to_string(seed) + "-" + stamp;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create output directory " + out_dir + ": " + ec.message());

  // create_directory is the atomic claim; a name that already exists (e.g. a
  // rerun within the same second) moves to the next suffix.
  fs::path root;
  for (int n = 1;; ++n) {
    root = fs::path(out_dir) / (n == 1 ? base : base + "-" + std::to_string(n));
    ec.clear();
    if (fs::create_directory(root, ec) && !ec) break;
    if (n > 9999) fail(ErrorCode::io, "cannot find a free run directory under " + out_dir);
  }

  RunPaths p{root, root / "images", root / "records", root / "tables"};
  fs::create_directories(p.images, ec);
  fs::create_directories(p.records, ec);
  fs::create_directories(p.tables, ec);
  if (ec) fail(ErrorCode::io, "cannot create run directory " + root.string() + ": " + ec.message());
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::io, "short write to " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

double out_of_bounds_fraction(const ImageTensor& x, const Bounds& b) {
  std::size_t n = 0;
  for (double v : x.data()) {
    if (v > b.upper || v < b.lower) ++n;
  }
  return static_cast<double>(n) / static_cast<double>(x.size());
}

std::string scores_csv(const RunRecord& rec) {
  std::string csv = "run_id,prompt_index,prompt,initial_sim,final_sim\n";
  const auto& first = rec.trace.front().per_prompt_sims;
  const auto& last = rec.trace.back().per_prompt_sims;
  for (std::size_t i = 0; i < rec.prompts.size(); ++i) {
    csv += csv_escape(rec.label) + ',' + std::to_string(i) + ',' + csv_escape(rec.prompts[i]) +
           ',' + format_double(first[i]) + ',' + format_double(last[i]) + '\n';
  }
  return csv;
}

struct LoadedInputs {
  std::unique_ptr<EncoderBackend> backend;
  std::optional<PromptSet> prompts;
  std::optional<ImageTensor> init;
  std::vector<ManifestEntry> manifest;
  std::optional<DetectionThresholds> thresholds;
};

// Everything referenced by the config is loaded before the run directory is
// created, so late I/O failures cannot leave partial runs behind.
LoadedInputs load_inputs(const ExperimentConfig& cfg) {
  LoadedInputs in;
  in.backend = load_backend(cfg.backend_path);

  if (needs_prompts(cfg.kind, cfg.synthetic.has_value())) {
    in.prompts = cfg.prompts_file.empty() ? PromptSet::from_strings(cfg.prompts)
                                          : PromptSet::from_file(cfg.prompts_file);
  }

  if (needs_optimizer(cfg.kind)) {
    if (cfg.optimizer.init_mode == InitMode::from_image) {
      in.init = preprocess(read_png(cfg.init_image), in.backend->resolution(),
                           in.backend->descriptor().preprocess);
    } else {
      Rng rng = make_stream(cfg.optimizer.seed, "init-noise");
      in.init = noise_image(in.backend->resolution(), in.backend->resolution(),
                            cfg.optimizer.bounds.lower, cfg.optimizer.bounds.upper, rng);
    }
  }

  if ((cfg.kind == ExperimentKind::detect || cfg.kind == ExperimentKind::calibrate) &&
      !cfg.manifest.empty()) {
    in.manifest = read_manifest(cfg.manifest);
  }
  if (cfg.kind == ExperimentKind::detect) {
    in.thresholds = cfg.thresholds ? *cfg.thresholds
                                   : DetectionThresholds::from_json_file(cfg.thresholds_file);
  }
  return in;
}

void write_image_png(const fs::path& path, const ImageTensor& x, const EncoderBackend& backend) {
  write_png(path.string(), to_raw_8bit(x, backend.descriptor().preprocess));
}

json file_list(const RunPaths& paths) {
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(paths.root)) {
    if (entry.is_regular_file()) {
      files.push_back(fs::relative(entry.path(), paths.root).generic_string());
    }
  }
  std::sort(files.begin(), files.end());
  return json(files);
}

ReportBundle run_forge(const ExperimentConfig& cfg, LoadedInputs& in, const RunPaths& paths) {
  RunRecord rec = forge_image(*in.backend, *in.init, *in.prompts, cfg.optimizer);
  write_image_png(paths.images / "init.png", rec.initial_image, *in.backend);
  write_image_png(paths.images / "final.png", rec.final_image, *in.backend);
  write_json(paths.records / "run.json", rec.to_json());
  write_text(paths.tables / "scores.csv", scores_csv(rec));

  json summary{{"kind", "forge"},
               {"run_dir", paths.root.string()},
               {"initial_mean_sim", rec.initial_mean_sim()},
               {"final_mean_sim", rec.final_mean_sim()},
               {"iterations", cfg.optimizer.iterations},
               {"duration_seconds", rec.duration_seconds},
               {"files", file_list(paths)}};
  if (rec.diverged_at) {
    // Artifacts above hold the last finite state; the run itself failed.
    fail(ErrorCode::numeric, "forging diverged at iteration " + std::to_string(*rec.diverged_at) +
                                 "; last finite state recorded in " + paths.root.string());
  }
  return ReportBundle{paths.root.string(), summary};
}

ReportBundle run_sweep(const ExperimentConfig& cfg, LoadedInputs& in, const RunPaths& paths) {
  SweepSurface surface = bound_sweep(*in.backend, *in.init, *in.prompts, cfg.optimizer,
                                     cfg.grid_lower, cfg.grid_upper, cfg.workers);
  std::string csv = "lower,upper,mean_score,run_id\n";
  std::string errors_csv = "run_id,error\n";
  int failures = 0;
  for (const auto& cell : surface.cells) {
    if (cell.ok) {
      csv += format_double(cell.lower) + ',' + format_double(cell.upper) + ',' +
             format_double(cell.mean_final_score) + ',' + cell.run_id + '\n';
      write_json(paths.records / (cell.run_id + ".json"), cell.record.to_json());
      write_image_png(paths.images / (cell.run_id + ".png"), cell.record.final_image, *in.backend);
    } else {
      ++failures;
      errors_csv += cell.run_id + ',' + csv_escape(cell.error) + '\n';
    }
  }
  write_text(paths.tables / "sweep.csv", csv);
  if (failures > 0) write_text(paths.tables / "sweep_errors.csv", errors_csv);

  json summary{{"kind", "sweep"},
               {"run_dir", paths.root.string()},
               {"cells", surface.cells.size()},
               {"failed_cells", failures},
               {"files", file_list(paths)}};
  return ReportBundle{paths.root.string(), summary};
}

ReportBundle run_ablate(const ExperimentConfig& cfg, LoadedInputs& in, const RunPaths& paths) {
  const auto runs = ablate(*in.backend, *in.init, *in.prompts, cfg.optimizer);
  std::string csv =
      "arm,final_align,final_var,final_pixel,final_total,final_mean_sim,oob_fraction\n";
  json arms = json::object();
  for (const auto& rec : runs) {
    const LossBreakdown& last = rec.trace.back();
    const double oob = out_of_bounds_fraction(rec.final_image, cfg.optimizer.bounds);
    csv += rec.label + ',' + format_double(last.align) + ',' + format_double(last.var) + ',' +
           format_double(last.pixel) + ',' + format_double(last.total) + ',' +
           format_double(rec.final_mean_sim()) + ',' + format_double(oob) + '\n';
    write_json(paths.records / (rec.label + ".json"), rec.to_json());
    write_image_png(paths.images / (rec.label + ".png"), rec.final_image, *in.backend);
    arms[rec.label] = json{{"final_align", last.align},
                           {"final_var", last.var},
                           {"final_pixel", last.pixel},
                           {"final_mean_sim", rec.final_mean_sim()},
                           {"oob_fraction", oob}};
  }
  write_text(paths.tables / "ablation.csv", csv);

  json summary{{"kind", "ablate"},
               {"run_dir", paths.root.string()},
               {"arms", arms},
               {"files", file_list(paths)}};
  return ReportBundle{paths.root.string(), summary};
}

ReportBundle run_detect(const ExperimentConfig& cfg, LoadedInputs& in, const RunPaths& paths) {
  const std::vector<UnitEmbedding> texts = encode_prompts(*in.backend, *in.prompts);
  const std::size_t n = in.manifest.size();

  struct Scored {
    SensitivityResult sens;
    DetectionVerdict verdict;
  };
  std::vector<Scored> scored(n);
  const int workers = in.backend->thread_safe() ? cfg.workers : 1;
  parallel_for(n, workers, [&](std::size_t i) {
    const ImageTensor img = preprocess(read_png(in.manifest[i].image_path),
                                       in.backend->resolution(), in.backend->descriptor().preprocess);
    scored[i].sens = grayscale_sensitivity(*in.backend, img, texts);
    scored[i].verdict =
        detect(scored[i].sens.d, scored[i].sens.s, *in.thresholds, scored[i].sens.deltas);
  });

  std::string csv = "index,image_path,label,d,s,ratio,flagged\n";
  std::vector<std::pair<double, double>> density;
  std::vector<bool> flagged;
  std::vector<bool> labels;
  density.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& v = scored[i].verdict;
    char name[32];
    std::snprintf(name, sizeof(name), "verdict-%03zu.json", i);
    write_json(paths.records / name, v.to_json());
    csv += std::to_string(i) + ',' + csv_escape(in.manifest[i].image_path) + ',' +
           (in.manifest[i].tampered ? "tampered" : "original") + ',' + format_double(v.d) + ',' +
           format_double(v.s) + ',' + format_double(v.ratio) + ',' + (v.flagged ? "1" : "0") + '\n';
    density.emplace_back(scored[i].sens.s, scored[i].sens.mean_gray_score());
    flagged.push_back(v.flagged);
    labels.push_back(in.manifest[i].tampered);
  }
  write_text(paths.tables / "verdicts.csv", csv);
  write_text(paths.tables / "density.csv", emit_density_data(density));

  const ConfusionMatrix matrix = confusion(flagged, labels);
  write_json(paths.records / "confusion.json", matrix.to_json());

  json summary{{"kind", "detect"},
               {"run_dir", paths.root.string()},
               {"samples", n},
               {"flagged", matrix.tp + matrix.fp},
               {"confusion", matrix.to_json()},
               {"files", file_list(paths)}};
  return ReportBundle{paths.root.string(), summary};
}

ReportBundle run_calibrate(const ExperimentConfig& cfg, LoadedInputs& in, const RunPaths& paths) {
  std::vector<LabeledStats> stats;
  if (cfg.synthetic) {
    stats = synthetic_drop_stats(cfg.optimizer.seed, cfg.synthetic->count,
                                 cfg.synthetic->forged_drop, cfg.synthetic->original_drop,
                                 cfg.synthetic->jitter_sigma);
  } else {
    const std::vector<UnitEmbedding> texts = encode_prompts(*in.backend, *in.prompts);
    const std::size_t n = in.manifest.size();
    stats.resize(n);
    const int workers = in.backend->thread_safe() ? cfg.workers : 1;
    parallel_for(n, workers, [&](std::size_t i) {
      const ImageTensor img =
          preprocess(read_png(in.manifest[i].image_path), in.backend->resolution(),
                     in.backend->descriptor().preprocess);
      const SensitivityResult sens = grayscale_sensitivity(*in.backend, img, texts);
      stats[i] = LabeledStats{sens.d, sens.s, in.manifest[i].tampered};
    });
  }

  const CalibrationResult result = calibrate_thresholds(stats, cfg.calibration_grid);

  std::string csv = "index,d,s,ratio,label,flagged\n";
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const bool degenerate = std::abs(stats[i].s) < kScoreFloor;
    const double ratio = degenerate ? 0.0 : stats[i].d / stats[i].s;
    const bool flag = !degenerate && stats[i].d > result.thresholds.tau1 &&
                      ratio > result.thresholds.tau2;
    csv += std::to_string(i) + ',' + format_double(stats[i].d) + ',' + format_double(stats[i].s) +
           ',' + format_double(ratio) + ',' + (stats[i].tampered ? "tampered" : "original") + ',' +
           (flag ? "1" : "0") + '\n';
  }
  write_text(paths.tables / "samples.csv", csv);

  const auto& m = result.matrix;
  write_text(paths.tables / "confusion.csv",
             "tp,fp,tn,fn,accuracy,precision,recall\n" + std::to_string(m.tp) + ',' +
                 std::to_string(m.fp) + ',' + std::to_string(m.tn) + ',' + std::to_string(m.fn) +
                 ',' + format_double(m.accuracy()) + ',' + format_double(m.precision()) + ',' +
                 format_double(m.recall()) + '\n');

  write_json(paths.root / "thresholds.json", result.thresholds.to_json());
  write_json(paths.records / "calibration.json",
             json{{"kind", "calibration"},
                  {"thresholds", result.thresholds.to_json()},
                  {"confusion", m.to_json()},
                  {"accuracy", result.accuracy},
                  {"grid_cells", result.grid_cells},
                  {"samples", stats.size()}});

  json summary{{"kind", "calibrate"},
               {"run_dir", paths.root.string()},
               {"thresholds", result.thresholds.to_json()},
               {"accuracy", result.accuracy},
               {"confusion", m.to_json()},
               {"files", file_list(paths)}};
  return ReportBundle{paths.root.string(), summary};
}

ReportBundle run_gradcheck(const ExperimentConfig& cfg, LoadedInputs& in, const RunPaths& paths) {
  const std::vector<UnitEmbedding> texts = encode_prompts(*in.backend, *in.prompts);
  const Bounds& b = cfg.optimizer.bounds;
  const LossWeights& w = cfg.optimizer.weights;
  const double eps = cfg.gradcheck_epsilon;
  const int res = in.backend->resolution();

  Rng rng = make_stream(cfg.optimizer.seed, "gradcheck");
  std::string csv = "image_index,rel_error\n";
  json per_image = json::array();
  double max_rel = 0.0;

  for (int n = 0; n < cfg.gradcheck_images; ++n) {
    // Pixels straddle the bounds so the guard term participates; components
    // are kept clear of the ReLU kinks where finite differences are invalid.
    ImageTensor x(res, res);
    for (double& v : x.data()) {
      do {
        v = rng.uniform(b.lower - 0.25, b.upper + 0.25);
      } while (std::abs(v - b.lower) < 3.0 * eps || std::abs(v - b.upper) < 3.0 * eps);
    }

    const ImageTensor analytic = loss_pixel_gradient(*in.backend, x, texts, b, w);
    ImageTensor numeric(res, res);
    for (std::size_t k = 0; k < x.size(); ++k) {
      ImageTensor xp = x;
      ImageTensor xm = x;
      xp.data()[k] += eps;
      xm.data()[k] -= eps;
      const double lp = total_loss(in.backend->encode_image(xp), texts, xp, b, w).total;
      const double lm = total_loss(in.backend->encode_image(xm), texts, xm, b, w).total;
      numeric.data()[k] = (lp - lm) / (2.0 * eps);
    }

    double diff2 = 0.0;
    double ref2 = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double d = analytic.data()[k] - numeric.data()[k];
      diff2 += d * d;
      ref2 += numeric.data()[k] * numeric.data()[k];
    }
    const double rel = std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-12);
    max_rel = std::max(max_rel, rel);
    csv += std::to_string(n) + ',' + format_double(rel) + '\n';
    per_image.push_back(json{{"image_index", n}, {"rel_error", rel}});
  }

  const bool pass = max_rel <= cfg.gradcheck_tolerance;
  write_text(paths.tables / "gradcheck.csv", csv);
  write_json(paths.records / "gradcheck.json", json{{"kind", "gradcheck"},
                                                    {"epsilon", eps},
                                                    {"tolerance", cfg.gradcheck_tolerance},
                                                    {"max_rel_error", max_rel},
                                                    {"pass", pass},
                                                    {"per_image", per_image}});

  json summary{{"kind", "gradcheck"},
               {"run_dir", paths.root.string()},
               {"max_rel_error", max_rel},
               {"tolerance", cfg.gradcheck_tolerance},
               {"pass", pass},
               {"files", file_list(paths)}};
  return ReportBundle{paths.root.string(), summary};
}

}  // namespace

ReportBundle run_experiment(const ExperimentConfig& cfg) {
  const std::vector<std::string> problems = cfg.validate();
  if (!problems.empty()) {
    std::string msg = "invalid experiment config:";
    for (const auto& p : problems) msg += "\n  - " + p;
    fail_invalid(msg);
  }

  // All inputs load before any write; a bad reference leaves the filesystem
  // untouched.
  LoadedInputs inputs = load_inputs(cfg);

  const RunPaths paths = create_run_dir(cfg.out_dir, to_string(cfg.kind), cfg.optimizer.seed);
  write_json(paths.root / "config.json", cfg.to_json());

  switch (cfg.kind) {
    case ExperimentKind::forge: return run_forge(cfg, inputs, paths);
    case ExperimentKind::sweep: return run_sweep(cfg, inputs, paths);
    case ExperimentKind::ablate: return run_ablate(cfg, inputs, paths);
    case ExperimentKind::detect: return run_detect(cfg, inputs, paths);
    case ExperimentKind::calibrate: return run_calibrate(cfg, inputs, paths);
    case ExperimentKind::gradcheck: return run_gradcheck(cfg, inputs, paths);
  }
  fail(ErrorCode::runtime, "unreachable experiment kind");
}

// ---------------------------------------------------------------------------
// Report

ReportBundle build_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  if (run_dirs.empty()) fail_invalid("report: needs at least one run directory");
  for (const auto& dir : run_dirs) {
    if (!fs::is_directory(dir)) fail_invalid("report: not a run directory: " + dir);
  }

  struct RunScores {
    std::string method;
    std::vector<std::string> prompts;
    std::vector<double> initial;
    std::vector<double> final_sims;
  };
  std::vector<RunScores> runs;
  std::vector<std::string> density_rows;
  std::vector<json> confusions;

  for (const auto& dir : run_dirs) {
    const fs::path records = fs::path(dir) / "records";
    std::vector<fs::path> files;
    if (fs::is_directory(records)) {
      for (const auto& entry : fs::directory_iterator(records)) {
        if (entry.path().extension() == ".json") files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      std::ifstream in(file);
      json j;
      try {
        in >> j;
      } catch (const json::exception&) {
        continue;  // not a record; skip
      }
      const std::string kind = j.value("kind", "");
      if (kind == "forge_run") {
        RunScores rs;
        rs.method = fs::path(dir).filename().string() + ":" + j.value("label", "run");
        rs.prompts = j.at("prompts").get<std::vector<std::string>>();
        const auto& trace = j.at("trace");
        rs.initial = trace.front().at("sims").get<std::vector<double>>();
        rs.final_sims = trace.back().at("sims").get<std::vector<double>>();
        runs.push_back(std::move(rs));
      } else if (kind == "calibration") {
        confusions.push_back(j.at("confusion"));
      }
    }
    const fs::path density = fs::path(dir) / "tables" / "density.csv";
    if (fs::exists(density)) {
      std::ifstream in(density);
      std::string line;
      bool header = true;
      while (std::getline(in, line)) {
        if (header) {
          header = false;
          continue;
        }
        if (!line.empty()) density_rows.push_back(line);
      }
    }
  }

  const auto now_paths = create_run_dir(out_dir, "report", 0);
  write_json(now_paths.root / "config.json",
             json{{"kind", "report"}, {"runs", run_dirs}, {"out", out_dir}});

  // scores.csv: every (run, prompt) before/after pair.
  std::string scores = "run_id,prompt_index,prompt,initial_sim,final_sim\n";
  for (const auto& rs : runs) {
    for (std::size_t i = 0; i < rs.prompts.size(); ++i) {
      scores += csv_escape(rs.method) + ',' + std::to_string(i) + ',' + csv_escape(rs.prompts[i]) +
                ',' + format_double(rs.initial[i]) + ',' + format_double(rs.final_sims[i]) + '\n';
    }
  }
  write_text(now_paths.tables / "scores.csv", scores);

  // heatmap.csv: prompts x methods, final similarity. Prompt order follows
  // first appearance; absent combinations are omitted (long format).
  if (!runs.empty()) {
    std::string heatmap = "prompt,method,score\n";
    std::vector<std::string> prompt_order;
    for (const auto& rs : runs) {
      for (const auto& p : rs.prompts) {
        if (std::find(prompt_order.begin(), prompt_order.end(), p) == prompt_order.end()) {
          prompt_order.push_back(p);
        }
      }
    }
    for (const auto& prompt : prompt_order) {
      for (const auto& rs : runs) {
        const auto it = std::find(rs.prompts.begin(), rs.prompts.end(), prompt);
        if (it == rs.prompts.end()) continue;
        const std::size_t i = static_cast<std::size_t>(it - rs.prompts.begin());
        heatmap += csv_escape(prompt) + ',' + csv_escape(rs.method) + ',' +
                   format_double(rs.final_sims[i]) + '\n';
      }
    }
    write_text(now_paths.tables / "heatmap.csv", heatmap);
  }

  if (!density_rows.empty()) {
    std::string density = "score_original_domain,score_gray_domain\n";
    for (const auto& row : density_rows) density += row + '\n';
    write_text(now_paths.tables / "density.csv", density);
  }

  if (!confusions.empty()) {
    std::string csv = "tp,fp,tn,fn,accuracy,precision,recall\n";
    for (const auto& c : confusions) {
      csv += std::to_string(c.at("tp").get<std::int64_t>()) + ',' +
             std::to_string(c.at("fp").get<std::int64_t>()) + ',' +
             std::to_string(c.at("tn").get<std::int64_t>()) + ',' +
             std::to_string(c.at("fn").get<std::int64_t>()) + ',' +
             format_double(c.at("accuracy").get<double>()) + ',' +
             format_double(c.at("precision").get<double>()) + ',' +
             format_double(c.at("recall").get<double>()) + '\n';
    }
    write_text(now_paths.tables / "confusion.csv", csv);
  }

  json summary{{"kind", "report"},
               {"run_dir", now_paths.root.string()},
               {"forge_records", runs.size()},
               {"density_rows", density_rows.size()},
               {"confusion_records", confusions.size()},
               {"files", file_list(now_paths)}};
  return ReportBundle{now_paths.root.string(), summary};
}

}  // namespace clipforge
