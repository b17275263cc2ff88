#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "clipforge/error.hpp"
#include "clipforge/harness.hpp"
#include "clipforge/rng.hpp"
#include "doctest.h"
#include "support/temp_dir.hpp"

using namespace clipforge;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string write_toy_descriptor(const test_support::TempDir& tmp) {
  const std::string path = tmp.file("toy.json");
  std::ofstream out(path);
  out << R"({"id":"toy-v1","dim":32,"resolution":8,"shift":[0,0,0],"scale":[1,1,1],"seed":42})";
  return path;
}

void write_noise_png(const std::string& path, std::uint64_t seed, bool achromatic = false) {
  Rng rng(seed);
  RawImage img;
  img.height = 8;
  img.width = 8;
  img.rgb.resize(8 * 8 * 3);
  for (int i = 0; i < 64; ++i) {
    if (achromatic) {
      const unsigned char v = static_cast<unsigned char>(rng.next_u64() % 256);
      for (int c = 0; c < 3; ++c) img.rgb[std::size_t(i * 3 + c)] = v;
    } else {
      for (int c = 0; c < 3; ++c) {
        img.rgb[std::size_t(i * 3 + c)] = static_cast<unsigned char>(rng.next_u64() % 256);
      }
    }
  }
  write_png(path, img);
}

ExperimentConfig base_forge_config(const test_support::TempDir& tmp) {
  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::forge;
  cfg.backend_path = write_toy_descriptor(tmp);
  cfg.prompts = {"goldfish", "red fox", "school bus"};
  cfg.optimizer.learning_rate = 0.5;
  cfg.optimizer.iterations = 25;
  cfg.optimizer.seed = 7;
  cfg.optimizer.init_mode = InitMode::uniform_noise;
  cfg.out_dir = tmp.file("runs");
  return cfg;
}

// Relative path -> file bytes for every CSV/JSON under a run directory.
std::map<std::string, std::string> tabular_outputs(const std::string& run_dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".json" || ext == ".csv") {
      files[fs::relative(entry.path(), run_dir).generic_string()] = read_file(entry.path());
    }
  }
  return files;
}

}  // namespace

TEST_CASE("format_double is shortest round trip") {
  CHECK(format_double(0.6) == "0.6");
  CHECK(format_double(0.25) == "0.25");
  CHECK(format_double(1.0 / 3.0) == "0.3333333333333333");
  CHECK(format_double(-0.0) == "-0");
}

TEST_CASE("csv_escape quotes only when needed") {
  CHECK(csv_escape("plain") == "plain");
  CHECK(csv_escape("a,b") == "\"a,b\"");
  CHECK(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
}

TEST_CASE("emit_density_data") {
  CHECK(emit_density_data({{0.6, 0.2}}) == "score_original_domain,score_gray_domain\n0.6,0.2\n");

  std::vector<std::pair<double, double>> pairs;
  for (int i = 0; i < 25; ++i) pairs.emplace_back(0.5 + i * 0.001, 0.2);
  const std::string csv = emit_density_data(pairs);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 26);  // header + 25 rows

  CHECK_THROWS_AS(emit_density_data({}), Error);
}

TEST_CASE("emit_heatmap_data round trips") {
  CHECK(emit_heatmap_data({"p"}, {"m"}, {{0.5}}) == "prompt,method,score\np,m,0.5\n");
  CHECK_THROWS_AS(emit_heatmap_data({"p"}, {"m"}, {{0.5, 0.6}}), Error);

  // 10 prompts x 2 methods: 20 rows, parse back equals input.
  std::vector<std::string> prompts;
  std::vector<std::vector<double>> scores;
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    prompts.push_back("prompt " + std::to_string(i));
    scores.push_back({rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)});
  }
  const std::string csv = emit_heatmap_data(prompts, {"ours", "baseline"}, scores);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "prompt,method,score");
  int row = 0;
  while (std::getline(in, line)) {
    const std::size_t c1 = line.find(',');
    const std::size_t c2 = line.rfind(',');
    const int p = row / 2;
    const int m = row % 2;
    CHECK(line.substr(0, c1) == prompts[std::size_t(p)]);
    CHECK(std::stod(line.substr(c2 + 1)) == scores[std::size_t(p)][std::size_t(m)]);
    ++row;
  }
  CHECK(row == 20);
}

TEST_CASE("experiment config JSON round trip and unknown keys") {
  test_support::TempDir tmp("cfg");
  ExperimentConfig cfg = base_forge_config(tmp);
  const ExperimentConfig back = ExperimentConfig::from_json(cfg.to_json());
  CHECK(back.kind == cfg.kind);
  CHECK(back.backend_path == cfg.backend_path);
  CHECK(back.prompts == cfg.prompts);
  CHECK(back.optimizer.iterations == 25);
  CHECK(back.optimizer.seed == 7);

  CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json{{"kind", "forge"}, {"bogus", 1}}),
                  Error);
  CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json{{"kind", "unknown"}}), Error);
}

TEST_CASE("validation lists every problem and rejects totally") {
  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::forge;
  cfg.backend_path = "";   // missing
  cfg.out_dir = "runs";
  cfg.workers = 0;         // bad
  cfg.optimizer.learning_rate = -1.0;  // bad
  cfg.optimizer.init_mode = InitMode::from_image;  // init_image missing
  const std::vector<std::string> errs = cfg.validate();
  CHECK(errs.size() >= 4);

  // An invalid config leaves the output directory untouched.
  test_support::TempDir tmp("novalid");
  cfg.out_dir = tmp.file("runs-subdir");
  CHECK_THROWS_AS(run_experiment(cfg), Error);
  CHECK_FALSE(fs::exists(cfg.out_dir));
  try {
    run_experiment(cfg);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::invalid_argument);
    CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
  }
}

TEST_CASE("forge experiment writes the full artifact set") {
  test_support::TempDir tmp("forge");
  const ExperimentConfig cfg = base_forge_config(tmp);
  const ReportBundle bundle = run_experiment(cfg);

  const fs::path root(bundle.run_dir);
  CHECK(fs::exists(root / "config.json"));
  CHECK(fs::exists(root / "images" / "init.png"));
  CHECK(fs::exists(root / "images" / "final.png"));
  CHECK(fs::exists(root / "records" / "run.json"));
  CHECK(fs::exists(root / "tables" / "scores.csv"));
  CHECK(bundle.summary.at("kind") == "forge");
  CHECK(bundle.summary.at("final_mean_sim").get<double>() >
        bundle.summary.at("initial_mean_sim").get<double>());

  // The frozen config reproduces the run configuration.
  const auto frozen = nlohmann::json::parse(read_file(root / "config.json"));
  CHECK(frozen.at("optimizer").at("iterations") == 25);
  CHECK(frozen.at("kind") == "forge");
}

TEST_CASE("forge with zero iterations: before/after columns are identical") {
  test_support::TempDir tmp("forge0");
  ExperimentConfig cfg = base_forge_config(tmp);
  cfg.optimizer.iterations = 0;
  const ReportBundle bundle = run_experiment(cfg);
  std::ifstream in(fs::path(bundle.run_dir) / "tables" / "scores.csv");
  std::string line;
  std::getline(in, line);  // header
  int rows = 0;
  while (std::getline(in, line)) {
    const std::size_t c3 = line.find_last_of(',');
    const std::string before_part = line.substr(0, c3);
    const std::size_t c2 = before_part.find_last_of(',');
    CHECK(before_part.substr(c2 + 1) == line.substr(c3 + 1));
    ++rows;
  }
  CHECK(rows == 3);
}

TEST_CASE("identical configs produce byte-identical CSV/JSON outputs") {
  test_support::TempDir tmp("repro");
  ExperimentConfig cfg = base_forge_config(tmp);
  const ReportBundle a = run_experiment(cfg);
  const ReportBundle b = run_experiment(cfg);
  CHECK(a.run_dir != b.run_dir);
  const auto fa = tabular_outputs(a.run_dir);
  const auto fb = tabular_outputs(b.run_dir);
  REQUIRE(fa.size() == fb.size());
  for (const auto& [rel, bytes] : fa) {
    REQUIRE(fb.count(rel) == 1);
    CHECK(bytes == fb.at(rel));
  }
}

TEST_CASE("sweep experiment emits the surface table") {
  test_support::TempDir tmp("sweep");
  ExperimentConfig cfg = base_forge_config(tmp);
  cfg.kind = ExperimentKind::sweep;
  cfg.optimizer.iterations = 10;
  cfg.grid_lower = {-0.5, 0.0};
  cfg.grid_upper = {0.5, 1.0};
  cfg.workers = 2;
  const ReportBundle bundle = run_experiment(cfg);

  const std::string csv = read_file(fs::path(bundle.run_dir) / "tables" / "sweep.csv");
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "lower,upper,mean_score,run_id");
  int rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 4);
  CHECK(bundle.summary.at("failed_cells") == 0);
  CHECK(fs::exists(fs::path(bundle.run_dir) / "records" / "cell-000.json"));
  CHECK(fs::exists(fs::path(bundle.run_dir) / "images" / "cell-003.png"));
}

TEST_CASE("ablate experiment records four arms") {
  test_support::TempDir tmp("ablate");
  ExperimentConfig cfg = base_forge_config(tmp);
  cfg.kind = ExperimentKind::ablate;
  cfg.optimizer.iterations = 15;
  const ReportBundle bundle = run_experiment(cfg);
  for (const char* arm : kAblationArms) {
    CHECK(fs::exists(fs::path(bundle.run_dir) / "records" / (std::string(arm) + ".json")));
  }
  const std::string csv = read_file(fs::path(bundle.run_dir) / "tables" / "ablation.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 4 arms
  CHECK(bundle.summary.at("arms").size() == 4);
}

TEST_CASE("detect experiment scores a manifest and emits density data") {
  test_support::TempDir tmp("detect");
  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::detect;
  cfg.backend_path = write_toy_descriptor(tmp);
  cfg.prompts = {"goldfish", "red fox"};
  cfg.out_dir = tmp.file("runs");
  cfg.thresholds = DetectionThresholds{0.001, 0.01, std::nullopt};

  write_noise_png(tmp.file("color.png"), 11, false);
  write_noise_png(tmp.file("gray.png"), 12, true);
  {
    std::ofstream out(tmp.file("manifest.csv"));
    out << "image_path,label,prompt_set_id\n";
    out << "color.png,tampered,setA\n";
    out << "gray.png,original,setA\n";
  }
  cfg.manifest = tmp.file("manifest.csv");

  const ReportBundle bundle = run_experiment(cfg);
  const fs::path root(bundle.run_dir);
  CHECK(fs::exists(root / "records" / "verdict-000.json"));
  CHECK(fs::exists(root / "records" / "verdict-001.json"));

  // The achromatic image has exactly zero sensitivity -> never flagged.
  const auto v1 = nlohmann::json::parse(read_file(root / "records" / "verdict-001.json"));
  CHECK(v1.at("d") == 0.0);
  CHECK(v1.at("flagged") == false);

  const std::string density = read_file(root / "tables" / "density.csv");
  CHECK(std::count(density.begin(), density.end(), '\n') == 3);  // header + 2 rows
  // Row order matches the manifest; the gray image's two columns are equal.
  std::istringstream in(density);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  std::getline(in, line);
  const std::size_t comma = line.find(',');
  CHECK(line.substr(0, comma) == line.substr(comma + 1));
}

TEST_CASE("detect requires coherent manifests") {
  test_support::TempDir tmp("manifest");
  write_noise_png(tmp.file("a.png"), 1);
  {
    std::ofstream out(tmp.file("mixed.csv"));
    out << "image_path,label,prompt_set_id\na.png,tampered,setA\na.png,original,setB\n";
  }
  CHECK_THROWS_AS(read_manifest(tmp.file("mixed.csv")), Error);
  {
    std::ofstream out(tmp.file("badlabel.csv"));
    out << "image_path,label,prompt_set_id\na.png,fake,setA\n";
  }
  CHECK_THROWS_AS(read_manifest(tmp.file("badlabel.csv")), Error);
  {
    std::ofstream out(tmp.file("ok.csv"));
    out << "image_path,label,prompt_set_id\na.png,tampered,setA\n";
  }
  const auto entries = read_manifest(tmp.file("ok.csv"));
  REQUIRE(entries.size() == 1);
  CHECK(entries[0].tampered);
  CHECK(fs::path(entries[0].image_path).is_absolute());
}

TEST_CASE("calibrate experiment on the synthetic drop statistics") {
  test_support::TempDir tmp("calibrate");
  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::calibrate;
  cfg.backend_path = write_toy_descriptor(tmp);
  cfg.out_dir = tmp.file("runs");
  cfg.optimizer.seed = 99;
  cfg.synthetic = SyntheticCalibrationSpec{};

  const ReportBundle bundle = run_experiment(cfg);
  CHECK(bundle.summary.at("accuracy").get<double>() >= 0.9);
  const fs::path root(bundle.run_dir);
  CHECK(fs::exists(root / "thresholds.json"));
  const auto thr = nlohmann::json::parse(read_file(root / "thresholds.json"));
  CHECK(thr.at("tau1").get<double>() > 0.0);
  CHECK(thr.at("tau2").get<double>() > 0.0);
  const std::string confusion_csv = read_file(root / "tables" / "confusion.csv");
  CHECK(confusion_csv.rfind("tp,fp,tn,fn,accuracy,precision,recall\n", 0) == 0);
  const std::string samples_csv = read_file(root / "tables" / "samples.csv");
  CHECK(std::count(samples_csv.begin(), samples_csv.end(), '\n') == 201);
}

TEST_CASE("image-mode calibration and detection separate forged PNGs from naturals") {
  test_support::TempDir tmp("img-cal");
  const std::string backend_path = write_toy_descriptor(tmp);
  const auto be = load_backend(backend_path);
  const PromptSet prompts = PromptSet::from_strings({"goldfish", "red fox", "school bus"});

  // Tampered samples: forged within [0,1] so the signal survives PNG export.
  for (std::uint64_t seed : {7, 8}) {
    OptimizerConfig cfg;
    cfg.learning_rate = 2.0;
    cfg.iterations = 600;
    cfg.seed = seed;
    cfg.init_mode = InitMode::uniform_noise;
    Rng ir = make_stream(seed, "init-noise");
    const RunRecord rec = forge_image(*be, noise_image(8, 8, 0.0, 1.0, ir), prompts, cfg);
    write_png(tmp.file("forged-" + std::to_string(seed) + ".png"),
              to_raw_8bit(rec.final_image, be->descriptor().preprocess));
  }
  // Originals: weakly saturated images, nearly invariant under grayscale.
  Rng rng(500);
  for (int i = 0; i < 2; ++i) {
    ImageTensor x(8, 8);
    for (int y = 0; y < 8; ++y) {
      for (int px = 0; px < 8; ++px) {
        const double v = rng.uniform(0.1, 0.9);
        for (int c = 0; c < 3; ++c) x.at(y, px, c) = v + rng.uniform(-0.05, 0.05);
      }
    }
    write_png(tmp.file("natural-" + std::to_string(i) + ".png"),
              to_raw_8bit(x, be->descriptor().preprocess));
  }
  {
    std::ofstream out(tmp.file("set.csv"));
    out << "image_path,label,prompt_set_id\n";
    out << "forged-7.png,tampered,toy-set\n";
    out << "forged-8.png,tampered,toy-set\n";
    out << "natural-0.png,original,toy-set\n";
    out << "natural-1.png,original,toy-set\n";
  }

  ExperimentConfig cal;
  cal.kind = ExperimentKind::calibrate;
  cal.backend_path = backend_path;
  cal.prompts = prompts.items();
  cal.manifest = tmp.file("set.csv");
  cal.out_dir = tmp.file("runs");
  const ReportBundle cal_bundle = run_experiment(cal);
  CHECK(cal_bundle.summary.at("accuracy") == 1.0);

  ExperimentConfig det;
  det.kind = ExperimentKind::detect;
  det.backend_path = backend_path;
  det.prompts = prompts.items();
  det.manifest = tmp.file("set.csv");
  det.thresholds_file = (fs::path(cal_bundle.run_dir) / "thresholds.json").string();
  det.out_dir = tmp.file("runs");
  const ReportBundle det_bundle = run_experiment(det);
  const auto confusion = det_bundle.summary.at("confusion");
  CHECK(confusion.at("tp") == 2);
  CHECK(confusion.at("tn") == 2);
  CHECK(confusion.at("fp") == 0);
  CHECK(confusion.at("fn") == 0);
}

TEST_CASE("gradcheck experiment reports max relative error below tolerance") {
  test_support::TempDir tmp("gradcheck");
  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::gradcheck;
  cfg.backend_path = write_toy_descriptor(tmp);
  cfg.prompts = {"goldfish", "red fox"};
  cfg.out_dir = tmp.file("runs");
  cfg.gradcheck_images = 3;

  const ReportBundle bundle = run_experiment(cfg);
  CHECK(bundle.summary.at("pass") == true);
  CHECK(bundle.summary.at("max_rel_error").get<double>() <= 1e-3);
  CHECK(fs::exists(fs::path(bundle.run_dir) / "tables" / "gradcheck.csv"));
}

TEST_CASE("build_report combines forge records and density tables") {
  test_support::TempDir tmp("report");
  ExperimentConfig forge_cfg = base_forge_config(tmp);
  forge_cfg.optimizer.iterations = 5;
  const ReportBundle forge_bundle = run_experiment(forge_cfg);

  ExperimentConfig detect_cfg;
  detect_cfg.kind = ExperimentKind::detect;
  detect_cfg.backend_path = forge_cfg.backend_path;
  detect_cfg.prompts = {"goldfish"};
  detect_cfg.out_dir = tmp.file("runs");
  detect_cfg.thresholds = DetectionThresholds{0.1, 0.3, std::nullopt};
  write_noise_png(tmp.file("img.png"), 21);
  {
    std::ofstream out(tmp.file("m.csv"));
    out << "image_path,label,prompt_set_id\nimg.png,original,setA\n";
  }
  detect_cfg.manifest = tmp.file("m.csv");
  const ReportBundle detect_bundle = run_experiment(detect_cfg);

  const ReportBundle report =
      build_report({forge_bundle.run_dir, detect_bundle.run_dir}, tmp.file("reports"));
  const fs::path root(report.run_dir);
  CHECK(fs::exists(root / "tables" / "scores.csv"));
  CHECK(fs::exists(root / "tables" / "heatmap.csv"));
  CHECK(fs::exists(root / "tables" / "density.csv"));

  const std::string heatmap = read_file(root / "tables" / "heatmap.csv");
  CHECK(std::count(heatmap.begin(), heatmap.end(), '\n') == 4);  // header + 3 prompts x 1 run
  CHECK(report.summary.at("forge_records") == 1);
  CHECK(report.summary.at("density_rows") == 1);

  CHECK_THROWS_AS(build_report({}, tmp.file("reports")), Error);
  CHECK_THROWS_AS(build_report({tmp.file("nonexistent")}, tmp.file("reports")), Error);
}
