#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "clipforge/clipforge.h"
#include "doctest.h"
#include "json.hpp"
#include "support/temp_dir.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string write_toy_descriptor(const test_support::TempDir& tmp) {
  const std::string path = tmp.file("toy.json");
  std::ofstream out(path);
  out << R"({"id":"toy-v1","dim":32,"resolution":8,"shift":[0,0,0],"scale":[1,1,1],"seed":42})";
  return path;
}

struct ToyHandle {
  cf_backend* be = nullptr;
  explicit ToyHandle(uint64_t seed = 42, int res = 8) {
    REQUIRE(cf_backend_open_toy(seed, 32, res, &be) == CF_OK);
  }
  ~ToyHandle() { cf_backend_close(be); }
};

// Minimal external adapter: g(x) = fixed linear map of the pixels. The
// gradient is exact by construction, so the whole custom-backend path can be
// verified against pencil math.
struct LinearBackendState {
  int dim = 4;
  int res = 4;
  std::vector<double> weights;  // dim x (res*res*3)
  bool destroyed = false;
};

int linear_encode_image(void* user, const double* pixels, int h, int w, double* out) {
  auto* st = static_cast<LinearBackendState*>(user);
  const int n = h * w * 3;
  for (int d = 0; d < st->dim; ++d) {
    double s = 0.0;
    for (int k = 0; k < n; ++k) s += st->weights[std::size_t(d * n + k)] * pixels[k];
    out[d] = s + (d == 0 ? 0.1 : 0.0);  // bias keeps the zero image non-degenerate
  }
  return 0;
}

int linear_encode_text(void* user, const char* prompt, double* out) {
  auto* st = static_cast<LinearBackendState*>(user);
  const std::size_t len = std::strlen(prompt);
  for (int d = 0; d < st->dim; ++d) out[d] = std::cos(double(len) + d);
  return 0;
}

int linear_image_gradient(void* user, const double*, int h, int w, const double* cot,
                          double* grad) {
  auto* st = static_cast<LinearBackendState*>(user);
  const int n = h * w * 3;
  for (int k = 0; k < n; ++k) {
    double s = 0.0;
    for (int d = 0; d < st->dim; ++d) s += cot[d] * st->weights[std::size_t(d * n + k)];
    grad[k] = s;
  }
  return 0;
}

void linear_destroy(void* user) { static_cast<LinearBackendState*>(user)->destroyed = true; }

}  // namespace

TEST_CASE("status names and version") {
  CHECK(std::string(cf_status_name(CF_OK)) == "ok");
  CHECK(std::string(cf_status_name(CF_ERR_INVALID_ARGUMENT)) == "invalid_argument");
  CHECK(std::string(cf_status_name(CF_ERR_NUMERIC)) == "numeric");
  CHECK(std::string(cf_version()) == "0.1.0");
}

TEST_CASE("backend lifecycle through descriptors and the toy constructor") {
  test_support::TempDir tmp("capi-backend");
  cf_backend* be = nullptr;
  REQUIRE(cf_backend_open(write_toy_descriptor(tmp).c_str(), &be) == CF_OK);
  CHECK(cf_backend_dim(be) == 32);
  CHECK(cf_backend_resolution(be) == 8);
  CHECK(std::string(cf_backend_id(be)) == "toy-v1");
  cf_backend_close(be);

  cf_backend* missing = nullptr;
  CHECK(cf_backend_open(tmp.file("nope.json").c_str(), &missing) == CF_ERR_IO);
  CHECK(std::string(cf_last_error()).find("descriptor") != std::string::npos);
  CHECK(cf_backend_open(nullptr, &missing) == CF_ERR_INVALID_ARGUMENT);
}

TEST_CASE("toy backends from the C API are deterministic") {
  ToyHandle a;
  ToyHandle b;
  cf_image* zero = nullptr;
  REQUIRE(cf_image_create(8, 8, nullptr, &zero) == CF_OK);
  std::vector<double> ga(32), gb(32);
  REQUIRE(cf_encode_image(a.be, zero, ga.data()) == CF_OK);
  REQUIRE(cf_encode_image(b.be, zero, gb.data()) == CF_OK);
  CHECK(ga == gb);
  cf_image_free(zero);
}

TEST_CASE("image create/clone/data and validation") {
  std::vector<double> data(8 * 8 * 3, 0.25);
  cf_image* img = nullptr;
  REQUIRE(cf_image_create(8, 8, data.data(), &img) == CF_OK);
  CHECK(cf_image_height(img) == 8);
  CHECK(cf_image_width(img) == 8);
  CHECK(cf_image_data(img)[0] == 0.25);

  cf_image* copy = nullptr;
  REQUIRE(cf_image_clone(img, &copy) == CF_OK);
  CHECK(cf_image_data(copy)[10] == 0.25);
  cf_image_free(copy);
  cf_image_free(img);

  cf_image* bad = nullptr;
  CHECK(cf_image_create(0, 8, nullptr, &bad) == CF_ERR_INVALID_ARGUMENT);
  data[0] = std::nan("");
  CHECK(cf_image_create(8, 8, data.data(), &bad) == CF_ERR_INVALID_ARGUMENT);
}

TEST_CASE("image PNG round trip and grayscale through the C API") {
  test_support::TempDir tmp("capi-img");
  ToyHandle toy;

  cf_image* noise = nullptr;
  REQUIRE(cf_image_noise(toy.be, 5, 0.0, 1.0, &noise) == CF_OK);
  const std::string path = tmp.file("img.png");
  REQUIRE(cf_image_save_png(toy.be, noise, path.c_str()) == CF_OK);

  cf_image* loaded = nullptr;
  REQUIRE(cf_image_load_png(toy.be, path.c_str(), &loaded) == CF_OK);
  CHECK(cf_image_height(loaded) == 8);
  // 8-bit quantization bounds the round-trip error.
  for (int k = 0; k < 8 * 8 * 3; ++k) {
    CHECK(std::abs(cf_image_data(loaded)[k] - cf_image_data(noise)[k]) <= 0.5 / 255.0 + 1e-12);
  }

  cf_image* gray = nullptr;
  REQUIRE(cf_image_grayscale(toy.be, loaded, &gray) == CF_OK);
  const double* g = cf_image_data(gray);
  CHECK(g[0] == g[1]);
  CHECK(g[1] == g[2]);

  cf_image_free(gray);
  cf_image_free(loaded);
  cf_image_free(noise);

  cf_image* nope = nullptr;
  CHECK(cf_image_load_png(toy.be, tmp.file("missing.png").c_str(), &nope) == CF_ERR_IO);
}

TEST_CASE("prompts through the C API") {
  const char* strs[] = {" goldfish ", "red fox"};
  cf_prompts* p = nullptr;
  REQUIRE(cf_prompts_create(strs, 2, &p) == CF_OK);
  CHECK(cf_prompts_count(p) == 2);
  CHECK(std::string(cf_prompts_get(p, 0)) == "goldfish");
  CHECK(cf_prompts_get(p, 5) == nullptr);
  cf_prompts_free(p);

  const char* dup[] = {"a", "a"};
  cf_prompts* bad = nullptr;
  CHECK(cf_prompts_create(dup, 2, &bad) == CF_ERR_INVALID_ARGUMENT);

  test_support::TempDir tmp("capi-prompts");
  {
    std::ofstream out(tmp.file("p.txt"));
    out << "# comment\ngoldfish\nred fox\n";
  }
  cf_prompts* from_file = nullptr;
  REQUIRE(cf_prompts_load(tmp.file("p.txt").c_str(), &from_file) == CF_OK);
  CHECK(cf_prompts_count(from_file) == 2);
  cf_prompts_free(from_file);
}

TEST_CASE("cosine and scoring") {
  const double a[] = {3.0, 0.0};
  const double b[] = {1.0, 1.0};
  double s = 0.0;
  REQUIRE(cf_cosine(a, b, 2, &s) == CF_OK);
  CHECK(s == doctest::Approx(0.7071067811865476).epsilon(1e-12));

  const double zero[] = {0.0, 0.0};
  CHECK(cf_cosine(a, zero, 2, &s) == CF_ERR_NUMERIC);
  CHECK(std::string(cf_last_error()).find("degenerate") != std::string::npos);

  ToyHandle toy;
  cf_image* img = nullptr;
  REQUIRE(cf_image_noise(toy.be, 3, 0.0, 1.0, &img) == CF_OK);
  double score = 0.0;
  REQUIRE(cf_score(toy.be, img, "goldfish", &score) == CF_OK);
  CHECK(score >= -1.0);
  CHECK(score <= 1.0);

  std::vector<double> g(32), t(32);
  REQUIRE(cf_encode_image(toy.be, img, g.data()) == CF_OK);
  REQUIRE(cf_encode_text(toy.be, "goldfish", t.data()) == CF_OK);
  double via_embeddings = 0.0;
  REQUIRE(cf_cosine(g.data(), t.data(), 32, &via_embeddings) == CF_OK);
  CHECK(via_embeddings == score);
  cf_image_free(img);
}

TEST_CASE("loss and gradient through the C API") {
  ToyHandle toy;
  const char* strs[] = {"goldfish", "red fox"};
  cf_prompts* prompts = nullptr;
  REQUIRE(cf_prompts_create(strs, 2, &prompts) == CF_OK);

  cf_forge_params params;
  cf_forge_params_init(&params);
  CHECK(params.learning_rate == 7.0);
  CHECK(params.momentum == 0.5);
  CHECK(params.iterations == 1000);
  CHECK(params.alpha == 1.0);
  CHECK(params.beta == 10.0);
  CHECK(params.bound_lower == 0.0);
  CHECK(params.bound_upper == 1.0);

  cf_image* img = nullptr;
  REQUIRE(cf_image_noise(toy.be, 17, -0.2, 1.2, &img) == CF_OK);

  cf_loss_breakdown bd;
  std::vector<double> sims(2);
  REQUIRE(cf_total_loss(toy.be, img, prompts, &params, &bd, sims.data()) == CF_OK);
  CHECK(bd.total == doctest::Approx(bd.align + params.alpha * bd.var + params.beta * bd.pixel));
  CHECK(bd.align == doctest::Approx(-(sims[0] + sims[1]) / 2.0).epsilon(1e-12));

  std::vector<double> grad(8 * 8 * 3);
  cf_loss_breakdown bd2;
  REQUIRE(cf_loss_gradient(toy.be, img, prompts, &params, grad.data(), &bd2) == CF_OK);
  CHECK(bd2.total == bd.total);
  double norm = 0.0;
  for (double v : grad) norm += v * v;
  CHECK(norm > 0.0);

  cf_image_free(img);
  cf_prompts_free(prompts);
}

TEST_CASE("forging and records through the C API") {
  ToyHandle toy;
  const char* strs[] = {"goldfish"};
  cf_prompts* prompts = nullptr;
  REQUIRE(cf_prompts_create(strs, 1, &prompts) == CF_OK);
  cf_image* init = nullptr;
  REQUIRE(cf_image_noise(toy.be, 7, 0.0, 1.0, &init) == CF_OK);

  cf_forge_params params;
  cf_forge_params_init(&params);
  params.learning_rate = 0.5;
  params.iterations = 50;

  cf_image* final_img = nullptr;
  cf_record* rec = nullptr;
  REQUIRE(cf_forge(toy.be, init, prompts, &params, &final_img, &rec) == CF_OK);
  REQUIRE(rec);
  CHECK(cf_record_length(rec) == 51);

  cf_loss_breakdown first, last;
  REQUIRE(cf_record_breakdown(rec, 0, &first) == CF_OK);
  REQUIRE(cf_record_breakdown(rec, 50, &last) == CF_OK);
  CHECK(-last.align > -first.align);  // mean similarity rose
  CHECK(cf_record_breakdown(rec, 51, &last) == CF_ERR_INVALID_ARGUMENT);

  double sim = 0.0;
  REQUIRE(cf_record_sims(rec, 50, &sim) == CF_OK);
  CHECK(sim == doctest::Approx(-last.align).epsilon(1e-12));

  char* json_text = nullptr;
  REQUIRE(cf_record_to_json(rec, &json_text) == CF_OK);
  const json j = json::parse(json_text);
  CHECK(j.at("kind") == "forge_run");
  CHECK(j.at("trace").size() == 51);
  cf_string_free(json_text);

  // Master check: the forged image beats a random stand-in on its prompt.
  cf_image* standin = nullptr;
  REQUIRE(cf_image_noise(toy.be, 1234, 0.0, 1.0, &standin) == CF_OK);
  const cf_image* standins[] = {standin};
  double margin = 0.0;
  int satisfied = 0;
  REQUIRE(cf_check_master(toy.be, final_img, prompts, standins, 1, &margin, &satisfied) == CF_OK);
  CHECK(margin > 0.0);
  CHECK(satisfied == 1);

  cf_image_free(standin);
  cf_image_free(final_img);
  cf_record_free(rec);
  cf_image_free(init);
  cf_prompts_free(prompts);
}

TEST_CASE("forging divergence surfaces as CF_ERR_NUMERIC with outputs") {
  ToyHandle toy;
  const char* strs[] = {"goldfish"};
  cf_prompts* prompts = nullptr;
  REQUIRE(cf_prompts_create(strs, 1, &prompts) == CF_OK);
  cf_image* init = nullptr;
  REQUIRE(cf_image_noise(toy.be, 7, 0.0, 1.0, &init) == CF_OK);

  cf_forge_params params;
  cf_forge_params_init(&params);
  params.learning_rate = 1e308;
  params.iterations = 10;

  cf_image* final_img = nullptr;
  cf_record* rec = nullptr;
  CHECK(cf_forge(toy.be, init, prompts, &params, &final_img, &rec) == CF_ERR_NUMERIC);
  CHECK(std::string(cf_last_error()).find("diverged") != std::string::npos);
  REQUIRE(final_img);
  REQUIRE(rec);
  for (int k = 0; k < 8 * 8 * 3; ++k) CHECK(std::isfinite(cf_image_data(final_img)[k]));

  cf_image_free(final_img);
  cf_record_free(rec);
  cf_image_free(init);
  cf_prompts_free(prompts);
}

TEST_CASE("custom vtable backends satisfy the adapter contract") {
  LinearBackendState st;
  const int n = st.res * st.res * 3;
  st.weights.resize(std::size_t(st.dim * n));
  for (int i = 0; i < st.dim * n; ++i) {
    st.weights[std::size_t(i)] = std::sin(0.1 * i) / n;
  }

  cf_backend_vtable vt{};
  vt.encode_image = linear_encode_image;
  vt.encode_text = linear_encode_text;
  vt.image_gradient = linear_image_gradient;
  vt.destroy = linear_destroy;
  vt.thread_safe = 1;

  cf_backend* be = nullptr;
  REQUIRE(cf_backend_open_custom(&vt, &st, "linear-test", st.dim, st.res, nullptr, nullptr, &be) ==
          CF_OK);
  CHECK(cf_backend_dim(be) == 4);
  CHECK(std::string(cf_backend_id(be)) == "linear-test");

  const char* strs[] = {"first prompt", "second"};
  cf_prompts* prompts = nullptr;
  REQUIRE(cf_prompts_create(strs, 2, &prompts) == CF_OK);

  cf_image* init = nullptr;
  REQUIRE(cf_image_noise(be, 3, 0.0, 1.0, &init) == CF_OK);
  CHECK(cf_image_height(init) == 4);

  cf_forge_params params;
  cf_forge_params_init(&params);
  params.learning_rate = 0.05;
  params.iterations = 200;

  cf_image* final_img = nullptr;
  cf_record* rec = nullptr;
  REQUIRE(cf_forge(be, init, prompts, &params, &final_img, &rec) == CF_OK);
  cf_loss_breakdown first, last;
  REQUIRE(cf_record_breakdown(rec, 0, &first) == CF_OK);
  REQUIRE(cf_record_breakdown(rec, cf_record_length(rec) - 1, &last) == CF_OK);
  CHECK(-last.align > -first.align);  // forging works through the adapter

  cf_image_free(final_img);
  cf_record_free(rec);
  cf_image_free(init);
  cf_prompts_free(prompts);
  cf_backend_close(be);
  CHECK(st.destroyed);
}

TEST_CASE("detection through the C API") {
  ToyHandle toy;
  const char* strs[] = {"goldfish", "red fox"};
  cf_prompts* prompts = nullptr;
  REQUIRE(cf_prompts_create(strs, 2, &prompts) == CF_OK);

  cf_image* img = nullptr;
  REQUIRE(cf_image_noise(toy.be, 8, 0.0, 1.0, &img) == CF_OK);
  double d = -1.0, s = 0.0;
  std::vector<double> deltas(2);
  REQUIRE(cf_grayscale_sensitivity(toy.be, img, prompts, &d, &s, deltas.data()) == CF_OK);
  CHECK(d >= 0.0);
  CHECK(d == doctest::Approx((deltas[0] + deltas[1]) / 2.0).epsilon(1e-12));

  cf_verdict v;
  REQUIRE(cf_detect(0.3, 0.6, 0.1, 0.3, nullptr, &v) == CF_OK);
  CHECK(v.flagged == 1);
  CHECK(v.ratio == doctest::Approx(0.5));
  const double theta = 0.9;
  REQUIRE(cf_detect(0.3, 0.6, 0.1, 0.3, &theta, &v) == CF_OK);
  CHECK(v.flagged == 0);

  // Calibration over a separable synthetic set.
  std::vector<double> ds, ss;
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) {
    const bool tampered = i % 2 == 0;
    ds.push_back(tampered ? 0.3 : 0.02);
    ss.push_back(0.5);
    labels.push_back(tampered ? 1 : 0);
  }
  double tau1 = 0.0, tau2 = 0.0;
  cf_confusion cm;
  REQUIRE(cf_calibrate(ds.data(), ss.data(), labels.data(), ds.size(), 100, &tau1, &tau2, &cm) ==
          CF_OK);
  CHECK(cm.accuracy == 1.0);
  CHECK(tau1 > 0.0);
  CHECK(tau1 < 0.3);

  cf_image_free(img);
  cf_prompts_free(prompts);
}

TEST_CASE("experiments and reports through the C API") {
  test_support::TempDir tmp("capi-exp");
  const std::string backend = write_toy_descriptor(tmp);

  json cfg{{"kind", "forge"},
           {"backend", backend},
           {"prompts", {"goldfish", "red fox"}},
           {"seed", 7},
           {"out", tmp.file("runs")},
           {"optimizer",
            {{"learning_rate", 0.5}, {"iterations", 10}, {"init_mode", "uniform_noise"}}}};

  char* report = nullptr;
  REQUIRE(cf_run_experiment_json(cfg.dump().c_str(), &report) == CF_OK);
  const json summary = json::parse(report);
  CHECK(summary.at("kind") == "forge");
  const std::string run_dir = summary.at("run_dir").get<std::string>();
  CHECK(fs::exists(fs::path(run_dir) / "records" / "run.json"));
  cf_string_free(report);

  // Config through a file.
  {
    std::ofstream out(tmp.file("cfg.json"));
    out << cfg.dump();
  }
  char* report2 = nullptr;
  REQUIRE(cf_run_experiment_file(tmp.file("cfg.json").c_str(), &report2) == CF_OK);
  cf_string_free(report2);

  // Validation failures come back as CF_ERR_INVALID_ARGUMENT with the list.
  json bad = cfg;
  bad.erase("backend");
  char* report3 = nullptr;
  CHECK(cf_run_experiment_json(bad.dump().c_str(), &report3) == CF_ERR_INVALID_ARGUMENT);
  CHECK(std::string(cf_last_error()).find("backend") != std::string::npos);
  CHECK(cf_run_experiment_json("{not json", &report3) == CF_ERR_INVALID_ARGUMENT);

  // Report over the finished run.
  const char* dirs[] = {run_dir.c_str()};
  char* report4 = nullptr;
  REQUIRE(cf_report_runs(dirs, 1, tmp.file("reports").c_str(), &report4) == CF_OK);
  const json rj = json::parse(report4);
  CHECK(rj.at("forge_records") == 1);
  cf_string_free(report4);
}
