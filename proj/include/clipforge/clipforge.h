/*
 * clipforge C API.
 *
 * A C++ core behind a flat extern-C surface: opaque handles, status codes,
 * and a thread-local error message. Everything the CLI does goes through
 * this header, so any language with a C FFI can drive forging, detection,
 * calibration and the experiment harness.
 *
 * Conventions:
 *  - Every fallible function returns cf_status; CF_OK is 0.
 *  - On failure, cf_last_error() returns a message valid until the next
 *    failing call on the same thread.
 *  - Objects are created into out-parameters and released with their
 *    matching *_free/_close function. NULL is always safe to free.
 *  - Images are height x width x 3 doubles, row-major, channels interleaved,
 *    in the backend's model pixel space.
 */
#ifndef CLIPFORGE_H
#define CLIPFORGE_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cf_status {
  CF_OK = 0,
  CF_ERR_INVALID_ARGUMENT = 1, /* bad input or failed validation */
  CF_ERR_IO = 2,               /* filesystem, decode/encode */
  CF_ERR_NUMERIC = 3,          /* degenerate or non-finite values, divergence */
  CF_ERR_RUNTIME = 4
} cf_status;

const char* cf_status_name(cf_status status);
const char* cf_version(void);

/* Thread-local message describing the most recent failure on this thread. */
const char* cf_last_error(void);

void cf_string_free(char* s);

/* -------------------------------------------------------------------------
 * Backends
 */
typedef struct cf_backend cf_backend;

/* Adapter vtable for external encoders (a pretrained checkpoint, a remote
 * service, ...). All callbacks must be deterministic; gradient must be the
 * exact vector-Jacobian product d<cotangent, g(x)>/dx. Return 0 on success,
 * nonzero on failure. Set thread_safe to 0 to have the harness serialize
 * calls. */
typedef struct cf_backend_vtable {
  int (*encode_image)(void* user, const double* pixels, int height, int width,
                      double* embedding_out);
  int (*encode_text)(void* user, const char* prompt, double* embedding_out);
  int (*image_gradient)(void* user, const double* pixels, int height, int width,
                        const double* cotangent, double* grad_out);
  void (*destroy)(void* user); /* optional, may be NULL */
  int thread_safe;
} cf_backend_vtable;

/* Loads a JSON descriptor {id, dim, resolution, shift[3], scale[3], seed}.
 * Ids starting with "toy" get the built-in deterministic encoder. */
cf_status cf_backend_open(const char* descriptor_path, cf_backend** out);
cf_status cf_backend_open_toy(uint64_t seed, int dim, int resolution, cf_backend** out);
/* Wraps an external adapter. shift/scale may be NULL for identity. */
cf_status cf_backend_open_custom(const cf_backend_vtable* vtable, void* user, const char* id,
                                 int dim, int resolution, const double* shift3,
                                 const double* scale3, cf_backend** out);
void cf_backend_close(cf_backend* backend);

int cf_backend_dim(const cf_backend* backend);
int cf_backend_resolution(const cf_backend* backend);
const char* cf_backend_id(const cf_backend* backend);

/* -------------------------------------------------------------------------
 * Images
 */
typedef struct cf_image cf_image;

/* data may be NULL for a zero image; otherwise height*width*3 doubles. */
cf_status cf_image_create(int height, int width, const double* data, cf_image** out);
cf_status cf_image_clone(const cf_image* image, cf_image** out);
/* Decode a PNG and run the backend's preprocessing (resize, [0,1], shift/scale). */
cf_status cf_image_load_png(const cf_backend* backend, const char* path, cf_image** out);
/* Map back to the raw domain, clamp to [0,1], write an 8-bit RGB PNG. */
cf_status cf_image_save_png(const cf_backend* backend, const cf_image* image, const char* path);
/* I.i.d. uniform pixels over [lo, hi] at the backend resolution, drawn from
 * the "init-noise" stream of seed. */
cf_status cf_image_noise(const cf_backend* backend, uint64_t seed, double lo, double hi,
                         cf_image** out);
/* BT.601 grayscale in the raw domain through the backend's preprocessing. */
cf_status cf_image_grayscale(const cf_backend* backend, const cf_image* image, cf_image** out);
void cf_image_free(cf_image* image);

int cf_image_height(const cf_image* image);
int cf_image_width(const cf_image* image);
/* Borrowed pointer, valid while the image lives. */
const double* cf_image_data(const cf_image* image);

/* -------------------------------------------------------------------------
 * Prompts
 */
typedef struct cf_prompts cf_prompts;

/* Trimmed, nonempty, unique; order preserved and index-aligned with every
 * per-prompt output. */
cf_status cf_prompts_create(const char* const* prompts, size_t count, cf_prompts** out);
/* UTF-8 file, one prompt per line, '#' comments. */
cf_status cf_prompts_load(const char* path, cf_prompts** out);
void cf_prompts_free(cf_prompts* prompts);

size_t cf_prompts_count(const cf_prompts* prompts);
const char* cf_prompts_get(const cf_prompts* prompts, size_t index);

/* -------------------------------------------------------------------------
 * Encoding and scoring
 */

/* embedding_out must hold cf_backend_dim doubles. */
cf_status cf_encode_image(const cf_backend* backend, const cf_image* image, double* embedding_out);
cf_status cf_encode_text(const cf_backend* backend, const char* prompt, double* embedding_out);
/* Cosine similarity of two raw embeddings (normalized internally; degenerate
 * norms are CF_ERR_NUMERIC). */
cf_status cf_cosine(const double* a, const double* b, size_t dim, double* score_out);
/* Cosine similarity between an image and a prompt under this backend. */
cf_status cf_score(const cf_backend* backend, const cf_image* image, const char* prompt,
                   double* score_out);

/* -------------------------------------------------------------------------
 * Losses and forging
 */
typedef struct cf_loss_breakdown {
  double align;
  double var;
  double pixel;
  double total; /* always align + alpha*var + beta*pixel */
} cf_loss_breakdown;

typedef struct cf_forge_params {
  double learning_rate; /* > 0 */
  double momentum;      /* [0, 1) */
  int64_t iterations;   /* >= 0 */
  double alpha;         /* variance weight, >= 0 */
  double beta;          /* pixel-guard weight, >= 0 */
  double bound_lower;
  double bound_upper;
  uint64_t seed;
} cf_forge_params;

/* Full-scale defaults: lr 7, momentum 0.5, 1000 iterations, alpha 1, beta 10,
 * bounds [0, 1]. Toy-backend runs want a much smaller learning rate. */
void cf_forge_params_init(cf_forge_params* params);

/* Tripartite loss of an image against a prompt set; sims_out (optional) takes
 * cf_prompts_count per-prompt similarities. */
cf_status cf_total_loss(const cf_backend* backend, const cf_image* image,
                        const cf_prompts* prompts, const cf_forge_params* params,
                        cf_loss_breakdown* breakdown_out, double* sims_out);
/* Analytic pixel gradient of the total loss; grad_out holds h*w*3 doubles. */
cf_status cf_loss_gradient(const cf_backend* backend, const cf_image* image,
                           const cf_prompts* prompts, const cf_forge_params* params,
                           double* grad_out, cf_loss_breakdown* breakdown_out);

typedef struct cf_record cf_record;

/* Momentum-SGD forging run. Outputs are optional individually; a diverged run
 * returns CF_ERR_NUMERIC but still yields the record and last finite image. */
cf_status cf_forge(const cf_backend* backend, const cf_image* init, const cf_prompts* prompts,
                   const cf_forge_params* params, cf_image** final_out, cf_record** record_out);

size_t cf_record_length(const cf_record* record); /* iterations + 1 unless diverged */
cf_status cf_record_breakdown(const cf_record* record, size_t index, cf_loss_breakdown* out);
/* sims_out takes one double per prompt of the forging run. */
cf_status cf_record_sims(const cf_record* record, size_t index, double* sims_out);
/* Serialized record (losses, sims, config; no pixels, no wall-clock). Free
 * with cf_string_free. */
cf_status cf_record_to_json(const cf_record* record, char** json_out);
void cf_record_free(cf_record* record);

/* Master-image condition: margins_out[k] = s(x_fo, c_k) - s(x_k, c_k) for the
 * k-th (prompt, stand-in image) pair; satisfied_out becomes 1 iff every
 * margin is strictly positive. */
cf_status cf_check_master(const cf_backend* backend, const cf_image* x_fo,
                          const cf_prompts* prompts, const cf_image* const* standins,
                          size_t count, double* margins_out, int* satisfied_out);

/* -------------------------------------------------------------------------
 * Detection
 */
typedef struct cf_verdict {
  double d;
  double s;
  double ratio;
  int flagged;
  int degenerate_score;
} cf_verdict;

/* d_out = mean_i |s(x,c_i) - s(Gray(x),c_i)|; s_out = mean_i s(x,c_i);
 * deltas_out (optional) takes the per-prompt absolute differences. */
cf_status cf_grayscale_sensitivity(const cf_backend* backend, const cf_image* image,
                                   const cf_prompts* prompts, double* d_out, double* s_out,
                                   double* deltas_out);

/* Strict dual-threshold rule: flagged iff d > tau1 AND d/s > tau2 AND
 * (theta == NULL or s > *theta). A near-zero score degrades to "not flagged"
 * with degenerate_score set. */
cf_status cf_detect(double d, double s, double tau1, double tau2, const double* theta,
                    cf_verdict* verdict_out);

typedef struct cf_confusion {
  int64_t tp, fp, tn, fn;
  double accuracy, precision, recall;
} cf_confusion;

/* Grid search (grid_cells per axis over the observed ranges of d and d/s)
 * maximizing accuracy; ties prefer the largest worst-case margin, then the
 * smallest tau1. labels[i] nonzero means tampered. */
cf_status cf_calibrate(const double* d, const double* s, const int* labels, size_t count,
                       int grid_cells, double* tau1_out, double* tau2_out,
                       cf_confusion* confusion_out);

/* -------------------------------------------------------------------------
 * Experiments
 */

/* Runs one experiment from a JSON config (see README for the schema; kinds:
 * forge, sweep, ablate, detect, calibrate, gradcheck). On success
 * *report_json_out (optional) receives the summary, including the created
 * run directory. Free with cf_string_free. */
cf_status cf_run_experiment_json(const char* config_json, char** report_json_out);
cf_status cf_run_experiment_file(const char* config_path, char** report_json_out);

/* Post-processing: combine finished run directories into score/heatmap/
 * density/confusion tables under a new report directory. */
cf_status cf_report_runs(const char* const* run_dirs, size_t count, const char* out_dir,
                         char** report_json_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* CLIPFORGE_H */
