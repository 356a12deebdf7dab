#ifndef SALAUD_SALAUD_H
#define SALAUD_SALAUD_H

/* Saliency audit library: synthetic lesion data, toy CNN training,
 * Grad-CAM / Kernel SHAP explanations and SSIM-based sanity checks.
 *
 * Every function returns a salaud_status. On failure the message is available
 * from salaud_last_error() on the same thread. Configs are JSON objects whose
 * keys override library defaults; NULL or "" means all defaults. Strings
 * returned through char** must be released with salaud_free_string. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SALAUD_API __declspec(dllexport)
#elif defined(SALAUD_BUILDING_LIBRARY)
#define SALAUD_API __attribute__((visibility("default")))
#else
#define SALAUD_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum salaud_status {
  SALAUD_OK = 0,
  SALAUD_ERR_INVALID_ARGUMENT = 1,
  SALAUD_ERR_SHAPE = 2,
  SALAUD_ERR_DOMAIN = 3,
  SALAUD_ERR_INDEX = 4,
  SALAUD_ERR_CONSISTENCY = 5,
  SALAUD_ERR_SPEC = 6,
  SALAUD_ERR_FORMAT = 7,
  SALAUD_ERR_CONFIG = 8,
  SALAUD_ERR_SIZE = 9,
  SALAUD_ERR_TRAINING = 10,
  SALAUD_ERR_SOLVER = 11,
  SALAUD_ERR_CAPACITY = 12,
  SALAUD_ERR_ARCHITECTURE = 13,
  SALAUD_ERR_SELECTION = 14,
  SALAUD_ERR_IO = 15,
  SALAUD_ERR_INTERNAL = 99
} salaud_status;

typedef struct salaud_dataset salaud_dataset;
typedef struct salaud_model salaud_model;
typedef struct salaud_suite salaud_suite;
typedef struct salaud_image salaud_image;
typedef struct salaud_map salaud_map;

SALAUD_API const char* salaud_version(void);
SALAUD_API const char* salaud_status_name(salaud_status status);
/* Message of the last failed call on this thread ("" if none). */
SALAUD_API const char* salaud_last_error(void);
SALAUD_API void salaud_free_string(char* s);
/* Worker cap for parallel sections; results do not depend on it. 0 = 1. */
SALAUD_API salaud_status salaud_set_threads(int threads);

/* kind: "generate", "train", "suite", "explain", "ssim". */
SALAUD_API salaud_status salaud_default_config(const char* kind, char** json_out);

/* ---- datasets ---- */
SALAUD_API salaud_status salaud_dataset_generate(const char* config_json, salaud_dataset** out);
SALAUD_API salaud_status salaud_dataset_write(const salaud_dataset* ds, const char* dir);
SALAUD_API salaud_status salaud_dataset_read(const char* dir, salaud_dataset** out);
SALAUD_API salaud_status salaud_dataset_size(const salaud_dataset* ds, size_t* count);
SALAUD_API salaud_status salaud_dataset_manifest(const salaud_dataset* ds, char** json_out);
/* Selection keys: split ("train"|"test"|"all", default "test"), label (0|1),
 * ids (array), count (interleaves classes when no label is given),
 * artifact (bool). Returns a JSON array of image ids. */
SALAUD_API salaud_status salaud_dataset_select(const salaud_dataset* ds, const char* selection_json, char** ids_json);
SALAUD_API salaud_status salaud_dataset_image(const salaud_dataset* ds, const char* image_id, salaud_image** out);
SALAUD_API void salaud_dataset_free(salaud_dataset* ds);

/* ---- images (3 x H x W, values in [0,1]) ---- */
SALAUD_API salaud_status salaud_image_read_png(const char* path, salaud_image** out);
SALAUD_API salaud_status salaud_image_write_png(const salaud_image* image, const char* path);
SALAUD_API salaud_status salaud_image_size(const salaud_image* image, int* height, int* width);
SALAUD_API void salaud_image_free(salaud_image* image);

/* ---- models ---- */
/* Untrained network. network_json NULL = toy spec for height x width. */
SALAUD_API salaud_status salaud_model_init(const char* model_id, const char* network_json, int height, int width,
                                           uint64_t init_seed, salaud_model** out);
/* Trains a copy of `initial` (NULL = fresh toy network seeded from the train
 * seed) on the train split and evaluates on the test split. history_json may
 * be NULL. */
SALAUD_API salaud_status salaud_model_train(const salaud_dataset* ds, const salaud_model* initial, const char* model_id,
                                            const char* train_json, salaud_model** out, char** history_json);
SALAUD_API salaud_status salaud_model_save(const salaud_model* model, const char* path);
SALAUD_API salaud_status salaud_model_load(const char* path, salaud_model** out);
/* Spec, provenance and metrics. */
SALAUD_API salaud_status salaud_model_info(const salaud_model* model, char** json_out);
SALAUD_API salaud_status salaud_model_evaluate(const salaud_model* model, const salaud_dataset* ds, char** metrics_json);
SALAUD_API salaud_status salaud_model_randomize_layer(const salaud_model* model, int layer_id, uint64_t seed,
                                                      salaud_model** out);
SALAUD_API salaud_status salaud_model_predict(const salaud_model* model, const salaud_image* image,
                                              double* melanoma_probability);
/* 1 when networks (spec and parameters) are identical. */
SALAUD_API salaud_status salaud_model_equal(const salaud_model* a, const salaud_model* b, int* equal);
SALAUD_API void salaud_model_free(salaud_model* model);

/* ---- suites ---- */
SALAUD_API salaud_status salaud_suite_train(const salaud_dataset* ds, const char* suite_json, salaud_suite** out);
SALAUD_API salaud_status salaud_suite_size(const salaud_suite* suite, size_t* count);
/* New handle owning a copy of member i. */
SALAUD_API salaud_status salaud_suite_model(const salaud_suite* suite, size_t index, salaud_model** out);
SALAUD_API salaud_status salaud_suite_summary(const salaud_suite* suite, char** json_out, char** csv_out);
SALAUD_API void salaud_suite_free(salaud_suite* suite);

/* ---- explanations ---- */
/* details_json (may be NULL) receives Grad-CAM alphas or the SHAP attribution. */
SALAUD_API salaud_status salaud_explain(const salaud_model* model, const salaud_image* image, const char* explain_json,
                                        salaud_map** out, char** details_json);

/* ---- maps ---- */
SALAUD_API salaud_status salaud_map_create(int height, int width, const double* values, salaud_map** out);
SALAUD_API salaud_status salaud_map_size(const salaud_map* map, int* height, int* width);
/* Borrowed pointer valid until the map is freed. */
SALAUD_API salaud_status salaud_map_values(const salaud_map* map, const double** values);
SALAUD_API salaud_status salaud_map_to_json(const salaud_map* map, char** json_out);
SALAUD_API salaud_status salaud_map_write_csv(const salaud_map* map, const char* path);
SALAUD_API salaud_status salaud_map_read_csv(const char* path, salaud_map** out);
SALAUD_API salaud_status salaud_map_render_overlay(const salaud_map* map, const salaud_image* image, const char* path);
/* SSIM of the min-max normalized maps; normalize = 0 compares raw values. */
SALAUD_API salaud_status salaud_ssim(const salaud_map* a, const salaud_map* b, const char* ssim_json, int normalize,
                                     double* out);
SALAUD_API salaud_status salaud_corner_mass_score(const salaud_map* map, double corner_fraction, double* out);
SALAUD_API void salaud_map_free(salaud_map* map);

/* ---- audits ----
 * images_json is a selection as in salaud_dataset_select. Reports come back
 * as JSON. panel_dir (may be NULL) receives one PNG panel per image. */
SALAUD_API salaud_status salaud_audit_reproducibility(const salaud_model* model, const salaud_dataset* ds,
                                                      const char* images_json, const char* explain_json, int n_repeats,
                                                      const char* panel_dir, char** report_json);
/* layers: "top<N>", "all" or "11,9,6". mode: "cascading" | "independent". */
SALAUD_API salaud_status salaud_audit_model_dependence(const salaud_model* model, const salaud_dataset* ds,
                                                       const char* images_json, const char* explain_json,
                                                       const char* layers, uint64_t seed, const char* mode,
                                                       const char* panel_dir, char** report_json);
SALAUD_API salaud_status salaud_audit_sensitivity(const salaud_model* const* models, size_t n_models,
                                                  double auc_tolerance, const salaud_dataset* ds,
                                                  const char* images_json, const char* explain_json,
                                                  const char* panel_dir, char** report_json);
/* control may be NULL (no verdict). */
SALAUD_API salaud_status salaud_audit_spurious(const salaud_model* biased, const salaud_model* control,
                                               const salaud_dataset* ds, const char* images_json,
                                               const char* explain_json, double corner_fraction, double threshold,
                                               const char* panel_dir, char** report_json);

#ifdef __cplusplus
}
#endif

#endif
