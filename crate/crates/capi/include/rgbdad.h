#ifndef RGBDAD_H
#define RGBDAD_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum RgbdadStatus {
  RGBDAD_STATUS_OK = 0,
  /**
   * Bad arguments, bad config, missing inputs.
   */
  RGBDAD_STATUS_USER_ERROR = 1,
  /**
   * I/O failures, corrupt data, unexpected internal conditions.
   */
  RGBDAD_STATUS_INTERNAL_ERROR = 2,
  RGBDAD_STATUS_NULL_POINTER = 3,
  RGBDAD_STATUS_INVALID_UTF8 = 4,
} RgbdadStatus;

/**
 * Opaque trained model: checkpoint contents plus the reconstructed frozen
 * backbone.
 */
typedef struct RgbdadModel RgbdadModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *rgbdad_version(void);

/**
 * Message of the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *rgbdad_last_error(void);

/**
 * Generate the synthetic benchmark dataset under `out_dir`.
 * `config_json` is an optional run-config document (NULL for defaults).
 *
 * # Safety
 * `out_dir` must be a valid C string; `config_json` may be NULL.
 */
enum RgbdadStatus rgbdad_generate_dataset(const char *out_dir,
                                          const char *config_json,
                                          uint64_t seed);

/**
 * Train one class and write the checkpoint to `checkpoint_out`.
 *
 * # Safety
 * String arguments must be valid C strings; `config_json` may be NULL.
 */
enum RgbdadStatus rgbdad_train(const char *data_root,
                               const char *class_name,
                               const char *config_json,
                               uint64_t seed,
                               const char *checkpoint_out);

/**
 * Load a checkpoint into an opaque model handle.
 *
 * # Safety
 * `checkpoint_path` must be a valid C string; `out_model` must point to
 * writable storage for one pointer.
 */
enum RgbdadStatus rgbdad_model_load(const char *checkpoint_path, struct RgbdadModel **out_model);

/**
 * Release a model handle. NULL is a no-op.
 *
 * # Safety
 * `model` must have come from [`rgbdad_model_load`] and not be freed twice.
 */
void rgbdad_model_free(struct RgbdadModel *model);

/**
 * Image side length the model expects, in pixels.
 *
 * # Safety
 * `model` must be a live handle; `out_size` must be writable.
 */
enum RgbdadStatus rgbdad_model_image_size(const struct RgbdadModel *model, uint32_t *out_size);

/**
 * Score one sample directory. Writes the image-level score to
 * `out_image_score`; when `raw_map_out` is non-NULL the pixel map is
 * written there in the raw f32 format (u32 height, u32 width, then values,
 * all little-endian).
 *
 * # Safety
 * `model` must be a live handle; `sample_dir` a valid C string;
 * `out_image_score` writable; `raw_map_out` NULL or a valid C string.
 */
enum RgbdadStatus rgbdad_model_score_sample(const struct RgbdadModel *model,
                                            const char *sample_dir,
                                            double sigma_smooth,
                                            double *out_image_score,
                                            const char *raw_map_out);

/**
 * Evaluate a checkpoint on a class's test split. Metric outputs may be
 * NULL when not wanted; `report_json_out` optionally receives the report.
 *
 * # Safety
 * Strings must be valid C strings (`report_json_out` may be NULL); metric
 * out-pointers may be NULL.
 */
enum RgbdadStatus rgbdad_evaluate(const char *data_root,
                                  const char *class_name,
                                  const char *checkpoint_path,
                                  double sigma_smooth,
                                  double fpr_limit,
                                  const char *report_json_out,
                                  double *out_i_auroc,
                                  double *out_p_auroc,
                                  double *out_p_aupro);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RGBDAD_H */
