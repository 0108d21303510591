#ifndef SFORMER_H
#define SFORMER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Values 2–5 match the command-line exit
 * codes.
 */
typedef enum SformerStatus {
  SFORMER_STATUS_OK = 0,
  /**
   * Null pointer, zero size or invalid UTF-8 argument.
   */
  SFORMER_STATUS_INVALID_ARGUMENT = 1,
  SFORMER_STATUS_IO = 2,
  /**
   * Shape or resolution mismatch.
   */
  SFORMER_STATUS_DIMENSION = 3,
  SFORMER_STATUS_CONFIG = 4,
  /**
   * Non-finite values or out-of-range colours.
   */
  SFORMER_STATUS_NUMERIC = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  SFORMER_STATUS_INTERNAL = 6,
} SformerStatus;

/**
 * Opaque model handle.
 */
typedef struct SformerModel SformerModel;

/**
 * Quality metrics of one prediction against its reference.
 */
typedef struct SformerMetrics {
  /**
   * Decibels; `INFINITY` for identical images.
   */
  double psnr;
  double ssim;
  /**
   * Mean CIE76 colour difference.
   */
  double delta_e;
  /**
   * No-reference underwater colour quality of the prediction.
   */
  double uciqe;
} SformerMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sformer_version(void);

/**
 * Message describing the last failure on this thread; empty after a
 * successful call. The pointer stays valid until the next call made by the
 * same thread.
 */
const char *sformer_last_error(void);

/**
 * Creates a randomly initialized model.
 *
 * `config_text` holds run-configuration text; null selects the defaults.
 * On success `*out` receives a handle to free with `sformer_model_free`.
 *
 * # Safety
 * `config_text` must be null or a NUL-terminated string; `out` must be a
 * valid pointer.
 */
enum SformerStatus sformer_model_init(const char *config_text,
                                      uint64_t seed,
                                      struct SformerModel **out);

/**
 * Loads trained weights. `config_path` may be null for the defaults; the
 * weights must match the configured architecture and resolution.
 *
 * # Safety
 * String arguments must be null (where allowed) or NUL-terminated; `out`
 * must be a valid pointer.
 */
enum SformerStatus sformer_model_load(const char *config_path,
                                      const char *weights_path,
                                      struct SformerModel **out);

/**
 * Writes the model's weights as an SFW1 file.
 *
 * # Safety
 * `model` must be a live handle and `path` NUL-terminated.
 */
enum SformerStatus sformer_model_save(const struct SformerModel *model, const char *path);

/**
 * Input resolution the model was built for.
 *
 * # Safety
 * `model` must be a live handle; `height` and `width` valid pointers.
 */
enum SformerStatus sformer_model_input_size(const struct SformerModel *model,
                                            size_t *height,
                                            size_t *width);

/**
 * Number of learnable scalars.
 *
 * # Safety
 * `model` must be a live handle or null (returns 0).
 */
size_t sformer_model_parameter_count(const struct SformerModel *model);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `model` must come from `sformer_model_init`/`sformer_model_load` and not
 * have been freed.
 */
void sformer_model_free(struct SformerModel *model);

/**
 * Enhances a planar float image of the model's resolution into `output`
 * (same layout and size; may not alias `input`).
 *
 * # Safety
 * `input` and `output` must each hold `3·height·width` floats.
 */
enum SformerStatus sformer_enhance(const struct SformerModel *model,
                                   const float *input,
                                   size_t height,
                                   size_t width,
                                   float *output);

/**
 * Enhances an interleaved 8-bit RGB image (`height·width·3` bytes).
 *
 * # Safety
 * `input` and `output` must each hold `3·height·width` bytes.
 */
enum SformerStatus sformer_enhance_rgb8(const struct SformerModel *model,
                                        const uint8_t *input,
                                        size_t height,
                                        size_t width,
                                        uint8_t *output);

/**
 * Writes the `height·width` SNR prior of a planar float image.
 *
 * # Safety
 * `input` must hold `3·height·width` floats and `output` `height·width`.
 */
enum SformerStatus sformer_snr_map(const float *input, size_t height, size_t width, float *output);

/**
 * Scores a planar float prediction against its reference.
 *
 * # Safety
 * Both images must hold `3·height·width` floats; `out` must be valid.
 */
enum SformerStatus sformer_metrics(const float *prediction,
                                   const float *reference,
                                   size_t height,
                                   size_t width,
                                   struct SformerMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SFORMER_H */
