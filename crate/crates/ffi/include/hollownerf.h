#ifndef HOLLOWNERF_H
#define HOLLOWNERF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values are stable.
 */
typedef enum HnStatus {
  HN_STATUS_OK = 0,
  HN_STATUS_NULL_POINTER = 1,
  HN_STATUS_CONFIG = 2,
  HN_STATUS_USAGE = 3,
  HN_STATUS_NUMERICAL = 4,
  HN_STATUS_INTEGRITY = 5,
  HN_STATUS_LOAD = 6,
  HN_STATUS_IO = 7,
  HN_STATUS_BUFFER_TOO_SMALL = 8,
  HN_STATUS_PANIC = 9,
} HnStatus;

/**
 * Opaque model handle.
 */
typedef struct HnModel HnModel;

/**
 * Trainable parameter totals.
 */
typedef struct HnParamCount {
  uint64_t hashgrid;
  uint64_t mlp;
  uint64_t saliency;
  uint64_t total;
} HnParamCount;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *hn_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hn_version(void);

/**
 * Fresh model. `config_json` may be NULL for the desk preset; otherwise
 * its fields are merged over the desk preset.
 *
 * # Safety
 * `config_json` must be NULL or a valid C string; `out` must be writable.
 */
enum HnStatus hn_model_new(const char *config_json, uint64_t seed, struct HnModel **out);

/**
 * Loads a checkpoint.
 *
 * # Safety
 * `path` must be a valid C string; `out` must be writable.
 */
enum HnStatus hn_model_load(const char *path, struct HnModel **out);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void hn_model_free(struct HnModel *model);

/**
 * Writes the model as a checkpoint.
 *
 * # Safety
 * `model` must be a live handle and `path` a valid C string.
 */
enum HnStatus hn_model_save(const struct HnModel *model, const char *path);

/**
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum HnStatus hn_model_param_count(const struct HnModel *model, struct HnParamCount *out);

/**
 * Renders a `width x height` RGB image (row-major, 3 floats per pixel) from
 * a row-major 4x4 camera-to-world `pose`.
 *
 * # Safety
 * `model` must be a live handle, `pose` must point to 16 doubles and `out`
 * to `out_len` writable floats.
 */
enum HnStatus hn_model_render(const struct HnModel *model,
                              const double *pose,
                              uint32_t width,
                              uint32_t height,
                              double camera_angle_x,
                              float *out,
                              size_t out_len);

/**
 * Saliency grid resolution `T`, or 0 when the model has none.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum HnStatus hn_model_saliency_resolution(const struct HnModel *model, uint32_t *out);

/**
 * Writes the `T x T` saliency weights of the plane `axis = index` into
 * `out` (row-major).
 *
 * # Safety
 * `model` must be a live handle and `out` must point to `out_len` floats.
 */
enum HnStatus hn_model_saliency_slice(const struct HnModel *model,
                                      uint32_t axis,
                                      uint32_t index,
                                      float *out,
                                      size_t out_len);

/**
 * Spatial hash of an integer lattice corner into a power-of-two table.
 * Returns `UINT64_MAX` when `table_size` is not a power of two.
 */
uint64_t hn_hash_index(uint32_t x, uint32_t y, uint32_t z, uint64_t table_size);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOLLOWNERF_H */
