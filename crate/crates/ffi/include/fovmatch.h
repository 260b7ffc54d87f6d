#ifndef FOVMATCH_H
#define FOVMATCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code of every fallible call.
 */
typedef enum FmStatus {
  FM_STATUS_OK = 0,
  FM_STATUS_NULL_POINTER = 1,
  FM_STATUS_INVALID_ARGUMENT = 2,
  FM_STATUS_IO = 3,
  FM_STATUS_FORMAT = 4,
  FM_STATUS_GRID_MISMATCH = 5,
  FM_STATUS_EMPTY_MASK = 6,
  FM_STATUS_CONFIG = 7,
  FM_STATUS_PANIC = 8,
} FmStatus;

typedef enum FmMetric {
  FM_METRIC_EDGE_ALIGNMENT = 0,
  FM_METRIC_L2 = 1,
} FmMetric;

/**
 * Opaque mask handle.
 */
typedef struct FmMask FmMask;

/**
 * Opaque volume handle.
 */
typedef struct FmVolume FmVolume;

/**
 * Estimation parameters; fill with [`fm_params_default`] before changing fields.
 */
typedef struct FmParams {
  double resample_spacing_mm;
  size_t downsample_factor;
  /**
   * Odd patch edge length in working-grid voxels.
   */
  size_t patch_size;
  size_t iterations;
  double alpha;
  size_t realizations;
  uint64_t seed;
  /**
   * An `FmMetric` value.
   */
  uint32_t metric;
  double hist_lo_mm;
  double hist_hi_mm;
  size_t bins;
  /**
   * Nonzero: histogram all realizations instead of their vector median.
   */
  uint8_t pooled_histogram;
  size_t box_margin;
} FmParams;

/**
 * Result of [`fm_estimate_global_shift`].
 */
typedef struct FmShift {
  double shift_mm[3];
  uint64_t mode_counts[3];
} FmShift;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next failing call.
 */
const char *fm_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fm_version(void);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum FmStatus fm_params_default(struct FmParams *out);

/**
 * Creates a volume from `len` samples in X-fastest order.
 *
 * # Safety
 * `dims`, `spacing` and `origin` point to 3 values each; `data` to `len` values; `out` is writable.
 */
enum FmStatus fm_volume_new(const size_t *dims,
                            const double *spacing,
                            const double *origin,
                            const double *data,
                            size_t len,
                            struct FmVolume **out);

/**
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
enum FmStatus fm_volume_load(const char *path, struct FmVolume **out);

/**
 * # Safety
 * `v` is a live handle; `path` is a NUL-terminated string.
 */
enum FmStatus fm_volume_save(const struct FmVolume *v, const char *path);

/**
 * Writes the grid size to `dims_out[0..3]`.
 *
 * # Safety
 * `v` is a live handle; `dims_out` is writable for 3 values.
 */
enum FmStatus fm_volume_dims(const struct FmVolume *v, size_t *dims_out);

/**
 * Copies up to `len` samples into `data_out`.
 *
 * # Safety
 * `v` is a live handle; `data_out` is writable for `len` values.
 */
enum FmStatus fm_volume_copy_data(const struct FmVolume *v, double *data_out, size_t len);

/**
 * # Safety
 * `v` is null or a handle not yet freed.
 */
void fm_volume_free(struct FmVolume *v);

/**
 * Creates a mask from `len` bytes in X-fastest order; nonzero is inside.
 *
 * # Safety
 * As [`fm_volume_new`].
 */
enum FmStatus fm_mask_new(const size_t *dims,
                          const double *spacing,
                          const double *origin,
                          const uint8_t *data,
                          size_t len,
                          struct FmMask **out);

/**
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
enum FmStatus fm_mask_load(const char *path, struct FmMask **out);

/**
 * # Safety
 * `m` is a live handle; `count_out` is writable.
 */
enum FmStatus fm_mask_count(const struct FmMask *m, size_t *count_out);

/**
 * # Safety
 * `m` is null or a handle not yet freed.
 */
void fm_mask_free(struct FmMask *m);

/**
 * Dice coefficient of two masks on the same grid.
 *
 * # Safety
 * `a` and `b` are live handles; `out` is writable.
 */
enum FmStatus fm_dice(const struct FmMask *a, const struct FmMask *b, double *out);

/**
 * Estimates the translation taking the organ of `fixed` (delineated by `mask`)
 * to its position in `moving`. `params` may be null for the defaults.
 *
 * # Safety
 * Handles are live; `params` is null or readable; `out` is writable.
 */
enum FmStatus fm_estimate_global_shift(const struct FmVolume *fixed,
                                       const struct FmVolume *moving,
                                       const struct FmMask *mask,
                                       const struct FmParams *params,
                                       struct FmShift *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FOVMATCH_H */
