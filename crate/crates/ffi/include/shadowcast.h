#ifndef SHADOWCAST_H
#define SHADOWCAST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ShadowcastStatus {
  SHADOWCAST_STATUS_OK = 0,
  SHADOWCAST_STATUS_NULL_POINTER = 1,
  SHADOWCAST_STATUS_INVALID_ARGUMENT = 2,
  SHADOWCAST_STATUS_INSUFFICIENT_DATA = 3,
  SHADOWCAST_STATUS_OUT_OF_COVERAGE = 4,
  SHADOWCAST_STATUS_IO = 5,
  SHADOWCAST_STATUS_BUFFER_TOO_SMALL = 6,
  SHADOWCAST_STATUS_PANIC = 7,
} ShadowcastStatus;

/**
 * Opaque clear-sky field.
 */
typedef struct ShadowcastField ShadowcastField;

typedef struct ShadowcastMotion {
  /**
   * m/s
   */
  double speed;
  /**
   * Degrees clockwise from north, the direction of travel.
   */
  double direction_deg;
  /**
   * Zero when no usable snapshot pair existed.
   */
  uint8_t valid;
} ShadowcastMotion;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length
 * excluding the terminator, or 0 when there is no error.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t shadowcast_last_error_message(char *buf, size_t len);

/**
 * Clear-sky index of cloud index `n`.
 */
double shadowcast_cloud_to_clearsky(double n);

/**
 * Synthesizes a quantized fractal clear-sky field.
 *
 * # Safety
 * `out` must be a valid pointer; on success it receives a handle owned by
 * the caller.
 */
enum ShadowcastStatus shadowcast_field_generate(size_t side_px,
                                                double fractal_dimension,
                                                uint64_t seed,
                                                double pixel_size_m,
                                                struct ShadowcastField **out);

/**
 * Reads a field from a PGM image and its sidecar.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ShadowcastStatus shadowcast_field_load(const char *path, struct ShadowcastField **out);

/**
 * Writes a field as PGM plus sidecar.
 *
 * # Safety
 * `field` must come from this library and `path` be NUL-terminated.
 */
enum ShadowcastStatus shadowcast_field_save(const struct ShadowcastField *field, const char *path);

/**
 * Releases a field. Null is ignored.
 *
 * # Safety
 * `field` must come from this library and not be used afterwards.
 */
void shadowcast_field_free(struct ShadowcastField *field);

/**
 * Side length in pixels, 0 for a null handle.
 *
 * # Safety
 * `field` must be null or come from this library.
 */
size_t shadowcast_field_side_px(const struct ShadowcastField *field);

/**
 * Pixel size in meters, 0 for a null handle.
 *
 * # Safety
 * `field` must be null or come from this library.
 */
double shadowcast_field_pixel_size(const struct ShadowcastField *field);

/**
 * Clear-sky index at field coordinates `(x, y)` in meters.
 *
 * # Safety
 * `field` must come from this library and `out` be a valid pointer.
 */
enum ShadowcastStatus shadowcast_field_lookup(const struct ShadowcastField *field,
                                              double x,
                                              double y,
                                              float *out);

/**
 * Copies all values, row 0 first, into `out`, which must hold
 * `side_px * side_px` floats.
 *
 * # Safety
 * `field` must come from this library and `out` point to `len` floats.
 */
enum ShadowcastStatus shadowcast_field_copy_values(const struct ShadowcastField *field,
                                                   float *out,
                                                   size_t len);

/**
 * Grid dimensions for `bounds` at spacing `dmin`.
 *
 * # Safety
 * `nx` and `ny` must be valid pointers.
 */
enum ShadowcastStatus shadowcast_grid_shape(double min_x,
                                            double min_y,
                                            double max_x,
                                            double max_y,
                                            double dmin,
                                            size_t *nx,
                                            size_t *ny);

/**
 * Interpolates `n` scattered readings onto the grid of
 * [`shadowcast_grid_shape`] with `k` nearest neighbors. `out` receives
 * `nx * ny` values, row 0 at `min_y`. Fewer than `k` readings give
 * `InsufficientData`.
 *
 * # Safety
 * `x`, `y` and `kstar` must point to `n` values, `out` to `out_len` floats.
 */
enum ShadowcastStatus shadowcast_idw_grid(const double *x,
                                          const double *y,
                                          const float *kstar,
                                          size_t n,
                                          double min_x,
                                          double min_y,
                                          double max_x,
                                          double max_y,
                                          double dmin,
                                          size_t k,
                                          float *out,
                                          size_t out_len);

/**
 * Estimates the motion of `n_snapshots` consecutive `nx * ny` grids taken
 * every `sampling_period_s` seconds. `valid` may be null (all valid) or
 * point to one flag per snapshot.
 *
 * # Safety
 * `grids` must point to `n_snapshots * nx * ny` floats, `valid` to
 * `n_snapshots` bytes when non-null, and `out` be a valid pointer.
 */
enum ShadowcastStatus shadowcast_estimate_motion(const float *grids,
                                                 size_t n_snapshots,
                                                 size_t nx,
                                                 size_t ny,
                                                 const uint8_t *valid,
                                                 uint32_t sampling_period_s,
                                                 uint32_t timestep_s,
                                                 double dmin,
                                                 double v_cap,
                                                 struct ShadowcastMotion *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHADOWCAST_H */
