#ifndef SMOG_H
#define SMOG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum SmogStatus {
  SMOG_STATUS_OK = 0,
  SMOG_STATUS_NULL_POINTER = 1,
  SMOG_STATUS_INVALID_ARGUMENT = 2,
  SMOG_STATUS_IO = 3,
  SMOG_STATUS_PARSE = 4,
  SMOG_STATUS_CHECKPOINT = 5,
  SMOG_STATUS_NUMERIC = 6,
  SMOG_STATUS_BUFFER_TOO_SMALL = 7,
  SMOG_STATUS_PANIC = 8,
} SmogStatus;

/**
 * A point cloud.
 */
typedef struct SmogCloud SmogCloud;

/**
 * A trained or freshly initialised model.
 */
typedef struct SmogModel SmogModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *smog_version(void);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t smog_last_error(char *buf, size_t len);

/**
 * Builds a cloud from `count` interleaved `x, y, z` doubles.
 *
 * # Safety
 * `xyz` must be valid for `3 * count` doubles; `out` must be writable.
 */
enum SmogStatus smog_cloud_new(const double *xyz, size_t count, struct SmogCloud **out);

/**
 * Reads a `.xyz`, `.ply` or `.off` file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SmogStatus smog_cloud_read(const char *path, struct SmogCloud **out);

/**
 * Writes the cloud as `.xyz`.
 *
 * # Safety
 * `cloud` must be a live handle and `path` a NUL-terminated string.
 */
enum SmogStatus smog_cloud_write_xyz(const struct SmogCloud *cloud, const char *path);

/**
 * Number of points; 0 for a null handle.
 *
 * # Safety
 * `cloud` must be null or a live handle.
 */
size_t smog_cloud_len(const struct SmogCloud *cloud);

/**
 * Copies the coordinates into `xyz`, which holds `capacity` points.
 *
 * # Safety
 * `cloud` must be a live handle; `xyz` must be valid for `3 * capacity` doubles.
 */
enum SmogStatus smog_cloud_copy(const struct SmogCloud *cloud, double *xyz, size_t capacity);

/**
 * # Safety
 * `cloud` must be null or a handle not yet freed.
 */
void smog_cloud_free(struct SmogCloud *cloud);

/**
 * Fresh model from a named preset (`desk`, `paper` or `toy`).
 *
 * # Safety
 * `preset` must be a NUL-terminated string; `out` must be writable.
 */
enum SmogStatus smog_model_init(const char *preset, uint64_t seed, struct SmogModel **out);

/**
 * Loads a checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SmogStatus smog_model_load(const char *path, struct SmogModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum SmogStatus smog_model_save(const struct SmogModel *model, const char *path);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void smog_model_free(struct SmogModel *model);

/**
 * Number of output points `round(ratio * n)` for an input of `n` points.
 *
 * # Safety
 * `out` must be writable.
 */
enum SmogStatus smog_output_count(size_t n, double ratio, size_t *out);

/**
 * Upsamples `input` by `ratio` in one pass (no patching).
 *
 * # Safety
 * `model` and `input` must be live handles; `out` must be writable.
 */
enum SmogStatus smog_upsample(const struct SmogModel *model,
                              const struct SmogCloud *input,
                              double ratio,
                              uint64_t seed,
                              struct SmogCloud **out);

/**
 * Chamfer distance (sum of both directed mean squared nearest distances).
 *
 * # Safety
 * `a` and `b` must be live handles; `out` must be writable.
 */
enum SmogStatus smog_chamfer(const struct SmogCloud *a, const struct SmogCloud *b, double *out);

/**
 * Symmetric Hausdorff distance.
 *
 * # Safety
 * `a` and `b` must be live handles; `out` must be writable.
 */
enum SmogStatus smog_hausdorff(const struct SmogCloud *a, const struct SmogCloud *b, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SMOG_H */
