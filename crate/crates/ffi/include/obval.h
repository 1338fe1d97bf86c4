/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef OBVAL_H
#define OBVAL_H

#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum ObvalStatus {
  OBVAL_STATUS_OK = 0,
  OBVAL_STATUS_NULL_ARGUMENT = 1,
  OBVAL_STATUS_INVALID_UTF8 = 2,
  OBVAL_STATUS_IO = 3,
  OBVAL_STATUS_PARSE = 4,
  OBVAL_STATUS_VALIDATION = 5,
  OBVAL_STATUS_OUT_OF_BOUNDS = 6,
  OBVAL_STATUS_NON_FINITE = 7,
  OBVAL_STATUS_SINGLE_CLASS = 8,
  OBVAL_STATUS_NOT_CONVERGED = 9,
  OBVAL_STATUS_UNKNOWN_TARGET = 10,
  OBVAL_STATUS_DEGENERATE_CAMERA = 11,
  OBVAL_STATUS_CLASS_TOO_SMALL = 12,
  OBVAL_STATUS_EMPTY = 13,
  OBVAL_STATUS_IMAGE = 14,
  OBVAL_STATUS_BEHIND_CAMERA = 15,
  OBVAL_STATUS_BUFFER_TOO_SMALL = 16,
  OBVAL_STATUS_PANIC = 17,
} ObvalStatus;

/**
 * Per-segment outcome codes written by [`obval_validate`].
 */
typedef enum ObvalVerdict {
  OBVAL_VERDICT_CONSISTENT = 0,
  OBVAL_VERDICT_INCONSISTENT = 1,
  OBVAL_VERDICT_OCCLUDED = 2,
  OBVAL_VERDICT_UNSAMPLED = 3,
} ObvalVerdict;

typedef struct ObvalImage ObvalImage;

typedef struct ObvalModel ObvalModel;

typedef struct ObvalScene ObvalScene;

typedef struct ObvalSegmentReport {
  uint32_t segment_id;
  uint32_t samples;
  uint32_t hidden;
  uint32_t scored;
  uint32_t positive;
  int32_t verdict;
} ObvalSegmentReport;

/**
 * Undefined ratios are NaN.
 */
typedef struct ObvalMetrics {
  double sensitivity;
  double specificity;
  double accuracy;
} ObvalMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *obval_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated and
 * always NUL-terminated when `len > 0`). Returns the full message length.
 */
size_t obval_last_error_message(char *buf, size_t len);

size_t obval_descriptor_len(void);

enum ObvalStatus obval_scene_load(const char *path, struct ObvalScene **out);

void obval_scene_free(struct ObvalScene *scene);

size_t obval_scene_segment_count(const struct ObvalScene *scene);

/**
 * Projects a geodetic point through the scene camera.
 */
enum ObvalStatus obval_project(const struct ObvalScene *scene,
                               double lat,
                               double lon,
                               double alt,
                               double *u,
                               double *v);

enum ObvalStatus obval_model_load(const char *path, struct ObvalModel **out);

void obval_model_free(struct ObvalModel *model);

/**
 * Decision value and class (+1/-1) of a composed descriptor of `len`
 * values.
 */
enum ObvalStatus obval_model_predict(const struct ObvalModel *model,
                                     const double *descriptor,
                                     size_t len,
                                     double *score,
                                     int8_t *class_);

enum ObvalStatus obval_image_load(const char *path, struct ObvalImage **out);

void obval_image_free(struct ObvalImage *image);

enum ObvalStatus obval_image_size(const struct ObvalImage *image,
                                  uint32_t *width,
                                  uint32_t *height);

/**
 * Composed descriptor of the patch around `(u, v)` with the given road
 * direction, written to `out` (at least [`obval_descriptor_len`] values).
 * When `model` is non-null its descriptor settings and color scaling are
 * used; otherwise defaults with unit scaling.
 */
enum ObvalStatus obval_describe(const struct ObvalImage *image,
                                const struct ObvalModel *model,
                                double u,
                                double v,
                                double dir_u,
                                double dir_v,
                                double *out,
                                size_t len);

/**
 * Validates every segment of `scene`. Up to `capacity` reports are written
 * to `out`; `written` receives the number of segments. When `capacity` is
 * too small, nothing is written and [`ObvalStatus::BufferTooSmall`] is
 * returned with `written` set to the required count.
 */
enum ObvalStatus obval_validate(const struct ObvalScene *scene,
                                const struct ObvalImage *image,
                                const struct ObvalModel *model,
                                double spacing_px,
                                struct ObvalSegmentReport *out,
                                size_t capacity,
                                size_t *written);

enum ObvalStatus obval_metrics(uint64_t tp,
                               uint64_t fn_,
                               uint64_t tn,
                               uint64_t fp,
                               struct ObvalMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OBVAL_H */
