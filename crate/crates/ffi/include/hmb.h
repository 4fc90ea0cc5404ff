#ifndef HMB_H
#define HMB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum HmbStatus {
  HMB_STATUS_OK = 0,
  HMB_STATUS_NULL_POINTER = 1,
  HMB_STATUS_INVALID_ARGUMENT = 2,
  HMB_STATUS_IO = 3,
  HMB_STATUS_PARSE = 4,
  HMB_STATUS_GRID_MISMATCH = 5,
  HMB_STATUS_NO_HEAT_SOURCES = 6,
  HMB_STATUS_UNCLASSIFIABLE = 7,
  HMB_STATUS_CORRUPT_MODEL = 8,
  HMB_STATUS_PANIC = 99,
} HmbStatus;

typedef struct HmbHeatMap HmbHeatMap;

typedef struct HmbModel HmbModel;

/**
 * Heat parameters. An infinite `k_t` or `k_p` selects the limit case.
 */
typedef struct HmbHeatParams {
  double k_t;
  double k_p;
  double c;
} HmbHeatParams;

/**
 * One tracked position. Points of the same `object` form a trajectory and
 * must have strictly increasing frames.
 */
typedef struct HmbPoint {
  uint32_t object;
  int64_t frame;
  double x;
  double y;
} HmbPoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *hmb_last_error(void);

const char *hmb_version(void);

struct HmbHeatParams hmb_heat_params_default(void);

/**
 * Builds the heat map of `n_points` tracked positions at the last frame.
 *
 * # Safety
 * `points` must reference `n_points` readable values, `params` may be null
 * for defaults, and `out` must be writable.
 */
enum HmbStatus hmb_heatmap_from_points(uint32_t scene_width,
                                       uint32_t scene_height,
                                       uint32_t patch_size,
                                       const struct HmbPoint *points,
                                       size_t n_points,
                                       const struct HmbHeatParams *params,
                                       struct HmbHeatMap **out);

/**
 * # Safety
 * `hm` must be a live handle; `cols` and `rows` must be writable.
 */
enum HmbStatus hmb_heatmap_dims(const struct HmbHeatMap *hm, size_t *cols, size_t *rows);

/**
 * Copies the row-major surface into `buf`, which must hold `cols * rows`
 * values.
 *
 * # Safety
 * `hm` must be a live handle and `buf` must reference `len` writable values.
 */
enum HmbStatus hmb_heatmap_values(const struct HmbHeatMap *hm, double *buf, size_t len);

/**
 * # Safety
 * `hm` must be null or a handle not freed before.
 */
void hmb_heatmap_free(struct HmbHeatMap *hm);

/**
 * Loads a model file written by `hmb train`.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` writable.
 */
enum HmbStatus hmb_model_load(const char *path, struct HmbModel **out);

/**
 * # Safety
 * `model` must be null or a handle not freed before.
 */
void hmb_model_free(struct HmbModel *model);

/**
 * Number of labels, 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t hmb_model_label_count(const struct HmbModel *model);

/**
 * Label `index`, owned by the model, or null when out of range.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
const char *hmb_model_label(const struct HmbModel *model, size_t index);

/**
 * Adaptive surface fitting with `w` voting neighbors. A `sigma` of 0 or
 * less uses the model's kernel width.
 *
 * # Safety
 * Handles must be live; `label_index` and `score` must be writable.
 */
enum HmbStatus hmb_classify_asf(const struct HmbModel *model,
                                const struct HmbHeatMap *hm,
                                size_t w,
                                double sigma,
                                size_t *label_index,
                                double *score);

/**
 * Surface fitting against the standard surfaces; `score` is the distance
 * to the winner.
 *
 * # Safety
 * Handles must be live; `label_index` and `score` must be writable.
 */
enum HmbStatus hmb_classify_sf(const struct HmbModel *model,
                               const struct HmbHeatMap *hm,
                               size_t *label_index,
                               double *score);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HMB_H */
