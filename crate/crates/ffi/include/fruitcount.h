#ifndef FRUITCOUNT_H
#define FRUITCOUNT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum FcStatus {
  FC_STATUS_OK = 0,
  FC_STATUS_NULL_POINTER = 1,
  FC_STATUS_INVALID_ARGUMENT = 2,
  FC_STATUS_CONFIG = 3,
  FC_STATUS_IO = 4,
  // Malformed or inconsistent input files.
  FC_STATUS_INGEST = 5,
  // Flow, assignment, filtering or geometry failure.
  FC_STATUS_NUMERIC = 6,
  FC_STATUS_MISSING_SEGMENT = 7,
  FC_STATUS_PANIC = 99,
} FcStatus;

// Detections extracted from one mask.
typedef struct FcRegionList FcRegionList;

// Frame-by-frame tracker fed with grayscale frames and detection masks.
// Flow between consecutive frames comes from pyramidal Lucas-Kanade.
typedef struct FcTracker FcTracker;

typedef struct FcEvaluation {
  uint64_t l1;
  // NaN when no segment has a nonzero truth.
  double error_mean_pct;
  double error_std_pct;
} FcEvaluation;

typedef struct FcRegion {
  // Centroid row.
  double u;
  // Centroid column.
  double v;
  double row_min;
  double col_min;
  double row_max;
  double col_max;
  uint64_t area;
} FcRegion;

typedef struct FcCounts {
  uint64_t raw;
  uint64_t corrected;
  // -1 when the dataset carries no ground truth.
  int64_t truth;
} FcCounts;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until the
// next call into this library on the same thread.
const char *fc_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *fc_version(void);

// L1 loss and signed percentage error statistics over `len` segments.
//
// # Safety
// `estimates` and `truth` must point to `len` readable values (or may be
// null when `len` is 0); `out` must be writable.
enum FcStatus fc_evaluate(const uint64_t *estimates,
                          const uint64_t *truth,
                          size_t len,
                          struct FcEvaluation *out);

// Minimum-cost assignment of a row-major `rows × cols` cost matrix. Pairs
// costing more than `gate` stay unmatched (pass `INFINITY` for no gate).
// `row_to_col[r]` receives the matched column or -1.
//
// # Safety
// `costs` must hold `rows * cols` values and `row_to_col` must have room for
// `rows`; `total_cost` may be null.
enum FcStatus fc_solve_assignment(const double *costs,
                                  size_t rows,
                                  size_t cols,
                                  double gate,
                                  int64_t *row_to_col,
                                  double *total_cost);

// Connected components (8-neighborhood) of nonzero pixels with at least
// `min_area` pixels, sorted by centroid.
//
// # Safety
// `mask` must hold `width * height` bytes, row-major; `out` must be writable.
enum FcStatus fc_mask_to_regions(const uint8_t *mask,
                                 size_t width,
                                 size_t height,
                                 size_t min_area,
                                 struct FcRegionList **out);

// # Safety
// `list` must be null or a live handle from [`fc_mask_to_regions`].
size_t fc_region_list_len(const struct FcRegionList *list);

// # Safety
// `list` must be a live handle and `out` writable.
enum FcStatus fc_region_list_get(const struct FcRegionList *list,
                                 size_t index,
                                 struct FcRegion *out);

// # Safety
// `list` must be null or a handle not yet freed.
void fc_region_list_free(struct FcRegionList *list);

// Creates a tracker. `config_path` may be null for defaults; its
// `[tracker]`, `[flow]` and `pipeline.min_area` settings apply. A track is
// counted when it retires with at least `age_threshold` detections.
//
// # Safety
// `config_path` must be null or a NUL-terminated path; `out` writable.
enum FcStatus fc_tracker_new(const char *config_path, size_t age_threshold, struct FcTracker **out);

// Feeds the next frame. The first frame only starts tracks. `active_out`
// (nullable) receives the number of live tracks afterwards.
//
// # Safety
// `tracker` must be a live handle; `gray` and `mask` must each hold
// `width * height` bytes.
enum FcStatus fc_tracker_push(struct FcTracker *tracker,
                              const uint8_t *gray,
                              const uint8_t *mask,
                              size_t width,
                              size_t height,
                              size_t *active_out);

// Retires every live track and writes the number of counted tracks.
//
// # Safety
// `tracker` must be a live handle; `counted_out` writable.
enum FcStatus fc_tracker_finish(struct FcTracker *tracker, size_t *counted_out);

// # Safety
// `tracker` must be null or a handle not yet freed.
void fc_tracker_free(struct FcTracker *tracker);

// Renders a synthetic dataset into `out_dir` from the `[scene]` section of
// `config_path` (null for defaults). `seed` (nullable) overrides the scene seed.
//
// # Safety
// Paths must be null (where allowed) or NUL-terminated; `seed` null or readable.
enum FcStatus fc_simulate(const char *config_path, const char *out_dir, const uint64_t *seed);

// Counts the dataset in `dataset_dir` (holding `manifest.json`) and writes
// the report files to `out_dir`.
//
// # Safety
// Paths must be NUL-terminated (`config_path` may be null); `out` writable.
enum FcStatus fc_pipeline_run(const char *config_path,
                              const char *dataset_dir,
                              const char *out_dir,
                              bool enable_correction,
                              struct FcCounts *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRUITCOUNT_H */
