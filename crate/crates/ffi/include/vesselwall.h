#ifndef VESSELWALL_H
#define VESSELWALL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VwStatus {
  VW_STATUS_OK = 0,
  VW_STATUS_NULL_POINTER = 1,
  VW_STATUS_INVALID_ARGUMENT = 2,
  VW_STATUS_IO = 3,
  VW_STATUS_FORMAT = 4,
  VW_STATUS_UNSUPPORTED = 5,
  VW_STATUS_GEOMETRY = 6,
  VW_STATUS_NOT_CONVERGED = 7,
  VW_STATUS_SEGMENTER = 8,
  VW_STATUS_ZERO_CONTOURS = 9,
  VW_STATUS_PANIC = 10,
} VwStatus;

/**
 * Opaque CCA/ICA/ECA centerline tree.
 */
typedef struct VwCenterline VwCenterline;

/**
 * Opaque 3D volume.
 */
typedef struct VwVolume VwVolume;

/**
 * Pipeline settings; fill with [`vw_config_default`] before changing fields.
 */
typedef struct VwConfig {
  /**
   * Sampling distance between cross-sections (mm).
   */
  double sd;
  /**
   * Non-zero to sample the bifurcation area along the bifurcation axis.
   */
  uint8_t use_bifurcation_axis;
  double bif_region;
  double branch_offset;
  /**
   * Output voxel size (mm).
   */
  double grid_spacing;
} VwConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after success.
 * Valid until the next call on the same thread.
 */
const char *vw_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *vw_version(void);

/**
 * Load a `.nii` or `.rvol` volume.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum VwStatus vw_volume_load(const char *path, struct VwVolume **out);

/**
 * Write a volume; the format follows the extension. `label_mask` non-zero
 * stores u8 labels, otherwise f32.
 *
 * # Safety
 * `vol` must come from this library; `path` must be nul-terminated.
 */
enum VwStatus vw_volume_save(const struct VwVolume *vol, const char *path, uint8_t label_mask);

/**
 * Voxel counts along i, j, k.
 *
 * # Safety
 * `vol` must come from this library; `dims` must hold three elements.
 */
enum VwStatus vw_volume_dims(const struct VwVolume *vol, size_t *dims);

/**
 * Borrow the voxel values (i fastest). The pointer lives as long as `vol`.
 *
 * # Safety
 * `vol` must come from this library; `data` and `len` must be writable.
 */
enum VwStatus vw_volume_data(const struct VwVolume *vol, const double **data, size_t *len);

/**
 * # Safety
 * `vol` must come from this library or be null; it is invalid afterwards.
 */
void vw_volume_free(struct VwVolume *vol);

/**
 * Load a centerline tree JSON file.
 *
 * # Safety
 * `path` must be nul-terminated; `out` must be writable.
 */
enum VwStatus vw_centerline_load(const char *path, struct VwCenterline **out);

/**
 * # Safety
 * `tree` must come from this library or be null; it is invalid afterwards.
 */
void vw_centerline_free(struct VwCenterline *tree);

/**
 * Defaults: SD 0.6 mm with the bifurcation axis, 0.3 mm grid.
 *
 * # Safety
 * `cfg` must be writable.
 */
enum VwStatus vw_config_default(struct VwConfig *cfg);

/**
 * Build a 3D pseudo-label with the builtin segmenter. `failed_planes` may
 * be null.
 *
 * # Safety
 * Handles must come from this library; `cfg` must be readable and
 * `out_mask` writable.
 */
enum VwStatus vw_build_pseudolabel(const struct VwVolume *vol,
                                   const struct VwCenterline *tree,
                                   const struct VwConfig *cfg,
                                   struct VwVolume **out_mask,
                                   size_t *failed_planes);

/**
 * Dice of two binary masks of `n` pixels (non-zero = set); 1 when both
 * are empty.
 *
 * # Safety
 * `a` and `b` must hold `n` bytes; `out` must be writable.
 */
enum VwStatus vw_dsc(const uint8_t *a, const uint8_t *b, size_t n, double *out);

/**
 * Symmetric average distance (mm) between two closed polygons given as
 * interleaved x, y pairs; `step` is the resampling step (0.05 typical).
 *
 * # Safety
 * `a` holds `2 * na` doubles, `b` holds `2 * nb`; `out` must be writable.
 */
enum VwStatus vw_acd(const double *a,
                     size_t na,
                     const double *b,
                     size_t nb,
                     double step,
                     double *out);

/**
 * Symmetric Hausdorff distance (mm); arguments as [`vw_acd`].
 *
 * # Safety
 * As [`vw_acd`].
 */
enum VwStatus vw_hausdorff(const double *a,
                           size_t na,
                           const double *b,
                           size_t nb,
                           double step,
                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VESSELWALL_H */
