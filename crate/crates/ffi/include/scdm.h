#ifndef SCDM_H
#define SCDM_H

/* Generated by cbindgen from scdm-ffi; edit the Rust source instead. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Anything other than `Ok` leaves a
 * description in the thread-local message read by [`scdm_last_error`].
 */
typedef enum {
  SCDM_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  SCDM_STATUS_NULL_POINTER = 1,
  /**
   * A value argument was outside its documented domain.
   */
  SCDM_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Bytes that could not be parsed as the expected format.
   */
  SCDM_STATUS_BAD_DATA = 3,
  SCDM_STATUS_IO = 4,
  /**
   * Floating-point breakdown or a diverged computation.
   */
  SCDM_STATUS_NUMERIC = 5,
  /**
   * A bug: an internal invariant failed or a panic was caught.
   */
  SCDM_STATUS_INTERNAL = 6,
} ScdmStatus;

/**
 * Which corruption [`scdm_corrupt`] applies.
 */
typedef enum {
  /**
   * Blocky downsampling by `factor`.
   */
  SCDM_CORRUPTION_DOWNSAMPLE = 0,
  /**
   * Relabel cells within Chebyshev `distance` of a class boundary.
   */
  SCDM_CORRUPTION_EDGE_BAND = 1,
  /**
   * Relabel each cell independently with probability `rate`.
   */
  SCDM_CORRUPTION_RANDOM = 2,
} ScdmCorruption;

/**
 * A denoising model, oracle or trained checkpoint (opaque).
 */
typedef struct ScdmDenoiser ScdmDenoiser;

/**
 * A dense multichannel image (opaque).
 */
typedef struct ScdmImage ScdmImage;

/**
 * A semantic label map (opaque).
 */
typedef struct ScdmMap ScdmMap;

/**
 * A paired label/image diffusion schedule (opaque).
 */
typedef struct ScdmSchedule ScdmSchedule;

/**
 * Per-class corpus statistics (opaque).
 */
typedef struct ScdmStats ScdmStats;

/**
 * Sampler knobs for [`scdm_sample`]. Zero-initialize and override, or
 * start from [`scdm_sample_options_default`].
 */
typedef struct {
  /**
   * Respaced step count; 0 means every schedule step.
   */
  size_t num_steps;
  /**
   * Classifier-free guidance scale (0 disables the unconditional pass).
   */
  double guidance_scale;
  /**
   * Extrapolation weight on consecutive clean-image estimates.
   */
  double extrapolation;
  /**
   * Condition every step on the input map, skipping label diffusion.
   */
  bool fixed_label;
  uint64_t seed;
} ScdmSampleOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the message for the most recent failure on this thread into `buf`
 * (NUL-terminated, truncated to `cap` bytes) and return the full message
 * length excluding the terminator. `buf` may be NULL to query the length.
 *
 * # Safety
 * `buf` must be NULL or point to at least `cap` writable bytes.
 */
size_t scdm_last_error(char *buf, size_t cap);

/**
 * Library version as a static NUL-terminated string; never freed.
 */
const char *scdm_version(void);

/**
 * Build a map from row-major cells. Values must lie in `0..=num_classes`,
 * where `num_classes` itself encodes the masked state.
 *
 * # Safety
 * `cells` must point to `height * width` readable `uint16_t`s; `out` must
 * be a valid pointer.
 */
ScdmStatus scdm_map_create(size_t height,
                           size_t width,
                           uint16_t num_classes,
                           const uint16_t *cells,
                           ScdmMap **out);

/**
 * Load a map from an SLM1 file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
ScdmStatus scdm_map_load(const char *path, ScdmMap **out);

/**
 * Write a map as an SLM1 file (atomically).
 *
 * # Safety
 * `map` must be a live handle from this library; `path` a NUL-terminated
 * string.
 */
ScdmStatus scdm_map_save(const ScdmMap *map, const char *path);

/**
 * Map height in cells; 0 if `map` is NULL.
 *
 * # Safety
 * `map` must be NULL or a live handle.
 */
size_t scdm_map_height(const ScdmMap *map);

/**
 * Map width in cells; 0 if `map` is NULL.
 *
 * # Safety
 * `map` must be NULL or a live handle.
 */
size_t scdm_map_width(const ScdmMap *map);

/**
 * Number of real classes (the masked state is `num_classes`); 0 if NULL.
 *
 * # Safety
 * `map` must be NULL or a live handle.
 */
uint16_t scdm_map_num_classes(const ScdmMap *map);

/**
 * Copy the row-major cells into `buf`.
 *
 * # Safety
 * `map` must be a live handle; `buf` must have room for
 * `scdm_map_height * scdm_map_width` values.
 */
ScdmStatus scdm_map_cells(const ScdmMap *map, uint16_t *buf);

/**
 * Release a map handle. NULL is a no-op.
 *
 * # Safety
 * `map` must be NULL or a handle not yet freed.
 */
void scdm_map_free(ScdmMap *map);

/**
 * Estimate class statistics from `count` maps with phi clamped to >= 1.
 *
 * # Safety
 * `maps` must point to `count` live map handles; `out` must be valid.
 */
ScdmStatus scdm_stats_estimate(const ScdmMap *const *maps, size_t count, ScdmStats **out);

/**
 * Load statistics from a JSON file written by the library.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
ScdmStatus scdm_stats_load(const char *path, ScdmStats **out);

/**
 * The scaled rarity product for one class.
 *
 * # Safety
 * `stats` must be a live handle; `out` must be valid.
 */
ScdmStatus scdm_stats_product(const ScdmStats *stats, uint16_t class_, double *out);

/**
 * Release a statistics handle. NULL is a no-op.
 *
 * # Safety
 * `stats` must be NULL or a handle not yet freed.
 */
void scdm_stats_free(ScdmStats *stats);

/**
 * Build a class-wise label schedule plus the matching image schedule.
 * `eta` must be positive; pass INFINITY for the identity (no masking)
 * schedule. The image side uses the linear ramp equivalent to the
 * conventional 1000-step one.
 *
 * # Safety
 * `stats` must be a live handle; `out` must be valid.
 */
ScdmStatus scdm_schedule_build(const ScdmStats *stats,
                               size_t num_steps,
                               double eta,
                               ScdmSchedule **out);

/**
 * Load a schedule pair from a JSON file written by the library.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
ScdmStatus scdm_schedule_load(const char *path, ScdmSchedule **out);

/**
 * Write a schedule pair as JSON (atomically).
 *
 * # Safety
 * `sched` must be a live handle; `path` a NUL-terminated string.
 */
ScdmStatus scdm_schedule_save(const ScdmSchedule *sched, const char *path);

/**
 * Number of diffusion steps; 0 if `sched` is NULL.
 *
 * # Safety
 * `sched` must be NULL or a live handle.
 */
size_t scdm_schedule_num_steps(const ScdmSchedule *sched);

/**
 * Cumulative masking probability for `class` at step `t` (1-based;
 * `t = 0` reads as 0).
 *
 * # Safety
 * `sched` must be a live handle; `out` must be valid.
 */
ScdmStatus scdm_schedule_gamma(const ScdmSchedule *sched, size_t t, uint16_t class_, double *out);

/**
 * Release a schedule handle. NULL is a no-op.
 *
 * # Safety
 * `sched` must be NULL or a handle not yet freed.
 */
void scdm_schedule_free(ScdmSchedule *sched);

/**
 * Forward-diffuse a map to step `t`: each cell is masked if its sampled
 * first-masking time is at or before `t`. The whole trajectory is coupled,
 * so increasing `t` with the same seed only grows the masked set.
 *
 * # Safety
 * `map` and `sched` must be live handles; `out` must be valid.
 */
ScdmStatus scdm_diffuse_labels(const ScdmMap *map,
                               const ScdmSchedule *sched,
                               size_t t,
                               uint64_t seed,
                               ScdmMap **out);

/**
 * Degrade a map. `factor` is used by `Downsample`, `distance` and
 * `unlabeled` by `EdgeBand`, `rate`, `unlabeled`, and `seed` by `Random`.
 *
 * # Safety
 * `map` must be a live handle; `out` must be valid.
 */
ScdmStatus scdm_corrupt(const ScdmMap *map,
                        ScdmCorruption mode,
                        size_t factor,
                        size_t distance,
                        double rate,
                        uint16_t unlabeled,
                        uint64_t seed,
                        ScdmMap **out);

/**
 * Load an image from a SIM1 file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
ScdmStatus scdm_image_load(const char *path, ScdmImage **out);

/**
 * Write an image as a SIM1 file (atomically). Values are stored as f32.
 *
 * # Safety
 * `img` must be a live handle; `path` a NUL-terminated string.
 */
ScdmStatus scdm_image_save(const ScdmImage *img, const char *path);

/**
 * Image height in pixels; 0 if `img` is NULL.
 *
 * # Safety
 * `img` must be NULL or a live handle.
 */
size_t scdm_image_height(const ScdmImage *img);

/**
 * Image width in pixels; 0 if `img` is NULL.
 *
 * # Safety
 * `img` must be NULL or a live handle.
 */
size_t scdm_image_width(const ScdmImage *img);

/**
 * Image channel count; 0 if `img` is NULL.
 *
 * # Safety
 * `img` must be NULL or a live handle.
 */
size_t scdm_image_channels(const ScdmImage *img);

/**
 * Copy the image values (row-major, channel-interleaved) into `buf`.
 *
 * # Safety
 * `img` must be a live handle; `buf` must have room for
 * `height * width * channels` doubles.
 */
ScdmStatus scdm_image_values(const ScdmImage *img, double *buf);

/**
 * Release an image handle. NULL is a no-op.
 *
 * # Safety
 * `img` must be NULL or a handle not yet freed.
 */
void scdm_image_free(ScdmImage *img);

/**
 * Load a denoiser checkpoint, dispatching on the flavor declared in the
 * file: an oracle spec or a trained MLP.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
ScdmStatus scdm_denoiser_load(const char *path, ScdmDenoiser **out);

/**
 * Release a denoiser handle. NULL is a no-op.
 *
 * # Safety
 * `den` must be NULL or a handle not yet freed.
 */
void scdm_denoiser_free(ScdmDenoiser *den);

/**
 * The defaults: full step count, no guidance, no extrapolation, label
 * diffusion on, seed 0.
 */
ScdmSampleOptions scdm_sample_options_default(void);

/**
 * Run the reverse chain conditioned on `map` and return the sampled image.
 *
 * # Safety
 * `den`, `map`, `sched`, and `opts` must be live pointers from this
 * library or caller stack memory; `out` must be valid.
 */
ScdmStatus scdm_sample(const ScdmDenoiser *den,
                       const ScdmMap *map,
                       const ScdmSchedule *sched,
                       const ScdmSampleOptions *opts,
                       ScdmImage **out);

/**
 * Mean intersection-over-union between two maps. `ignore_class` below 0
 * means no class is ignored.
 *
 * # Safety
 * `a` and `b` must be live handles; `out` must be valid.
 */
ScdmStatus scdm_miou(const ScdmMap *a, const ScdmMap *b, int32_t ignore_class, double *out);

/**
 * Peak signal-to-noise ratio in dB; +INFINITY for identical images.
 *
 * # Safety
 * `a` and `b` must be live handles; `out` must be valid.
 */
ScdmStatus scdm_psnr(const ScdmImage *a, const ScdmImage *b, double data_range, double *out);

/**
 * Mean structural similarity with a `window`-sided uniform window.
 *
 * # Safety
 * `a` and `b` must be live handles; `out` must be valid.
 */
ScdmStatus scdm_ssim(const ScdmImage *a,
                     const ScdmImage *b,
                     size_t window,
                     double data_range,
                     double *out);

/**
 * Run one named numerical self-check ("prop1", "prop2", "marginal",
 * "trajectory", "oracle", or "gradcheck") and write whether it passed.
 * Returns `Ok` even for a failed check; only invalid names or internal
 * errors produce a non-`Ok` status.
 *
 * # Safety
 * `target` must be a NUL-terminated string; `passed` must be valid.
 */
ScdmStatus scdm_verify(const char *target, uint64_t seed, bool *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCDM_H */
