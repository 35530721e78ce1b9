#ifndef HERO_H
#define HERO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HeroStatus {
  HERO_STATUS_OK = 0,
  HERO_STATUS_NULL_POINTER = 1,
  HERO_STATUS_INVALID_ARGUMENT = 2,
  HERO_STATUS_IO = 3,
  HERO_STATUS_CHECKPOINT = 4,
  HERO_STATUS_BUFFER_TOO_SMALL = 5,
  HERO_STATUS_INTERNAL = 6,
  HERO_STATUS_PANIC = 7,
} HeroStatus;

/**
 * A loaded denoiser together with its schedule, sampler settings and, for
 * fine-tuned runs, the refined noise prior.
 */
typedef struct HeroModel HeroModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a run directory (with `checkpoint.json`) or a pretrained model
 * directory (with `model.json`).
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HeroStatus hero_model_load(const char *dir, struct HeroModel **out);

/**
 * # Safety
 * `model` must come from `hero_model_load` and not be used afterwards.
 */
void hero_model_free(struct HeroModel *model);

/**
 * Sample dimension, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t hero_model_dim(const struct HeroModel *model);

/**
 * Whether the model carries a refined noise prior (fine-tuned runs do).
 *
 * # Safety
 * `model` must be null or a live handle.
 */
bool hero_model_has_refined_prior(const struct HeroModel *model);

/**
 * Draws `n` samples into `out` as `n * dim` row-major values.
 *
 * # Safety
 * `out` must point to `out_len` writable doubles.
 */
enum HeroStatus hero_model_sample(const struct HeroModel *model,
                                  size_t n,
                                  uint64_t seed,
                                  bool refined_prior,
                                  double *out,
                                  size_t out_len);

/**
 * Fraction of `n` fresh samples accepted by the named oracle
 * (`mode-0` .. `mode-7`, `upper-half`, `bright-center`, `accept-all`).
 *
 * # Safety
 * `oracle` must be a NUL-terminated string and `out_rate` a valid pointer.
 */
enum HeroStatus hero_model_evaluate(const struct HeroModel *model,
                                    const char *oracle,
                                    size_t n,
                                    uint64_t seed,
                                    bool refined_prior,
                                    double *out_rate);

/**
 * Fraction of refined-prior draws in dimension `dim` with
 * `|y| / sqrt(dim)` inside `[1 - sqrt(eps0_sq), 1 + sqrt(eps0_sq)]`.
 *
 * # Safety
 * `out_fraction` must be a valid pointer.
 */
enum HeroStatus hero_concentration(size_t dim,
                                   double eps0_sq,
                                   size_t n,
                                   size_t components,
                                   uint64_t seed,
                                   double *out_fraction);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`) and returns the full message
 * length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t hero_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hero_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HERO_H */
