#ifndef FEATUREVO_H
#define FEATUREVO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FvStatus {
  FV_STATUS_OK = 0,
  FV_STATUS_NULL_POINTER = 1,
  FV_STATUS_INVALID_ARGUMENT = 2,
  FV_STATUS_BUFFER_TOO_SMALL = 3,
  FV_STATUS_ENV = 4,
  FV_STATUS_FEATURE = 5,
  FV_STATUS_STATS = 6,
  FV_STATUS_EXPERIMENT = 7,
  FV_STATUS_IO = 8,
  FV_STATUS_PANIC = 9,
} FvStatus;

typedef struct FvEnv FvEnv;

typedef struct FvExtractor FvExtractor;

typedef struct FvMannWhitney {
  double u_a;
  double u_b;
  double p;
  /**
   * 1 when the exact null distribution was used.
   */
  int32_t exact;
} FvMannWhitney;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * NUL-terminated library version; static storage.
 */
const char *fv_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `cap > 0`). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or valid for `cap` bytes.
 */
size_t fv_last_error(char *buf, size_t cap);

/**
 * Opens `racecar`, `swingup`, `echo`, `cmd:<command>` or `tcp:<addr>`.
 * `max_steps` of 0 keeps the environment default.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FvStatus fv_env_new(const char *name, size_t max_steps, struct FvEnv **out);

/**
 * # Safety
 * `env` must be null or a handle from [`fv_env_new`] not yet freed.
 */
void fv_env_free(struct FvEnv *env);

/**
 * # Safety
 * `env` must be a live handle; the outputs must be valid pointers.
 */
enum FvStatus fv_env_dims(const struct FvEnv *env,
                          size_t *obs_dim,
                          size_t *act_dim,
                          size_t *max_steps);

/**
 * Starts an episode and writes the first observation into `obs`.
 *
 * # Safety
 * `env` must be a live handle and `obs` valid for `obs_cap` values.
 */
enum FvStatus fv_env_reset(struct FvEnv *env, uint64_t seed, double *obs, size_t obs_cap);

/**
 * Applies one action; `done` is set to 1 when the episode ended.
 *
 * # Safety
 * `env` must be a live handle, `action` valid for `act_len` values, `obs`
 * for `obs_cap` values, and `reward`/`done` valid pointers.
 */
enum FvStatus fv_env_step(struct FvEnv *env,
                          const double *action,
                          size_t act_len,
                          double *obs,
                          size_t obs_cap,
                          double *reward,
                          int32_t *done);

/**
 * Fresh, untrained extractor. `kind` is one of `ete`, `ae`, `ae-fm`,
 * `sts`, `fsts`; sizes of 0 keep the defaults.
 *
 * # Safety
 * `kind` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FvStatus fv_extractor_new(const char *kind,
                               size_t obs_dim,
                               size_t act_dim,
                               size_t latent,
                               size_t hidden,
                               uint64_t seed,
                               struct FvExtractor **out);

/**
 * Loads an extractor written by `featurevo pretrain`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FvStatus fv_extractor_load(const char *path, struct FvExtractor **out);

/**
 * # Safety
 * `fx` must be null or a live extractor handle.
 */
void fv_extractor_free(struct FvExtractor *fx);

/**
 * # Safety
 * `fx` must be a live handle and `out` a valid pointer.
 */
enum FvStatus fv_extractor_feature_dim(const struct FvExtractor *fx, size_t *out);

/**
 * Clears the per-episode state; call at every environment reset.
 *
 * # Safety
 * `fx` must be a live handle.
 */
enum FvStatus fv_extractor_reset(struct FvExtractor *fx);

/**
 * Features for one observation. `prev_action` may be null on the first step.
 *
 * # Safety
 * `fx` must be a live handle, `obs` valid for `obs_len` values,
 * `prev_action` null or valid for `act_len`, `out` valid for `out_cap`.
 */
enum FvStatus fv_extractor_extract(struct FvExtractor *fx,
                                   const double *obs,
                                   size_t obs_len,
                                   const double *prev_action,
                                   size_t act_len,
                                   double *out,
                                   size_t out_cap);

/**
 * Centered ranks `rank / (n - 1) - 0.5`, ties broken by index.
 *
 * # Safety
 * `fitness` and `out` must be valid for `n` values.
 */
enum FvStatus fv_centered_ranks(const double *fitness, size_t n, double *out);

/**
 * Two-sided Mann-Whitney U test between samples `a` and `b`.
 *
 * # Safety
 * `a`/`b` must be valid for `na`/`nb` values and `out` a valid pointer.
 */
enum FvStatus fv_mann_whitney(const double *a,
                              size_t na,
                              const double *b,
                              size_t nb,
                              struct FvMannWhitney *out);

/**
 * Runs one experiment from a `key = value` configuration (the format of
 * `config.cfg`). With a non-null `out_dir` the run log and checkpoints are
 * written there and an existing checkpoint is resumed. `final_best` may be
 * null.
 *
 * # Safety
 * `config` must be a NUL-terminated string; `out_dir` null or one.
 */
enum FvStatus fv_run_experiment(const char *config,
                                size_t workers,
                                const char *out_dir,
                                double *final_best);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEATUREVO_H */
