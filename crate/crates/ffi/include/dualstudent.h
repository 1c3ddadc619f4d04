#ifndef DUALSTUDENT_H
#define DUALSTUDENT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Status codes. Values are stable across releases.
 */
typedef enum DsStatus {
  DS_STATUS_OK = 0,
  DS_STATUS_CONFIG = 1,
  DS_STATUS_NUMERIC = 2,
  DS_STATUS_IO = 3,
  DS_STATUS_SHAPE = 4,
  DS_STATUS_INPUT = 5,
  DS_STATUS_STATE = 6,
  DS_STATUS_NULL_POINTER = 7,
  DS_STATUS_UTF8 = 8,
  DS_STATUS_PANIC = 9,
} DsStatus;

/**
 * An experiment description (data, model, train and analysis sections).
 */
typedef struct DsConfig DsConfig;

/**
 * The result of one training run.
 */
typedef struct DsRun DsRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next `ds_*` call on the same thread.
 */
const char *ds_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ds_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void ds_string_free(char *s);

/**
 * A configuration with every key at its default.
 */
struct DsConfig *ds_config_default(void);

/**
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum DsStatus ds_config_from_toml(const char *toml, struct DsConfig **out);

/**
 * Applies one `section.key=value` override. On failure the configuration
 * is left unchanged.
 *
 * # Safety
 * `cfg` must be a live handle and `assignment` a NUL-terminated string.
 */
enum DsStatus ds_config_set(struct DsConfig *cfg, const char *assignment);

/**
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum DsStatus ds_config_to_toml(const struct DsConfig *cfg, char **out);

/**
 * # Safety
 * `cfg` must be null or a handle from this library, freed once.
 */
void ds_config_free(struct DsConfig *cfg);

/**
 * Generates the datasets described by `cfg` and trains to completion.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum DsStatus ds_train(const struct DsConfig *cfg, struct DsRun **out);

/**
 * Headline test accuracy after the last epoch.
 *
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum DsStatus ds_run_final_accuracy(const struct DsRun *run, double *out);

/**
 * Number of metric rows recorded by the run.
 *
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum DsStatus ds_run_metric_count(const struct DsRun *run, size_t *out);

/**
 * All metric rows as CSV with header `run_id,method,seed,epoch,metric,value`.
 *
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum DsStatus ds_run_metrics_csv(const struct DsRun *run, char **out);

/**
 * # Safety
 * `run` must be null or a handle from this library, freed once.
 */
void ds_run_free(struct DsRun *run);

/**
 * Whether one sample is stable for a student: the same class is predicted
 * on both views and at least one view is more confident than `xi`.
 *
 * # Safety
 * `probs_x` and `probs_xbar` must each point to `n_classes` doubles.
 */
enum DsStatus ds_stable_flag(const double *probs_x,
                             const double *probs_xbar,
                             size_t n_classes,
                             double xi,
                             bool *out);

/**
 * Squared distance between the two views' predictions.
 *
 * # Safety
 * `probs_x` and `probs_xbar` must each point to `n_classes` doubles.
 */
enum DsStatus ds_stability_score(const double *probs_x,
                                 const double *probs_xbar,
                                 size_t n_classes,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DUALSTUDENT_H */
