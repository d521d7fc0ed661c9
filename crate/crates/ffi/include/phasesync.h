#ifndef PHASESYNC_H
#define PHASESYNC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum PsStatus {
  PS_STATUS_OK = 0,
  PS_STATUS_NULL_POINTER = 1,
  PS_STATUS_INVALID_UTF8 = 2,
  PS_STATUS_UNKNOWN_EXPERIMENT = 3,
  PS_STATUS_INVALID_CONFIG = 4,
  PS_STATUS_RUN_FAILED = 5,
  PS_STATUS_BUFFER_TOO_SMALL = 6,
  PS_STATUS_PANIC = 7,
} PsStatus;

/**
 * Opaque experiment configuration.
 */
typedef struct PsConfig PsConfig;

/**
 * Fitted fringe `offset * (1 + depth * sin(2 phi + phase))`.
 */
typedef struct PsFringeFit {
  double offset;
  double depth;
  double phase;
  double rms_residual;
} PsFringeFit;

/**
 * Counts and probabilities from one protocol run.
 */
typedef struct PsProtocolSummary {
  uint64_t pairs;
  /**
   * Pairs where Alice found |+>.
   */
  uint64_t m;
  /**
   * Of those, pairs where Bob succeeded.
   */
  uint64_t l;
  double alice_probability;
  double bob_probability;
  /**
   * L/M divided by eta, NaN when M = 0.
   */
  double zeta_normalized;
} PsProtocolSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Free with `ps_string_free`.
 */
char *ps_last_error_message(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void ps_string_free(char *s);

/**
 * Default configuration for the named experiment, e.g. "bso-scan".
 *
 * # Safety
 * `experiment` must be a NUL-terminated string; `out` must be writable.
 */
enum PsStatus ps_config_new(const char *experiment, struct PsConfig **out);

/**
 * # Safety
 * `cfg` must be NULL or a handle from `ps_config_new` not yet freed.
 */
void ps_config_free(struct PsConfig *cfg);

/**
 * Set one parameter from its text form, as `--set key=value` would.
 *
 * # Safety
 * `cfg` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum PsStatus ps_config_set(struct PsConfig *cfg, const char *key, const char *value);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum PsStatus ps_config_set_seed(struct PsConfig *cfg, uint64_t seed);

/**
 * Current value of one parameter as text. Free the result with `ps_string_free`.
 *
 * # Safety
 * `cfg` must be a live handle; `key` NUL-terminated; `out` writable.
 */
enum PsStatus ps_config_get(const struct PsConfig *cfg, const char *key, char **out);

/**
 * Run the experiment and write the CSV to `out_path`, plus the manifest and
 * transcript beside it. If `summary` is non-NULL it receives the
 * `key: value` summary lines, newline separated.
 *
 * # Safety
 * `cfg` must be a live handle; `out_path` NUL-terminated; `summary` NULL or writable.
 */
enum PsStatus ps_run(const struct PsConfig *cfg, const char *out_path, char **summary);

/**
 * Excited population after a readout pi/2 pulse at `len` phases spread
 * uniformly over [0, pi), with the fringe fit.
 *
 * # Safety
 * `phases` and `populations` must each hold `len` doubles; `fit` NULL or writable.
 */
enum PsStatus ps_bso_scan(double eta,
                          double omega,
                          size_t len,
                          double *phases,
                          double *populations,
                          struct PsFringeFit *fit);

/**
 * One protocol run over an ideal channel.
 *
 * # Safety
 * `out` must be writable.
 */
enum PsStatus ps_teleport(double phi,
                          double chi,
                          double eta,
                          uint64_t pairs,
                          uint64_t seed,
                          struct PsProtocolSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHASESYNC_H */
