#ifndef FEDAA_H
#define FEDAA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call. Zero is success.
typedef enum FedaaStatus {
  FEDAA_STATUS_OK = 0,
  FEDAA_STATUS_NULL_POINTER = 1,
  FEDAA_STATUS_INVALID_UTF8 = 2,
  FEDAA_STATUS_CONFIG = 3,
  FEDAA_STATUS_PARSE = 4,
  FEDAA_STATUS_NUMERIC = 5,
  FEDAA_STATUS_INGEST = 6,
  FEDAA_STATUS_SIMULATION = 7,
  FEDAA_STATUS_IO = 8,
  FEDAA_STATUS_OUT_OF_RANGE = 9,
  FEDAA_STATUS_INTERNAL = 10,
  FEDAA_STATUS_PANIC = 11,
} FedaaStatus;

// Per-round scalar exposed by [`fedaa_run_metric`].
typedef enum FedaaMetric {
  FEDAA_METRIC_REWARD = 0,
  FEDAA_METRIC_MEAN_BENIGN_ACC = 1,
  FEDAA_METRIC_ACC_STD = 2,
  FEDAA_METRIC_ACC_VAR = 3,
  FEDAA_METRIC_LOSS_STD = 4,
  FEDAA_METRIC_GLOBAL_ACC_MEAN = 5,
  FEDAA_METRIC_MALICIOUS_SELECTED = 6,
} FedaaMetric;

typedef enum FedaaFormat {
  FEDAA_FORMAT_CSV = 0,
  FEDAA_FORMAT_JSON = 1,
} FedaaFormat;

// Parsed experiment configuration.
typedef struct FedaaConfig FedaaConfig;

// Completed run: one record per round.
typedef struct FedaaRun FedaaRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call into this library on the same thread.
const char *fedaa_last_error(void);

// Parses configuration text.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
enum FedaaStatus fedaa_config_parse_str(const char *text, struct FedaaConfig **out);

// Parses a configuration file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum FedaaStatus fedaa_config_parse_file(const char *path, struct FedaaConfig **out);

// Overrides one key. On failure the configuration is left unchanged.
//
// # Safety
// `config` must come from a parse call; `key` and `value` must be NUL-terminated.
enum FedaaStatus fedaa_config_set(struct FedaaConfig *config, const char *key, const char *value);

// Canonical text of the configuration. Free the result with [`fedaa_string_free`].
//
// # Safety
// `config` must come from a parse call; `out` must be writable.
enum FedaaStatus fedaa_config_to_text(const struct FedaaConfig *config, char **out);

// # Safety
// `config` must come from a parse call or be null; it must not be used afterwards.
void fedaa_config_free(struct FedaaConfig *config);

// # Safety
// `s` must come from this library or be null.
void fedaa_string_free(char *s);

// Runs the experiment with the configured aggregator.
//
// # Safety
// `config` must come from a parse call; `out` must be writable.
enum FedaaStatus fedaa_run(const struct FedaaConfig *config, struct FedaaRun **out);

// Runs the size-weighted averaging baseline on the same configuration.
//
// # Safety
// `config` must come from a parse call; `out` must be writable.
enum FedaaStatus fedaa_run_fedavg(const struct FedaaConfig *config, struct FedaaRun **out);

// Number of rounds in the run; zero for null.
//
// # Safety
// `run` must come from a run call or be null.
size_t fedaa_run_rounds(const struct FedaaRun *run);

// # Safety
// `run` must come from a run call; `out` must be writable.
enum FedaaStatus fedaa_run_metric(const struct FedaaRun *run,
                                  size_t round,
                                  enum FedaaMetric metric,
                                  double *out);

// Copies up to `capacity` selected ids and their weights of `round`.
// `len` receives the full count; either buffer may be null to query it.
//
// # Safety
// Non-null `ids` and `weights` must hold `capacity` elements; `len` must be writable.
enum FedaaStatus fedaa_run_selection(const struct FedaaRun *run,
                                     size_t round,
                                     size_t *ids,
                                     double *weights,
                                     size_t capacity,
                                     size_t *len);

// Writes the per-round records.
//
// # Safety
// `run` must come from a run call; `path` must be NUL-terminated.
enum FedaaStatus fedaa_run_write(const struct FedaaRun *run,
                                 const char *path,
                                 enum FedaaFormat format);

// # Safety
// `run` must come from a run call or be null; it must not be used afterwards.
void fedaa_run_free(struct FedaaRun *run);

// Parameter count of a fully connected network with the given widths.
//
// # Safety
// `hidden` must hold `num_hidden` elements (may be null when zero); `out` must be writable.
enum FedaaStatus fedaa_param_count(size_t input,
                                   const size_t *hidden,
                                   size_t num_hidden,
                                   size_t output,
                                   size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDAA_H */
