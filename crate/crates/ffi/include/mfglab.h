#ifndef MFGLAB_H
#define MFGLAB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MfglabStatus {
  MFGLAB_STATUS_OK = 0,
  MFGLAB_STATUS_NULL_ARGUMENT = 1,
  MFGLAB_STATUS_INVALID_UTF8 = 2,
  MFGLAB_STATUS_INVALID_CONFIG = 3,
  MFGLAB_STATUS_INVALID_ARGUMENT = 4,
  MFGLAB_STATUS_OUT_OF_RANGE = 5,
  MFGLAB_STATUS_BUFFER_TOO_SMALL = 6,
  MFGLAB_STATUS_NUMERICAL = 7,
  MFGLAB_STATUS_IO = 8,
  MFGLAB_STATUS_PANIC = 9,
} MfglabStatus;

// A validated experiment configuration.
typedef struct MfglabConfig MfglabConfig;

// A solved measure path: densities on a uniform grid at every time step.
typedef struct MfglabPath MfglabPath;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// NUL-terminated library version; static storage.
const char *mfglab_version(void);

// Message of the last failure on this thread, or null if none. Valid until
// the next failing call on the same thread.
const char *mfglab_last_error_message(void);

// Parses `text` (`key = value` lines) as the configuration of `command`
// (a subcommand name such as `"spde-solve"`). All problems are reported at
// once, separated by `"; "`.
//
// # Safety
// `command` and `text` are NUL-terminated strings; `out` is writable.
enum MfglabStatus mfglab_config_parse(const char *command,
                                      const char *text,
                                      struct MfglabConfig **out);

// Sets `key` to `value`, revalidating the whole configuration. On failure
// the configuration is unchanged.
//
// # Safety
// `cfg` is a live handle; `key` and `value` are NUL-terminated strings.
enum MfglabStatus mfglab_config_set(struct MfglabConfig *cfg, const char *key, const char *value);

// Writes the 64 hex digits of the configuration hash and a NUL into `buf`.
//
// # Safety
// `cfg` is a live handle; `buf` is writable for `len` bytes.
enum MfglabStatus mfglab_config_hash(const struct MfglabConfig *cfg, char *buf, size_t len);

// # Safety
// `cfg` is null or a handle from [`mfglab_config_parse`] not yet freed.
void mfglab_config_free(struct MfglabConfig *cfg);

// Runs the configured subcommand on `workers` threads (0: one per core) and
// writes `report.json`, its CSV files and `meta.json` into `out_dir`.
//
// # Safety
// `cfg` is a live handle; `out_dir` is a NUL-terminated string.
enum MfglabStatus mfglab_run(const struct MfglabConfig *cfg, const char *out_dir, size_t workers);

// Solves the SPDE of a `spde-solve` configuration on the common-noise path
// of `seed`.
//
// # Safety
// `cfg` is a live handle; `out` is writable.
enum MfglabStatus mfglab_spde_solve(const struct MfglabConfig *cfg,
                                    uint64_t seed,
                                    struct MfglabPath **out);

// Number of stored time levels (steps + 1) and of grid nodes.
//
// # Safety
// `path` is a live handle; `n_times` and `n_nodes` are writable.
enum MfglabStatus mfglab_path_shape(const struct MfglabPath *path,
                                    size_t *n_times,
                                    size_t *n_nodes);

// Grid nodes into `buf[0..n_nodes]`.
//
// # Safety
// `path` is a live handle; `buf` is writable for `len` doubles.
enum MfglabStatus mfglab_path_nodes(const struct MfglabPath *path, double *buf, size_t len);

// Density at time level `step` into `buf[0..n_nodes]`.
//
// # Safety
// `path` is a live handle; `buf` is writable for `len` doubles.
enum MfglabStatus mfglab_path_density(const struct MfglabPath *path,
                                      size_t step,
                                      double *buf,
                                      size_t len);

// Raw moment ∫ xᵏ μ(dx) at time level `step`, and the common noise W there.
//
// # Safety
// `path` is a live handle; `moment` and `w` are writable.
enum MfglabStatus mfglab_path_moment(const struct MfglabPath *path,
                                     size_t step,
                                     int32_t k,
                                     double *moment,
                                     double *w);

// # Safety
// `path` is null or a handle from [`mfglab_spde_solve`] not yet freed.
void mfglab_path_free(struct MfglabPath *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFGLAB_H */
