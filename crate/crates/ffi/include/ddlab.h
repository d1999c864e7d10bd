#ifndef DDLAB_H
#define DDLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DdlabStatus {
  DDLAB_STATUS_OK = 0,
  DDLAB_STATUS_NULL_POINTER = 1,
  DDLAB_STATUS_INVALID_ARGUMENT = 2,
  DDLAB_STATUS_CONFIG = 3,
  DDLAB_STATUS_NUMERICAL = 4,
  DDLAB_STATUS_RESOURCE = 5,
  DDLAB_STATUS_IO = 6,
  DDLAB_STATUS_PANIC = 7,
} DdlabStatus;

typedef enum DdlabNoiseKind {
  DDLAB_NOISE_KIND_UNIFORM = 0,
  DDLAB_NOISE_KIND_MASKING = 1,
} DdlabNoiseKind;

/**
 * Opaque experiment configuration.
 */
typedef struct DdlabConfig DdlabConfig;

/**
 * Opaque probability mass function over a product state space.
 */
typedef struct DdlabPmf DdlabPmf;

/**
 * Opaque result of a convergence sweep.
 */
typedef struct DdlabSweep DdlabSweep;

/**
 * ℬ, 𝒞 and 𝒟 of a law, with quadrature error estimates for 𝒟.
 */
typedef struct DdlabCorrelations {
  double dual_total_correlation;
  double total_correlation;
  double effective_total_correlation;
  double effective_error;
} DdlabCorrelations;

/**
 * One row of a sweep. `kl` is +∞ when the output misses data support.
 */
typedef struct DdlabSweepRow {
  size_t n;
  double kl;
  double tv;
  double eps_score;
  double kappa_eff;
} DdlabSweepRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ddlab_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated and
 * NUL-terminated) and returns its full length in bytes, without the NUL.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes of writes.
 */
size_t ddlab_last_error(char *buf, size_t len);

/**
 * Builds a target law from a JSON `DistributionSpec`, e.g.
 * `{"type": "xor", "d": 4}`.
 *
 * # Safety
 * `spec_json` must be a NUL-terminated string; `out` must be valid for a write.
 */
enum DdlabStatus ddlab_pmf_from_spec(const char *spec_json, struct DdlabPmf **out);

/**
 * Builds a law over {0..vocab_size−1}^dim from `len = vocab_size^dim`
 * masses in mixed-radix order (coordinate 0 varies fastest).
 *
 * # Safety
 * `mass` must be valid for `len` reads; `out` must be valid for a write.
 */
enum DdlabStatus ddlab_pmf_from_mass(size_t dim,
                                     size_t vocab_size,
                                     const double *mass,
                                     size_t len,
                                     struct DdlabPmf **out);

/**
 * # Safety
 * `pmf` must be null or a handle from this library not yet freed.
 */
void ddlab_pmf_free(struct DdlabPmf *pmf);

/**
 * Number of states, or 0 for a null handle.
 *
 * # Safety
 * `pmf` must be null or a live handle.
 */
size_t ddlab_pmf_len(const struct DdlabPmf *pmf);

/**
 * Coordinates and vocabulary size (without MASK) of the law.
 *
 * # Safety
 * `pmf` must be a live handle; `dim` and `vocab_size` valid for writes.
 */
enum DdlabStatus ddlab_pmf_shape(const struct DdlabPmf *pmf,
                                 size_t *dim,
                                 size_t *vocab_size,
                                 bool *has_mask);

/**
 * Copies the masses into `out`, which must hold `ddlab_pmf_len` values.
 *
 * # Safety
 * `pmf` must be a live handle; `out` valid for `len` writes.
 */
enum DdlabStatus ddlab_pmf_mass(const struct DdlabPmf *pmf, double *out, size_t len);

/**
 * Forward marginal q_t of the law under the given noise; a new handle.
 * Masking results live on the alphabet with MASK as the last symbol.
 *
 * # Safety
 * `pmf` must be a live handle; `out` valid for a write.
 */
enum DdlabStatus ddlab_pmf_propagate(const struct DdlabPmf *pmf,
                                     enum DdlabNoiseKind kind,
                                     double t,
                                     struct DdlabPmf **out);

/**
 * KL(p ‖ q); writes +∞ when p is not absolutely continuous w.r.t. q.
 *
 * # Safety
 * `p`, `q` must be live handles; `out` valid for a write.
 */
enum DdlabStatus ddlab_kl(const struct DdlabPmf *p, const struct DdlabPmf *q, double *out);

/**
 * ℬ and 𝒞 by enumeration, 𝒟 by quadrature at relative tolerance `rel_tol`.
 *
 * # Safety
 * `pmf` must be a live handle; `out` valid for a write.
 */
enum DdlabStatus ddlab_correlations(const struct DdlabPmf *pmf,
                                    double rel_tol,
                                    struct DdlabCorrelations *out);

/**
 * Parses and validates an experiment config given as JSON.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out` valid for a write.
 */
enum DdlabStatus ddlab_config_from_json(const char *config_json, struct DdlabConfig **out);

/**
 * Loads a TOML (or `.json`) config file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` valid for a write.
 */
enum DdlabStatus ddlab_config_load(const char *path, struct DdlabConfig **out);

/**
 * # Safety
 * `config` must be null or a live handle.
 */
void ddlab_config_free(struct DdlabConfig *config);

/**
 * Runs the convergence sweep of `config`. Rows that fail are left out of the
 * result; their count is reported by `ddlab_sweep_failures`.
 *
 * # Safety
 * `config` must be a live handle; `out` valid for a write.
 */
enum DdlabStatus ddlab_sweep_run(const struct DdlabConfig *config, struct DdlabSweep **out);

/**
 * # Safety
 * `sweep` must be null or a live handle.
 */
void ddlab_sweep_free(struct DdlabSweep *sweep);

/**
 * # Safety
 * `sweep` must be null or a live handle.
 */
size_t ddlab_sweep_len(const struct DdlabSweep *sweep);

/**
 * # Safety
 * `sweep` must be null or a live handle.
 */
size_t ddlab_sweep_failures(const struct DdlabSweep *sweep);

/**
 * # Safety
 * `sweep` must be a live handle; `out` valid for a write.
 */
enum DdlabStatus ddlab_sweep_row(const struct DdlabSweep *sweep,
                                 size_t index,
                                 struct DdlabSweepRow *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DDLAB_H */
