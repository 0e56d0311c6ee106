#ifndef FISHER_MALA_H
#define FISHER_MALA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum FmStatus {
  FM_STATUS_OK = 0,
  FM_STATUS_NULL_POINTER = 1,
  FM_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The configuration text did not parse or validate.
   */
  FM_STATUS_CONFIG = 3,
  FM_STATUS_IO = 4,
  /**
   * A chain file failed its checksum or structural checks.
   */
  FM_STATUS_CORRUPT = 5,
  /**
   * Sampling or numerical failure.
   */
  FM_STATUS_RUNTIME = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  FM_STATUS_PANIC = 7,
} FmStatus;

/**
 * Sampler selector for [`fm_run_config`].
 */
typedef enum FmSampler {
  FM_SAMPLER_FISHER_MALA = 0,
  FM_SAMPLER_ADA_MALA = 1,
  FM_SAMPLER_MALA = 2,
  FM_SAMPLER_PCN = 3,
} FmSampler;

/**
 * A chain: every iteration's state plus acceptance and phase bookkeeping.
 */
typedef struct FmChain FmChain;

/**
 * Square-root Fisher preconditioner `M = R Rᵀ`.
 */
typedef struct FmPrecond FmPrecond;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null if none.
 *
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *fm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fm_version(void);

/**
 * Starts a preconditioner from the first signal `s1` (length `dim`) with damping `lambda`.
 *
 * # Safety
 * `s1` must point to `dim` doubles and `out` to writable storage for a handle.
 */
enum FmStatus fm_precond_new(const double *s1, size_t dim, double lambda, struct FmPrecond **out);

/**
 * Rank-one update with signal `s` of length `dim`.
 *
 * # Safety
 * `p` must be a live handle and `s` must point to `dim` doubles.
 */
enum FmStatus fm_precond_update(struct FmPrecond *p, const double *s, size_t dim);

/**
 * Dimension of the preconditioner, 0 for a null handle.
 *
 * # Safety
 * `p` must be null or a live handle.
 */
size_t fm_precond_dim(const struct FmPrecond *p);

/**
 * Writes `M = R Rᵀ` row-major into `out` (`len` must be `dim²`).
 *
 * # Safety
 * `p` must be a live handle and `out` must point to `len` writable doubles.
 */
enum FmStatus fm_precond_matrix(const struct FmPrecond *p, double *out, size_t len);

/**
 * Writes `M v` into `out`; both vectors have length `dim`.
 *
 * # Safety
 * `p` must be a live handle; `v` and `out` must point to `dim` doubles.
 */
enum FmStatus fm_precond_apply(const struct FmPrecond *p, const double *v, double *out, size_t dim);

/**
 * Releases a preconditioner; null is ignored.
 *
 * # Safety
 * `p` must be null or a handle not yet freed.
 */
void fm_precond_free(struct FmPrecond *p);

/**
 * ESS of an `n × dim` row-major sample matrix at maximum lag `lag`.
 *
 * Writes per-coordinate ESS into `ess_out` (length `dim`) and, if
 * `monolithic_out` is not null, `n / τ_max` into it.
 *
 * # Safety
 * `samples` must point to `n·dim` doubles, `ess_out` to `dim` writable
 * doubles and `monolithic_out` must be null or writable.
 */
enum FmStatus fm_ess(const double *samples,
                     size_t n,
                     size_t dim,
                     size_t lag,
                     double *ess_out,
                     double *monolithic_out);

/**
 * Runs one chain of `sampler` for the experiment described by the TOML
 * text `config`, using the seed of replicate `replicate`.
 *
 * # Safety
 * `config` must be a NUL-terminated string and `out` writable.
 */
enum FmStatus fm_run_config(const char *config,
                            enum FmSampler sampler,
                            size_t replicate,
                            struct FmChain **out);

/**
 * Loads a chain file written by the `fisher-mala` tools.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum FmStatus fm_chain_read(const char *path, struct FmChain **out);

/**
 * Writes a chain in the binary chain format.
 *
 * # Safety
 * `chain` must be a live handle and `path` a NUL-terminated string.
 */
enum FmStatus fm_chain_write(const struct FmChain *chain, const char *path);

/**
 * Total number of stored iterations, 0 for a null handle.
 *
 * # Safety
 * `chain` must be null or a live handle.
 */
size_t fm_chain_len(const struct FmChain *chain);

/**
 * State dimension, 0 for a null handle.
 *
 * # Safety
 * `chain` must be null or a live handle.
 */
size_t fm_chain_dim(const struct FmChain *chain);

/**
 * Index of the first collection-phase iteration, 0 for a null handle.
 *
 * # Safety
 * `chain` must be null or a live handle.
 */
size_t fm_chain_burn_in(const struct FmChain *chain);

/**
 * Copies all states (`len × dim`, row-major) into `out`; `n` must equal `len·dim`.
 *
 * # Safety
 * `chain` must be a live handle and `out` must point to `n` writable doubles.
 */
enum FmStatus fm_chain_samples(const struct FmChain *chain, double *out, size_t n);

/**
 * Collection-phase posterior mean into `out` (length `dim`).
 *
 * # Safety
 * `chain` must be a live handle and `out` must point to `dim` writable doubles.
 */
enum FmStatus fm_chain_posterior_mean(const struct FmChain *chain, double *out, size_t dim);

/**
 * Collection-phase acceptance rate.
 *
 * # Safety
 * `chain` must be a live handle and `out` writable.
 */
enum FmStatus fm_chain_acceptance_rate(const struct FmChain *chain, double *out);

/**
 * Releases a chain; null is ignored.
 *
 * # Safety
 * `chain` must be null or a handle not yet freed.
 */
void fm_chain_free(struct FmChain *chain);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FISHER_MALA_H */
