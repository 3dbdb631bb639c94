/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#ifndef KSUBSET_H
#define KSUBSET_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result codes.
 */
typedef enum KsStatus {
  KS_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  KS_STATUS_NULL_POINTER = 1,
  /**
   * Parameters violate a precondition (ε ≤ 0, d < 2, unknown mechanism, ...).
   */
  KS_STATUS_INVALID_ARGUMENT = 2,
  /**
   * An index or subset size is outside its allowed range.
   */
  KS_STATUS_OUT_OF_RANGE = 3,
  /**
   * An output buffer is too small; the required length is still reported.
   */
  KS_STATUS_BUFFER_TOO_SMALL = 4,
  /**
   * No views have been aggregated yet.
   */
  KS_STATUS_NO_DATA = 5,
  /**
   * A computation left its supported numeric range.
   */
  KS_STATUS_NUMERIC = 6,
  /**
   * A Rust panic was caught.
   */
  KS_STATUS_INTERNAL = 7,
} KsStatus;

/**
 * Mechanism selector.
 */
typedef enum KsMechanism {
  /**
   * Binary randomized response; `k` is ignored.
   */
  KS_MECHANISM_BRR = 0,
  /**
   * Multivariate randomized response; `k` is ignored.
   */
  KS_MECHANISM_MRR = 1,
  /**
   * k-subset with the caller's `k`.
   */
  KS_MECHANISM_K_SUBSET = 2,
  /**
   * k-subset at the information-optimal size.
   */
  KS_MECHANISM_K_SUBSET_MI = 3,
  /**
   * k-subset at the ℓ₂-optimal size.
   */
  KS_MECHANISM_K_SUBSET_L2 = 4,
} KsMechanism;

/**
 * Accumulates views and produces distribution estimates.
 */
typedef struct KsAggregator KsAggregator;

/**
 * An explicit channel matrix.
 */
typedef struct KsChannel KsChannel;

/**
 * A seeded randomizer for one mechanism.
 */
typedef struct KsRandomizer KsRandomizer;

/**
 * Error statistics for one mechanism of [`ks_run_experiment`].
 */
typedef struct KsMechanismResult {
  enum KsMechanism mechanism;
  /**
   * Subset size, or 0 for BRR and MRR.
   */
  uintptr_t k;
  double mean_l2_sq;
  double se_l2_sq;
  double mean_l1;
  double se_l1;
} KsMechanismResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or NULL if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ks_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ks_version(void);

/**
 * I_k in nats for `0 <= k <= d`.
 *
 * # Safety
 * `out` must be NULL or valid for writes.
 */
enum KsStatus ks_mutual_info_ik(uintptr_t d, double epsilon, uintptr_t k, double *out);

/**
 * The continuous maximizer β of I_k.
 *
 * # Safety
 * `out` must be NULL or valid for writes.
 */
enum KsStatus ks_beta_optimal(uintptr_t d, double epsilon, double *out);

/**
 * Information-optimal subset size and its I_k.
 *
 * # Safety
 * Out-pointers must be NULL or valid for writes.
 */
enum KsStatus ks_kstar(uintptr_t d, double epsilon, uintptr_t *out_k, double *out_info);

/**
 * ℓ₂-optimal subset size and its expected squared ℓ₂ error at `n` views.
 *
 * # Safety
 * Out-pointers must be NULL or valid for writes.
 */
enum KsStatus ks_ksharp(uintptr_t d, double epsilon, uint64_t n, uintptr_t *out_k, double *out_l2);

/**
 * Maximum mutual information over subset sizes, in nats.
 *
 * # Safety
 * `out` must be NULL or valid for writes.
 */
enum KsStatus ks_max_mutual_info(uintptr_t d, double epsilon, double *out);

/**
 * Mutual information of binary randomized response and its upper bound.
 *
 * # Safety
 * Out-pointers must be NULL or valid for writes.
 */
enum KsStatus ks_brr_mutual_info(uintptr_t d, double epsilon, double *out_info, double *out_bound);

/**
 * Expected squared ℓ₂ error of the unprojected k-subset estimate.
 *
 * # Safety
 * `out` must be NULL or valid for writes.
 */
enum KsStatus ks_analytic_l2_error(uintptr_t d,
                                   double epsilon,
                                   uintptr_t k,
                                   uint64_t n,
                                   double *out);

/**
 * Own-symbol and other-symbol hit rates of a mechanism.
 *
 * # Safety
 * Out-pointers must be NULL or valid for writes.
 */
enum KsStatus ks_hit_rates(uintptr_t d,
                           double epsilon,
                           enum KsMechanism mechanism,
                           uintptr_t k,
                           double *out_g,
                           double *out_h);

/**
 * Creates a randomizer drawing from a stream seeded with `seed`.
 *
 * # Safety
 * `out` must be NULL or valid for writes.
 */
enum KsStatus ks_randomizer_new(uintptr_t d,
                                double epsilon,
                                enum KsMechanism mechanism,
                                uintptr_t k,
                                uint64_t seed,
                                struct KsRandomizer **out);

/**
 * Fixed view size of the randomizer's mechanism, or 0 when views vary in
 * size (BRR).
 *
 * # Safety
 * `r` must be NULL or a live handle.
 */
uintptr_t ks_randomizer_view_size(const struct KsRandomizer *r);

/**
 * Privatizes secret `x`, writing the ascending view members into
 * `members[0..*out_len]`. A buffer of `d` entries always suffices. On
 * `KS_STATUS_BUFFER_TOO_SMALL`, `*out_len` holds the needed length and the
 * draw is discarded.
 *
 * # Safety
 * `r` must be a live handle; `members` must be valid for `capacity` writes.
 */
enum KsStatus ks_randomizer_randomize(struct KsRandomizer *r,
                                      uintptr_t x,
                                      uintptr_t *members,
                                      uintptr_t capacity,
                                      uintptr_t *out_len);

/**
 * # Safety
 * `r` must be NULL or a handle from [`ks_randomizer_new`] not yet freed.
 */
void ks_randomizer_free(struct KsRandomizer *r);

/**
 * Creates an aggregator for views produced by `mechanism`.
 *
 * # Safety
 * `out` must be NULL or valid for writes.
 */
enum KsStatus ks_aggregator_new(uintptr_t d,
                                double epsilon,
                                enum KsMechanism mechanism,
                                uintptr_t k,
                                struct KsAggregator **out);

/**
 * Adds one view of `len` strictly ascending members.
 *
 * # Safety
 * `a` must be a live handle; `members` must be valid for `len` reads.
 */
enum KsStatus ks_aggregator_add_view(struct KsAggregator *a,
                                     const uintptr_t *members,
                                     uintptr_t len);

/**
 * Number of views added so far, or 0 for NULL.
 *
 * # Safety
 * `a` must be NULL or a live handle.
 */
uint64_t ks_aggregator_count(const struct KsAggregator *a);

/**
 * Writes the `d`-entry estimate into `theta`, projected onto the simplex
 * when `project` is true.
 *
 * # Safety
 * `a` must be a live handle; `theta` must be valid for `len` writes.
 */
enum KsStatus ks_aggregator_estimate(const struct KsAggregator *a,
                                     bool project,
                                     double *theta,
                                     uintptr_t len);

/**
 * # Safety
 * `a` must be NULL or a handle from [`ks_aggregator_new`] not yet freed.
 */
void ks_aggregator_free(struct KsAggregator *a);

/**
 * Builds the explicit channel of a mechanism (`d <= 20`).
 *
 * # Safety
 * `out` must be NULL or valid for writes.
 */
enum KsStatus ks_channel_new(uintptr_t d,
                             double epsilon,
                             enum KsMechanism mechanism,
                             uintptr_t k,
                             struct KsChannel **out);

/**
 * Number of output columns, or 0 for NULL.
 *
 * # Safety
 * `c` must be NULL or a live handle.
 */
uintptr_t ks_channel_num_outputs(const struct KsChannel *c);

/**
 * Conditional probability of output column `z` given input `x`.
 *
 * # Safety
 * `c` must be a live handle; `out` must be NULL or valid for writes.
 */
enum KsStatus ks_channel_prob(const struct KsChannel *c, uintptr_t x, uintptr_t z, double *out);

/**
 * Mutual information under a uniform prior, in nats.
 *
 * # Safety
 * `c` must be a live handle; `out` must be NULL or valid for writes.
 */
enum KsStatus ks_channel_mutual_info(const struct KsChannel *c, double *out);

/**
 * Checks ε-local differential privacy; reports the worst column ratio.
 *
 * # Safety
 * `c` must be a live handle; out-pointers must be NULL or valid for writes.
 */
enum KsStatus ks_channel_validate_ldp(const struct KsChannel *c,
                                      double epsilon,
                                      bool *out_satisfied,
                                      double *out_worst_ratio);

/**
 * # Safety
 * `c` must be NULL or a handle from [`ks_channel_new`] not yet freed.
 */
void ks_channel_free(struct KsChannel *c);

/**
 * Runs the Monte Carlo experiment for BRR, MRR, and both optimal k-subset
 * sizes, writing four results into `out` in that order. `threads == 0`
 * uses the default pool; the thread count never affects results.
 *
 * # Safety
 * `out` must be valid for `capacity` writes; `out_len` for one write.
 */
enum KsStatus ks_run_experiment(uintptr_t d,
                                double epsilon,
                                uint64_t n,
                                uintptr_t reps,
                                uint64_t seed,
                                uintptr_t threads,
                                bool project,
                                struct KsMechanismResult *out,
                                uintptr_t capacity,
                                uintptr_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KSUBSET_H */
