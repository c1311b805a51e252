#ifndef CAMELOT_H
#define CAMELOT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

enum CamelotStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  CAMELOT_STATUS_OK = 0,
  CAMELOT_STATUS_NULL_POINTER = 1,
  CAMELOT_STATUS_DIMENSION_MISMATCH = 2,
  CAMELOT_STATUS_ZERO_VECTOR = 3,
  CAMELOT_STATUS_NON_FINITE = 4,
  CAMELOT_STATUS_INVALID_CONFIG = 5,
  CAMELOT_STATUS_INVALID_INPUT = 6,
  CAMELOT_STATUS_SNAPSHOT_CORRUPT = 7,
  CAMELOT_STATUS_SNAPSHOT_VERSION = 8,
  CAMELOT_STATUS_SNAPSHOT_CONFIG_MISMATCH = 9,
  CAMELOT_STATUS_BUFFER_TOO_SMALL = 10,
  CAMELOT_STATUS_PANIC = 11,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum CamelotStatus CamelotStatus;
#else
typedef int32_t CamelotStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Opaque bank handle.
 */
typedef struct CamelotBank CamelotBank;

/**
 * Similarity tags: 0 cosine, 1 negative euclidean.
 * Ablation tags: 0 full, 1 no-read, 2 no-recency, 3 no-novelty,
 * 4 no-consolidation.
 */
typedef struct CamelotBankConfig {
  size_t capacity;
  size_t dim;
  double threshold;
  uint8_t similarity;
  uint8_t ablation;
  uint64_t seed;
} CamelotBankConfig;

typedef struct CamelotWriteSummary {
  size_t consolidated;
  size_t novel_inserted;
  size_t evicted;
} CamelotWriteSummary;

typedef struct CamelotBankStats {
  size_t capacity;
  size_t dim;
  size_t occupancy;
  uint64_t total_count;
} CamelotBankStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Default configuration: threshold 0.93, cosine, full, seed 0.
 */
struct CamelotBankConfig camelot_bank_config_default(size_t capacity, size_t dim);

/**
 * Creates an empty bank.
 *
 * # Safety
 * `config` must point to a valid config and `out` to writable storage.
 */
CamelotStatus camelot_bank_new(const struct CamelotBankConfig *config, struct CamelotBank **out);

/**
 * Releases a bank. Null is ignored.
 *
 * # Safety
 * `bank` must come from this library and not be used afterwards.
 */
void camelot_bank_free(struct CamelotBank *bank);

/**
 * Writes `n` tokens. On error the bank is unchanged. `summary` may be null.
 *
 * # Safety
 * `keys` and `values` must hold `n * dim` elements each.
 */
CamelotStatus camelot_bank_write(struct CamelotBank *bank,
                                 const double *keys,
                                 const double *values,
                                 size_t n,
                                 struct CamelotWriteSummary *summary);

/**
 * Retrieves one slot per query. `out_keys` and `out_values` need room for
 * `n * dim` elements and `out_slots` for `n`; `out_count` receives the
 * number retrieved (0 for an empty bank, otherwise `n`).
 *
 * # Safety
 * All pointers must be valid for the sizes above.
 */
CamelotStatus camelot_bank_read(struct CamelotBank *bank,
                                const double *keys,
                                size_t n,
                                double *out_keys,
                                double *out_values,
                                size_t *out_slots,
                                size_t *out_count);

/**
 * # Safety
 * `bank` must be a live handle and `out` writable.
 */
CamelotStatus camelot_bank_stats(const struct CamelotBank *bank, struct CamelotBankStats *out);

/**
 * Serializes the bank. `out_len` always receives the snapshot size; when
 * `buf` is null or shorter than that, nothing is copied and
 * `BufferTooSmall` is returned.
 *
 * # Safety
 * `buf` must be valid for `buf_len` bytes when non-null.
 */
CamelotStatus camelot_bank_snapshot(const struct CamelotBank *bank,
                                    uint8_t *buf,
                                    size_t buf_len,
                                    size_t *out_len);

/**
 * Rebuilds a bank from a snapshot. With a non-null `expected`, the snapshot
 * must match its dimension, capacity, similarity, ablation and threshold,
 * and the random stream is reseeded from it.
 *
 * # Safety
 * `bytes` must be valid for `len` bytes; `out` must be writable.
 */
CamelotStatus camelot_bank_restore(const uint8_t *bytes,
                                   size_t len,
                                   const struct CamelotBankConfig *expected,
                                   struct CamelotBank **out);

/**
 * # Safety
 * `a` and `b` must hold `dim` elements; `out` must be writable.
 */
CamelotStatus camelot_similarity(const double *a,
                                 const double *b,
                                 size_t dim,
                                 uint8_t similarity_kind,
                                 double *out);

/**
 * Argmax over the occupied rows of `keys` (`n_slots * dim`). `out_found` is
 * set to 0 when no slot is occupied. Ties go to the lowest index.
 *
 * # Safety
 * `keys` must hold `n_slots * dim` elements, `occupied` `n_slots` bytes,
 * `query` `dim` elements; the out pointers must be writable.
 */
CamelotStatus camelot_nearest_slot(const double *keys,
                                   const uint8_t *occupied,
                                   size_t n_slots,
                                   size_t dim,
                                   const double *query,
                                   uint8_t similarity_kind,
                                   size_t *out_index,
                                   double *out_score,
                                   uint8_t *out_found);

/**
 * Static, NUL-terminated description of a status code.
 */
const char *camelot_status_message(CamelotStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAMELOT_H */
