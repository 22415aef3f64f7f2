#ifndef SEMHASH_H
#define SEMHASH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum SemhashStatus {
  SEMHASH_STATUS_OK = 0,
  SEMHASH_STATUS_NULL_POINTER = 1,
  SEMHASH_STATUS_INVALID_ARGUMENT = 2,
  SEMHASH_STATUS_IO = 3,
  SEMHASH_STATUS_FORMAT = 4,
  SEMHASH_STATUS_DIMENSION_MISMATCH = 5,
  SEMHASH_STATUS_PANIC = 6,
} SemhashStatus;

/**
 * A trained hashing head.
 */
typedef struct SemhashHead SemhashHead;

/**
 * An immutable packed codebook; safe to query from several threads.
 */
typedef struct SemhashIndex SemhashIndex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *semhash_last_error(void);

/**
 * Number of `uint64_t` words holding one `bits`-bit code.
 */
size_t semhash_code_words(size_t bits);

/**
 * Thresholds `k` relaxed values at 0.5 (inclusive) into packed words.
 *
 * # Safety
 * `relaxed` must point to `k` doubles and `out_words` to `n_words`
 * writable words.
 */
enum SemhashStatus semhash_binarize(const double *relaxed,
                                    size_t k,
                                    uint64_t *out_words,
                                    size_t n_words);

/**
 * Loads a parameter file written by `semhash train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SemhashStatus semhash_head_load(const char *path, struct SemhashHead **out);

/**
 * # Safety
 * `head` must come from [`semhash_head_load`] and not be used afterwards.
 * NULL is ignored.
 */
void semhash_head_free(struct SemhashHead *head);

/**
 * Code length `k`; 0 for NULL.
 *
 * # Safety
 * `head` must be NULL or a live handle.
 */
size_t semhash_head_bits(const struct SemhashHead *head);

/**
 * Input dimension `d`; 0 for NULL.
 *
 * # Safety
 * `head` must be NULL or a live handle.
 */
size_t semhash_head_dim(const struct SemhashHead *head);

/**
 * Encodes `n` row-major feature rows of dimension `d` into packed codes,
 * `semhash_code_words(k)` words per row.
 *
 * # Safety
 * `head` must be a live handle, `features` must point to `n * d` floats
 * and `out_words` to `out_len` writable words.
 */
enum SemhashStatus semhash_head_encode(const struct SemhashHead *head,
                                       const float *features,
                                       size_t n,
                                       size_t d,
                                       uint64_t *out_words,
                                       size_t out_len);

/**
 * Loads a codebook file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SemhashStatus semhash_index_load(const char *path, struct SemhashIndex **out);

/**
 * Builds an index from `n` packed codes of `bits` bits. `ids` may be NULL,
 * in which case ids are `0..n`.
 *
 * # Safety
 * `words` must point to `n * semhash_code_words(bits)` words, `ids` to
 * `n` ids when non-NULL; `out` must be writable.
 */
enum SemhashStatus semhash_index_from_codes(size_t bits,
                                            const uint64_t *words,
                                            size_t n,
                                            const uint64_t *ids,
                                            struct SemhashIndex **out);

/**
 * # Safety
 * `index` must come from this library and not be used afterwards. NULL
 * is ignored.
 */
void semhash_index_free(struct SemhashIndex *index);

/**
 * Number of stored codes; 0 for NULL.
 *
 * # Safety
 * `index` must be NULL or a live handle.
 */
size_t semhash_index_len(const struct SemhashIndex *index);

/**
 * Code length `k`; 0 for NULL.
 *
 * # Safety
 * `index` must be NULL or a live handle.
 */
size_t semhash_index_bits(const struct SemhashIndex *index);

/**
 * Exact top-`top_k` Hamming search. Writes up to `top_k` results ordered
 * by distance then id and stores their count in `out_count`.
 *
 * # Safety
 * `index` must be a live handle, `query_words` must point to `n_words`
 * words, `out_ids` and `out_distances` to `top_k` writable elements each,
 * and `out_count` must be writable.
 */
enum SemhashStatus semhash_index_query(const struct SemhashIndex *index,
                                       const uint64_t *query_words,
                                       size_t n_words,
                                       size_t top_k,
                                       uint64_t *out_ids,
                                       uint32_t *out_distances,
                                       size_t *out_count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMHASH_H */
