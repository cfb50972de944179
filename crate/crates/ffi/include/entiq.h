/* C interface for the entiq retrieval and evaluation library. */

#ifndef ENTIQ_H
#define ENTIQ_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every fallible function in this library.
typedef enum EntiqStatus {
  // The call succeeded and all `out` parameters are populated.
  EntiqStatus_Ok = 0,
  // A required pointer argument was NULL.
  EntiqStatus_NullPointer = 1,
  // A string argument was not valid UTF-8.
  EntiqStatus_InvalidUtf8 = 2,
  // An argument was structurally invalid (zero k, dimension mismatch,
  // ragged matrix, empty input, ...).
  EntiqStatus_InvalidArgument = 3,
  // The operation failed reading or writing a file.
  EntiqStatus_IoError = 4,
  // A persisted artifact failed validation (bad magic, truncation).
  EntiqStatus_CorruptData = 5,
  // The input is a degenerate case the statistic is undefined for
  // (all-tied ranking, expected agreement of one).
  EntiqStatus_DegenerateInput = 6,
  // A panic was caught at the boundary; out parameters are untouched.
  EntiqStatus_Panic = 7,
} EntiqStatus;

// Opaque handle to a loaded embedding index.
typedef struct EntiqIndex EntiqIndex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads an embedding index from `path` and writes a new handle to
// `out_index`.
//
// # Safety
// `path` must be a NUL-terminated string and `out_index` a valid,
// writable pointer. The returned handle must be released with
// [`entiq_index_free`].
enum EntiqStatus entiq_index_load(const char *path, struct EntiqIndex **out_index);

// Returns the number of entries in the index, or 0 for a NULL handle.
//
// # Safety
// `index` must be NULL or a live handle from [`entiq_index_load`].
uint64_t entiq_index_len(const struct EntiqIndex *index);

// Returns the vector dimension of the index, or 0 for a NULL handle.
//
// # Safety
// `index` must be NULL or a live handle from [`entiq_index_load`].
uint64_t entiq_index_dim(const struct EntiqIndex *index);

// Runs a k-nearest-neighbour query and writes the retrieval set to
// `out_json` as a JSON document (`{"hits": [...]}` with entries ordered
// by descending cosine score, ties broken by ascending entry id).
//
// # Safety
// `index` must be a live handle, `query` must point to `query_len`
// floats, and `out_json` must be valid and writable. The returned string
// must be released with [`entiq_string_free`].
enum EntiqStatus entiq_index_knn_json(const struct EntiqIndex *index,
                                      const float *query,
                                      size_t query_len,
                                      size_t k,
                                      char **out_json);

// Releases a handle returned by [`entiq_index_load`]. NULL is a no-op.
//
// # Safety
// `index` must be NULL or a handle not yet freed; it must not be used
// afterwards.
void entiq_index_free(struct EntiqIndex *index);

// Releases a string returned by this library. NULL is a no-op.
//
// # Safety
// `s` must be NULL or a string returned by an `entiq_*` function that
// has not yet been freed.
void entiq_string_free(char *s);

// ROUGE-L F1 between a candidate and a reference string.
//
// # Safety
// `candidate` and `reference` must be NUL-terminated strings; `out` must
// be valid and writable.
enum EntiqStatus entiq_rouge_l_f1(const char *candidate, const char *reference, double *out);

// BLEU with up to `max_n`-gram precision against one or more references.
//
// # Safety
// `candidate` must be a NUL-terminated string, `references` must point
// to `n_references` such strings, and `out` must be valid and writable.
enum EntiqStatus entiq_bleu(const char *candidate,
                            const char *const *references,
                            size_t n_references,
                            size_t max_n,
                            double *out);

// Simplified METEOR (harmonic mean weighted toward recall) between a
// candidate and a reference string.
//
// # Safety
// `candidate` and `reference` must be NUL-terminated strings; `out` must
// be valid and writable.
enum EntiqStatus entiq_meteor(const char *candidate, const char *reference, double *out);

// Bag-of-tokens F1 overlap between a prediction and a gold answer.
//
// # Safety
// `prediction` and `gold` must be NUL-terminated strings; `out` must be
// valid and writable.
enum EntiqStatus entiq_token_f1(const char *prediction, const char *gold, double *out);

// Kendall tau-b with a two-sided p-value over two rankings aligned by
// position. Returns [`EntiqStatus::DegenerateInput`] when either ranking
// is entirely tied.
//
// # Safety
// `a` and `b` must point to `len` values each; `out_tau` and
// `out_p_value` must be valid and writable.
enum EntiqStatus entiq_kendall_tau_b(const int64_t *a,
                                     const int64_t *b,
                                     size_t len,
                                     double *out_tau,
                                     double *out_p_value);

// Fleiss' kappa over a row-major items-by-categories count matrix where
// every row sums to the same rater count. Returns
// [`EntiqStatus::DegenerateInput`] when expected agreement is exactly
// one (kappa undefined).
//
// # Safety
// `counts` must point to `n_items * n_categories` values; `out` must be
// valid and writable.
enum EntiqStatus entiq_fleiss_kappa(const uint64_t *counts,
                                    size_t n_items,
                                    size_t n_categories,
                                    double *out);

// Judges a prediction: correct iff it names the entity (or an alias) as
// a contiguous token phrase and its token F1 against the gold answer
// meets `f1_threshold`. Writes the verdict to `out_correct`.
//
// # Safety
// String arguments must be NUL-terminated; `aliases` must point to
// `n_aliases` strings (or be NULL when `n_aliases` is 0); `out_correct`
// must be valid and writable.
enum EntiqStatus entiq_judge_answer(const char *prediction,
                                    const char *gold_answer,
                                    const char *entity_name,
                                    const char *const *aliases,
                                    size_t n_aliases,
                                    double f1_threshold,
                                    bool *out_correct);

// Checks that a question does not leak its entity. Writes `true` to
// `out_pass` when clean; on a leak writes `false` and, when `out_span`
// is non-NULL, the normalized leaking phrase (caller frees it with
// [`entiq_string_free`]).
//
// # Safety
// String arguments must be NUL-terminated; `aliases` must point to
// `n_aliases` strings (or be NULL when `n_aliases` is 0); `out_pass`
// must be valid and writable; `out_span` may be NULL.
enum EntiqStatus entiq_check_anonymity(const char *question,
                                       const char *entity_name,
                                       const char *const *aliases,
                                       size_t n_aliases,
                                       bool *out_pass,
                                       char **out_span);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENTIQ_H */
