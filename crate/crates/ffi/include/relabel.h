#ifndef RELABEL_H
#define RELABEL_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum RlStatus {
  RL_STATUS_OK = 0,
  RL_STATUS_NULL_POINTER = 1,
  RL_STATUS_INVALID_ARGUMENT = 2,
  RL_STATUS_IO = 3,
  RL_STATUS_DATA = 4,
  RL_STATUS_CONFIG = 5,
  RL_STATUS_BUDGET = 6,
  RL_STATUS_NUMERIC = 7,
  RL_STATUS_INTERNAL = 8,
  RL_STATUS_PANIC = 9,
} RlStatus;

// Query or document tower of the encoder.
typedef enum RlSide {
  RL_SIDE_QUERY = 0,
  RL_SIDE_DOCUMENT = 1,
} RlSide;

typedef struct RlChunks RlChunks;

typedef struct RlEncoder RlEncoder;

typedef struct RlIndex RlIndex;

typedef struct RlResults RlResults;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *rl_version(void);

// Message for the last failed call on this thread; empty after a success.
// Valid until the next call into the library on this thread.
const char *rl_last_error(void);

// Randomly initialized encoder.
//
// # Safety
// `out` must be a valid pointer.
enum RlStatus rl_encoder_new(size_t feature_dim,
                             size_t dim,
                             bool shared,
                             uint64_t seed,
                             struct RlEncoder **out);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum RlStatus rl_encoder_load(const char *path, struct RlEncoder **out);

// # Safety
// `encoder` must come from this library; `path` must be NUL-terminated.
enum RlStatus rl_encoder_save(const struct RlEncoder *encoder, const char *path);

// Embedding dimension, or 0 for a null handle.
//
// # Safety
// `encoder` must be null or come from this library.
size_t rl_encoder_dim(const struct RlEncoder *encoder);

// Writes the unit embedding of `text` into `out`, which holds `len` values;
// `len` must equal the encoder dimension.
//
// # Safety
// `encoder` must come from this library, `text` must be NUL-terminated and
// `out` must point to `len` writable doubles.
enum RlStatus rl_encoder_encode(const struct RlEncoder *encoder,
                                const char *text,
                                enum RlSide which,
                                double *out,
                                size_t len);

// # Safety
// `encoder` must be null or come from this library and not be used again.
void rl_encoder_free(struct RlEncoder *encoder);

// Cosine similarity of two vectors of length `len`.
//
// # Safety
// `a` and `b` must point to `len` doubles; `out` must be valid.
enum RlStatus rl_similarity(const double *a, const double *b, size_t len, double *out);

// Embeds `n` documents with the document tower and indexes them.
//
// # Safety
// `ids` and `texts` must each point to `n` NUL-terminated strings; `out`
// must be valid.
enum RlStatus rl_index_build(const struct RlEncoder *encoder,
                             const char *const *ids,
                             const char *const *texts,
                             size_t n,
                             struct RlIndex **out);

// # Safety
// `path` must be NUL-terminated and `out` valid.
enum RlStatus rl_index_load(const char *path, struct RlIndex **out);

// # Safety
// `index` must come from this library; `path` must be NUL-terminated.
enum RlStatus rl_index_save(const struct RlIndex *index, const char *path);

// Number of indexed entries, or 0 for a null handle.
//
// # Safety
// `index` must be null or come from this library.
size_t rl_index_len(const struct RlIndex *index);

// Top `k` entries by cosine with `query` (normalized first). Ties go to the
// smaller id.
//
// # Safety
// `query` must point to `len` doubles and `out` must be valid.
enum RlStatus rl_index_search(const struct RlIndex *index,
                              const double *query,
                              size_t len,
                              size_t k,
                              struct RlResults **out);

// # Safety
// `index` must be null or come from this library and not be used again.
void rl_index_free(struct RlIndex *index);

// # Safety
// `results` must be null or come from this library.
size_t rl_results_len(const struct RlResults *results);

// Id of hit `i`, owned by `results`; null when out of range.
//
// # Safety
// `results` must be null or come from this library.
const char *rl_results_id(const struct RlResults *results, size_t i);

// Score of hit `i`; NaN when out of range.
//
// # Safety
// `results` must be null or come from this library.
double rl_results_score(const struct RlResults *results, size_t i);

// # Safety
// `results` must be null or come from this library and not be used again.
void rl_results_free(struct RlResults *results);

// Softmax cross-entropy of the positive at temperature `tau`.
//
// # Safety
// `scores` must point to `n` doubles and `out` must be valid.
enum RlStatus rl_list_loss(const double *scores,
                           size_t n,
                           size_t positive,
                           double tau,
                           double *out);

// Pairwise logistic loss over every pair with a strictly higher label.
// Labels are support values: 1, 0.5 or 0.
//
// # Safety
// `labels` and `scores` must point to `n` doubles and `out` must be valid.
enum RlStatus rl_pair_loss(const double *labels, const double *scores, size_t n, double *out);

// Middle-rank order of `k` passages given by relevance rank: writes the
// 0-based rank placed at each position into `order`, which holds `k`
// values. `j` is the head and tail size.
//
// # Safety
// `order` must point to `k` writable values.
enum RlStatus rl_reorder(size_t k, size_t j, size_t *order);

// Splits `text` into sentence-aligned chunks of at most `max_words` words
// and `max_sentences` sentences.
//
// # Safety
// `text` must be NUL-terminated and `out` valid.
enum RlStatus rl_chunk_document(const char *text,
                                size_t max_words,
                                size_t max_sentences,
                                struct RlChunks **out);

// # Safety
// `chunks` must be null or come from this library.
size_t rl_chunks_len(const struct RlChunks *chunks);

// Byte range of chunk `i` in the original text.
//
// # Safety
// `chunks` must come from this library; `start` and `end` must be valid.
enum RlStatus rl_chunks_span(const struct RlChunks *chunks, size_t i, size_t *start, size_t *end);

// Text of chunk `i`, owned by `chunks`; null when out of range.
//
// # Safety
// `chunks` must be null or come from this library.
const char *rl_chunks_text(const struct RlChunks *chunks, size_t i);

// # Safety
// `chunks` must be null or come from this library and not be used again.
void rl_chunks_free(struct RlChunks *chunks);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELABEL_H */
