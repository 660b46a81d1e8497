#ifndef GSNOP_H
#define GSNOP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes.
 */
typedef enum GsnopStatus {
  GSNOP_STATUS_OK = 0,
  GSNOP_STATUS_NULL_POINTER = 1,
  GSNOP_STATUS_INVALID_ARGUMENT = 2,
  GSNOP_STATUS_IO = 3,
  GSNOP_STATUS_DATA = 4,
  GSNOP_STATUS_CONFIG = 5,
  GSNOP_STATUS_NUMERICAL = 6,
  GSNOP_STATUS_PANIC = 7,
} GsnopStatus;

/*
 Trained model together with the evaluation settings of its config.
 */
typedef struct GsnopModel GsnopModel;

/*
 Event log with its temporal adjacency index.
 */
typedef struct GsnopStore GsnopStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the calling thread's last error message into `buf` (NUL
 terminated, truncated to `len`) and returns the full message length, or 0
 when the last call succeeded.

 # Safety
 `buf` must be null or point to `len` writable bytes.
 */
size_t gsnop_last_error(char *buf, size_t len);

/*
 Library version as a static NUL-terminated string.
 */
const char *gsnop_version(void);

/*
 Reads a `src,dst,t[,features...]` CSV file. Files without feature columns
 get `fallback_edge_dim` seeded random features.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum GsnopStatus gsnop_store_from_csv(const char *path,
                                      size_t fallback_edge_dim,
                                      uint64_t feature_seed,
                                      struct GsnopStore **out);

/*
 Generates a community-structured synthetic stream with unit-rate arrivals.

 # Safety
 `out` must be writable.
 */
enum GsnopStatus gsnop_store_synthetic(size_t nodes,
                                       size_t communities,
                                       size_t events,
                                       size_t edge_dim,
                                       uint64_t seed,
                                       struct GsnopStore **out);

/*
 # Safety
 `store` must be null or a pointer returned by this library, not yet freed.
 */
void gsnop_store_free(struct GsnopStore *store);

/*
 # Safety
 `store` must be a live store handle; `out` must be writable.
 */
enum GsnopStatus gsnop_store_counts(const struct GsnopStore *store,
                                    size_t *events,
                                    size_t *nodes,
                                    size_t *edge_dim);

/*
 Interactions per node per unit time.

 # Safety
 `store` must be a live store handle; `out` must be writable.
 */
enum GsnopStatus gsnop_store_density(const struct GsnopStore *store, double *out);

/*
 Loads a checkpoint written by `gsnop train` together with the config file
 that produced it (`config.resolved`).

 # Safety
 Paths must be NUL-terminated strings; `out` must be writable.
 */
enum GsnopStatus gsnop_model_load(const char *config_path,
                                  const char *checkpoint_path,
                                  struct GsnopModel **out);

/*
 # Safety
 `model` must be null or a pointer returned by this library, not yet freed.
 */
void gsnop_model_free(struct GsnopModel *model);

/*
 Link probabilities for `n` candidate links `(src[i], dst[i], t[i])`.
 The latent context is the most recent stored interactions strictly before
 the earliest candidate; node states use the store strictly before each
 candidate's time. One latent draw seeded by `seed`.

 # Safety
 `src`, `dst` and `t` must hold `n` values and `out` must have room for `n`.
 */
enum GsnopStatus gsnop_model_predict(const struct GsnopModel *model,
                                     const struct GsnopStore *store,
                                     const uint32_t *src,
                                     const uint32_t *dst,
                                     const double *t,
                                     size_t n,
                                     uint64_t seed,
                                     double *out);

/*
 Average precision of `n` scored items.

 # Safety
 `labels` and `scores` must hold `n` values; `out` must be writable.
 */
enum GsnopStatus gsnop_average_precision(const uint8_t *labels,
                                         const double *scores,
                                         size_t n,
                                         double *out);

/*
 Mean reciprocal rank of `queries` positives, each against
 `negatives_per_query` scores laid out row by row in `negative_scores`.

 # Safety
 `positive_scores` must hold `queries` values, `negative_scores`
 `queries * negatives_per_query`; `out` must be writable.
 */
enum GsnopStatus gsnop_mrr(const double *positive_scores,
                           const double *negative_scores,
                           size_t queries,
                           size_t negatives_per_query,
                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GSNOP_H */
