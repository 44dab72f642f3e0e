#ifndef ALBERT_LAB_H
#define ALBERT_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AlbertStatus {
  ALBERT_STATUS_OK = 0,
  ALBERT_STATUS_NULL_POINTER = 1,
  ALBERT_STATUS_INVALID_UTF8 = 2,
  ALBERT_STATUS_INVALID_CONFIG = 3,
  ALBERT_STATUS_IO = 4,
  ALBERT_STATUS_CHECKPOINT = 5,
  ALBERT_STATUS_INVALID_INPUT = 6,
  ALBERT_STATUS_BUFFER_TOO_SMALL = 7,
  ALBERT_STATUS_INTERNAL = 8,
} AlbertStatus;

/**
 * Opaque model handle.
 */
typedef struct AlbertModel AlbertModel;

/**
 * Per-tensor-group parameter totals.
 */
typedef struct AlbertParameterCount {
  uint64_t embeddings;
  uint64_t encoder;
  uint64_t heads;
  uint64_t total;
} AlbertParameterCount;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`) and returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t albert_last_error_message(char *buf, size_t len);

/**
 * Closed-form parameter count of a model config given as JSON.
 *
 * # Safety
 * `config_json` must be a valid NUL-terminated string and `out` writable.
 */
enum AlbertStatus albert_count_parameters(const char *config_json,
                                          struct AlbertParameterCount *out);

/**
 * Freshly initialized model. Free with [`albert_model_free`].
 *
 * # Safety
 * `config_json` must be a valid NUL-terminated string and `out` writable.
 */
enum AlbertStatus albert_model_new(const char *config_json,
                                   uint64_t seed,
                                   struct AlbertModel **out);

/**
 * Loads a checkpoint and its config sidecar.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` writable.
 */
enum AlbertStatus albert_model_load(const char *path, struct AlbertModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum AlbertStatus albert_model_save(const struct AlbertModel *model, const char *path);

/**
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void albert_model_free(struct AlbertModel *model);

/**
 * Number of scalars actually allocated by the model.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum AlbertStatus albert_model_num_parameters(const struct AlbertModel *model, uint64_t *out);

/**
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum AlbertStatus albert_model_num_layers(const struct AlbertModel *model, uint32_t *out);

/**
 * Layer input/output trace over a `batch x seq_len` block of token ids
 * (no padding). Writes one mean L2 distance and one mean angle in degrees
 * per layer; `capacity` must be at least the number of layers.
 *
 * # Safety
 * `token_ids` and `segment_ids` must hold `batch * seq_len` elements and
 * `l2_out`, `degrees_out` must each hold `capacity` doubles.
 */
enum AlbertStatus albert_model_probe(const struct AlbertModel *model,
                                     const uint32_t *token_ids,
                                     const uint8_t *segment_ids,
                                     size_t batch,
                                     size_t seq_len,
                                     double *l2_out,
                                     double *degrees_out,
                                     size_t capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ALBERT_LAB_H */
