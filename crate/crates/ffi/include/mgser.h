#ifndef MGSER_H
#define MGSER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MgserStatus {
  MGSER_STATUS_OK = 0,
  MGSER_STATUS_NULL_POINTER = 1,
  MGSER_STATUS_CONFIG = 2,
  MGSER_STATUS_SHAPE = 3,
  MGSER_STATUS_INPUT = 4,
  MGSER_STATUS_USAGE = 5,
  MGSER_STATUS_FORMAT = 6,
  MGSER_STATUS_IO = 7,
  MGSER_STATUS_INVALID_STRING = 8,
  MGSER_STATUS_PANIC = 9,
} MgserStatus;

/**
 * Opaque replay buffer handle; owns the generator used for its offers and draws.
 */
typedef struct MgserBuffer MgserBuffer;

/**
 * Opaque model handle.
 */
typedef struct MgserModel MgserModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *mgser_last_error(void);

/**
 * Builds an MLP with Glorot-uniform weights and zero biases.
 *
 * # Safety
 * `dims` must point to `n_dims` values and `out` must be writable.
 */
enum MgserStatus mgser_model_new(const size_t *dims,
                                 size_t n_dims,
                                 uint64_t seed,
                                 struct MgserModel **out);

/**
 * # Safety
 * `model` must come from [`mgser_model_new`] and not be used afterwards.
 */
void mgser_model_free(struct MgserModel *model);

/**
 * Parameter count, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t mgser_model_param_count(const struct MgserModel *model);

/**
 * Copies the flattened parameters (per layer: weights row-major, then
 * biases) into `out`, which must hold exactly `param_count` values.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum MgserStatus mgser_model_get_params(const struct MgserModel *model, double *out, size_t len);

/**
 * # Safety
 * `params` must point to `len` doubles.
 */
enum MgserStatus mgser_model_set_params(struct MgserModel *model, const double *params, size_t len);

/**
 * Logits for `rows` inputs of width `cols`; `out` holds `rows * class_count`.
 *
 * # Safety
 * `inputs` must point to `rows * cols` doubles, `out` to `out_len`.
 */
enum MgserStatus mgser_model_forward(const struct MgserModel *model,
                                     const double *inputs,
                                     size_t rows,
                                     size_t cols,
                                     double *out,
                                     size_t out_len);

/**
 * One training step of `method` on a batch of `rows` examples.
 * `buffer` may be null for `online` and `joint`. `backward_passes` may be
 * null.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `inputs` holds
 * `rows * input_dim` doubles and `labels` holds `rows` values.
 */
enum MgserStatus mgser_model_step(struct MgserModel *model,
                                  struct MgserBuffer *buffer,
                                  const char *method,
                                  double lr,
                                  double rho,
                                  size_t batch_size,
                                  const double *inputs,
                                  const size_t *labels,
                                  size_t rows,
                                  size_t task_id,
                                  uint32_t *backward_passes);

/**
 * Empty reservoir buffer; `seed` drives its offers and draws.
 *
 * # Safety
 * `out` must be writable.
 */
enum MgserStatus mgser_buffer_new(size_t capacity,
                                  size_t feature_dim,
                                  size_t class_count,
                                  uint64_t seed,
                                  struct MgserBuffer **out);

/**
 * # Safety
 * `buffer` must come from [`mgser_buffer_new`] or [`mgser_buffer_load`] and
 * not be used afterwards.
 */
void mgser_buffer_free(struct MgserBuffer *buffer);

/**
 * Reservoir offer. `accepted` may be null.
 *
 * # Safety
 * `x` must hold `x_len` doubles and `z` must hold `z_len`.
 */
enum MgserStatus mgser_buffer_offer(struct MgserBuffer *buffer,
                                    const double *x,
                                    size_t x_len,
                                    size_t label,
                                    const double *z,
                                    size_t z_len,
                                    size_t task_id,
                                    bool *accepted);

/**
 * Resident item count, or 0 for a null handle.
 *
 * # Safety
 * `buffer` must be null or a live handle.
 */
size_t mgser_buffer_len(const struct MgserBuffer *buffer);

/**
 * Items offered so far, or 0 for a null handle.
 *
 * # Safety
 * `buffer` must be null or a live handle.
 */
uint64_t mgser_buffer_stream_count(const struct MgserBuffer *buffer);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string.
 */
enum MgserStatus mgser_buffer_save(const struct MgserBuffer *buffer, const char *path);

/**
 * Loads a snapshot written by [`mgser_buffer_save`]; `seed` drives later
 * offers and draws.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` writable.
 */
enum MgserStatus mgser_buffer_load(const char *path, uint64_t seed, struct MgserBuffer **out);

/**
 * `out = rho * grad / max(|grad|, epsilon)`.
 *
 * # Safety
 * `grad` and `out` must each hold `len` doubles.
 */
enum MgserStatus mgser_sam_perturbation(const double *grad,
                                        size_t len,
                                        double rho,
                                        double epsilon,
                                        double *out);

/**
 * ACC and signed Forget of a `tasks x tasks` result matrix. `forget` is
 * set to NaN for a single task. Either output may be null.
 *
 * # Safety
 * `matrix` must hold `tasks * tasks` doubles.
 */
enum MgserStatus mgser_metrics(const double *matrix, size_t tasks, double *acc, double *forget);

/**
 * Runs an experiment described by JSON (fields of the harness
 * configuration; missing fields take their defaults) and writes the report
 * files into `out_dir`. Mean ACC and mean signed Forget (NaN for one task)
 * are returned through the optional output pointers.
 *
 * # Safety
 * `config_json` and `out_dir` must be NUL-terminated UTF-8 strings.
 */
enum MgserStatus mgser_run_experiment(const char *config_json,
                                      const char *out_dir,
                                      double *acc_mean,
                                      double *forget_mean);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MGSER_H */
