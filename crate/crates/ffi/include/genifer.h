#ifndef GENIFER_H
#define GENIFER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GeniferStatus {
  GENIFER_STATUS_OK = 0,
  GENIFER_STATUS_NULL_POINTER = 1,
  GENIFER_STATUS_CONFIG = 2,
  GENIFER_STATUS_SHAPE = 3,
  GENIFER_STATUS_RANGE = 4,
  GENIFER_STATUS_NUMERIC = 5,
  GENIFER_STATUS_CONTRACT = 6,
  GENIFER_STATUS_STATE = 7,
  GENIFER_STATUS_IO = 8,
  GENIFER_STATUS_FORMAT = 9,
  GENIFER_STATUS_INVALID_UTF8 = 10,
  GENIFER_STATUS_BUFFER_TOO_SMALL = 11,
  GENIFER_STATUS_PANIC = 12,
} GeniferStatus;

// Adaptive distillation-coefficient controller.
typedef struct GeniferCoef GeniferCoef;

// A run record read from a `run.json` file.
typedef struct GeniferRunRecord GeniferRunRecord;

// Task partition of a class set.
typedef struct GeniferTasks GeniferTasks;

// Configuration of the coefficient controller, mirrored for C.
typedef struct GeniferCoefConfig {
  bool enabled;
  double rho_target;
  size_t interval;
  double scale;
  double lambda_init;
  double lambda_max;
} GeniferCoefConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call on the same thread.
const char *genifer_last_error(void);

// Library version as a static NUL-terminated string.
const char *genifer_version(void);

// Fills `config` with the defaults.
//
// # Safety
// `config` must be null or valid for writes.
enum GeniferStatus genifer_coef_config_default(struct GeniferCoefConfig *config);

// # Safety
// `out_handle` must be null or valid for writes.
enum GeniferStatus genifer_coef_new(struct GeniferCoefConfig config,
                                    struct GeniferCoef **out_handle);

// # Safety
// `handle` must be null or a pointer from `genifer_coef_new` not yet freed.
void genifer_coef_free(struct GeniferCoef *handle);

// Records one batch and applies an update when the interval completes.
// `updated` (optional) receives whether an update step ran.
//
// # Safety
// `handle` must be a live handle; `updated` null or valid for writes.
enum GeniferStatus genifer_coef_record_batch(struct GeniferCoef *handle,
                                             double loss_curr,
                                             double loss_od,
                                             bool *updated);

// # Safety
// `handle` must be a live handle; `lambda` valid for writes.
enum GeniferStatus genifer_coef_lambda(const struct GeniferCoef *handle, double *lambda);

// Clears the ratio window and batch counter, keeping the coefficient.
//
// # Safety
// `handle` must be a live handle.
enum GeniferStatus genifer_coef_start_task(struct GeniferCoef *handle);

// # Safety
// `out_handle` must be null or valid for writes.
enum GeniferStatus genifer_tasks_new(size_t class_count,
                                     size_t first_task_size,
                                     size_t classes_per_task,
                                     uint64_t seed,
                                     struct GeniferTasks **out_handle);

// # Safety
// `handle` must be null or a pointer from `genifer_tasks_new` not yet freed.
void genifer_tasks_free(struct GeniferTasks *handle);

// # Safety
// `handle` must be a live handle; `count` valid for writes.
enum GeniferStatus genifer_tasks_count(const struct GeniferTasks *handle, size_t *count);

// Copies the classes of 1-based task `task` into `buf`. `len` receives the
// class count; with a null `buf` only the count is written.
//
// # Safety
// `handle` must be a live handle; `buf` null or valid for `cap` writes;
// `len` valid for writes.
enum GeniferStatus genifer_tasks_classes(const struct GeniferTasks *handle,
                                         size_t task,
                                         size_t *buf,
                                         size_t cap,
                                         size_t *len);

// Output-distillation loss between row-major `old_logits` (`batch × k`)
// and `new_logits` (`batch × (k + l)`).
//
// # Safety
// The logit pointers must be valid for the given sizes; `loss` valid for writes.
enum GeniferStatus genifer_output_distillation_loss(const double *old_logits,
                                                    const double *new_logits,
                                                    size_t batch,
                                                    size_t k,
                                                    size_t l,
                                                    double *loss);

// Mean cross-entropy of row-major `logits` (`batch × k`) against logit
// indices `labels`.
//
// # Safety
// `logits` valid for `batch × k` reads, `labels` for `batch` reads; `loss`
// valid for writes.
enum GeniferStatus genifer_current_task_loss(const double *logits,
                                             const size_t *labels,
                                             size_t batch,
                                             size_t k,
                                             double *loss);

// Row-wise softmax of `logits` (`batch × k`) into `probs`.
//
// # Safety
// `logits` valid for `batch × k` reads, `probs` for as many writes.
enum GeniferStatus genifer_softmax(const double *logits, size_t batch, size_t k, double *probs);

// Mean of `trace[1..]`, the overall accuracies after tasks 2..T.
//
// # Safety
// `trace` valid for `len` reads; `alpha` valid for writes.
enum GeniferStatus genifer_average_incremental_accuracy(const double *trace,
                                                        size_t len,
                                                        double *alpha);

// # Safety
// `path` must be a NUL-terminated string; `out_handle` valid for writes.
enum GeniferStatus genifer_run_record_load(const char *path, struct GeniferRunRecord **out_handle);

// # Safety
// `handle` must be null or a pointer from `genifer_run_record_load` not yet freed.
void genifer_run_record_free(struct GeniferRunRecord *handle);

// Number of completed tasks in the record.
//
// # Safety
// `handle` must be a live handle; `count` valid for writes.
enum GeniferStatus genifer_run_record_task_count(const struct GeniferRunRecord *handle,
                                                 size_t *count);

// Overall accuracy after 1-based task `task`.
//
// # Safety
// `handle` must be a live handle; `alpha` valid for writes.
enum GeniferStatus genifer_run_record_alpha_t(const struct GeniferRunRecord *handle,
                                              size_t task,
                                              double *alpha);

// Average incremental accuracy of a finished run.
//
// # Safety
// `handle` must be a live handle; `alpha` valid for writes.
enum GeniferStatus genifer_run_record_alpha_all(const struct GeniferRunRecord *handle,
                                                double *alpha);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GENIFER_H */
