#ifndef BERRYSTACK_H
#define BERRYSTACK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call. Values are stable across releases.
 */
typedef enum BsStatus {
  BS_STATUS_OK = 0,
  BS_STATUS_ARGUMENT = 1,
  BS_STATUS_CONFIG = 2,
  BS_STATUS_MISSING_FILE = 3,
  BS_STATUS_STATE = 4,
  BS_STATUS_DIMENSION = 5,
  BS_STATUS_FORMAT = 6,
  BS_STATUS_DEGENERATE = 7,
  BS_STATUS_IO = 8,
  BS_STATUS_NUMERIC = 9,
  BS_STATUS_TRAINING = 10,
  BS_STATUS_NULL_POINTER = 11,
  BS_STATUS_PANIC = 12,
} BsStatus;

/**
 * A trained stacked ensemble.
 */
typedef struct BsEnsemble BsEnsemble;

/**
 * A trained single model.
 */
typedef struct BsModel BsModel;

/**
 * Weighted metrics of a binary confusion matrix (unripe is positive).
 */
typedef struct BsMetrics {
  double accuracy;
  double weighted_precision;
  double weighted_recall;
  double weighted_f1;
  double ripe_precision;
  double ripe_recall;
  double ripe_f1;
  double unripe_precision;
  double unripe_recall;
  double unripe_f1;
} BsMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *bs_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *bs_last_error_message(void);

/**
 * Maps a confidence in [0, 1] to a label: 0 ripe, 1 unripe.
 *
 * # Safety
 * `out_label` must be NULL or point to writable memory.
 */
enum BsStatus bs_classify(double confidence, uint8_t *out_label);

/**
 * # Safety
 * `out` must be NULL or point to a writable `BsMetrics`.
 */
enum BsStatus bs_weighted_metrics(size_t tp,
                                  size_t fp,
                                  size_t tn,
                                  size_t fn_,
                                  struct BsMetrics *out);

/**
 * Trapezoidal ROC AUC; `labels` holds 0 (ripe) or 1 (unripe).
 *
 * # Safety
 * `confidences` and `labels` must each hold `n` readable elements.
 */
enum BsStatus bs_roc_auc(const double *confidences,
                         const uint8_t *labels,
                         size_t n,
                         double *out_auc);

/**
 * Loads `<stem>.bstk` and `<stem>.toml`.
 *
 * # Safety
 * `stem` must be a NUL-terminated string; `out` must be writable.
 */
enum BsStatus bs_model_load(const char *stem, struct BsModel **out);

/**
 * # Safety
 * `model` must come from `bs_model_load` and not be used afterwards.
 */
void bs_model_free(struct BsModel *model);

/**
 * Width of the concatenated `[700 nm | 770 nm]` feature row the model
 * expects, or 0 for NULL.
 *
 * # Safety
 * `model` must be a live handle or NULL.
 */
size_t bs_model_feature_dim(const struct BsModel *model);

/**
 * Confidence that a berry is unripe, from two single-band images of
 * `width * height` values in [0, 1] (row-major).
 *
 * # Safety
 * Both bands must hold `width * height` readable values.
 */
enum BsStatus bs_model_predict_bands(const struct BsModel *model,
                                     const double *band700,
                                     const double *band770,
                                     size_t width,
                                     size_t height,
                                     bool equalize_770,
                                     double *out_confidence);

/**
 * Confidence from an already extracted feature vector.
 *
 * # Safety
 * `features` must hold `len` readable values.
 */
enum BsStatus bs_model_predict_features(const struct BsModel *model,
                                        const double *features,
                                        size_t len,
                                        double *out_confidence);

/**
 * Loads an ensemble directory written by `train-ensemble`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum BsStatus bs_ensemble_load(const char *dir, struct BsEnsemble **out);

/**
 * # Safety
 * `ensemble` must come from `bs_ensemble_load` and not be used afterwards.
 */
void bs_ensemble_free(struct BsEnsemble *ensemble);

/**
 * Number of base learners, or 0 for NULL.
 *
 * # Safety
 * `ensemble` must be a live handle or NULL.
 */
size_t bs_ensemble_learner_count(const struct BsEnsemble *ensemble);

/**
 * Width of the concatenated feature row, or 0 for NULL.
 *
 * # Safety
 * `ensemble` must be a live handle or NULL.
 */
size_t bs_ensemble_feature_dim(const struct BsEnsemble *ensemble);

/**
 * # Safety
 * Both bands must hold `width * height` readable values.
 */
enum BsStatus bs_ensemble_predict_bands(const struct BsEnsemble *ensemble,
                                        const double *band700,
                                        const double *band770,
                                        size_t width,
                                        size_t height,
                                        bool equalize_770,
                                        double *out_confidence);

/**
 * # Safety
 * `features` must hold `len` readable values.
 */
enum BsStatus bs_ensemble_predict_features(const struct BsEnsemble *ensemble,
                                           const double *features,
                                           size_t len,
                                           double *out_confidence);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BERRYSTACK_H */
