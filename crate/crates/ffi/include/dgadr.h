#ifndef DGADR_H
#define DGADR_H

/* Generated by cbindgen from dgadr-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code of every fallible call.
 */
typedef enum DgStatus {
  DG_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  DG_STATUS_NULL_POINTER = 1,
  /**
   * An argument violated a documented contract.
   */
  DG_STATUS_INVALID_ARGUMENT = 2,
  /**
   * File could not be read or written.
   */
  DG_STATUS_IO = 3,
  /**
   * File contents failed to parse.
   */
  DG_STATUS_PARSE = 4,
  /**
   * A computation produced non-finite values or failed numerically.
   */
  DG_STATUS_NUMERIC = 5,
  /**
   * An internal panic was caught; memory stays safe.
   */
  DG_STATUS_INTERNAL = 6,
} DgStatus;

/**
 * Hidden-layer activation selector.
 */
typedef enum DgActivation {
  DG_ACTIVATION_TANH = 0,
  DG_ACTIVATION_RELU = 1,
} DgActivation;

/**
 * Class-weighting mode of the classification loss.
 */
typedef enum DgWeightsMode {
  DG_WEIGHTS_UNIFORM = 0,
  DG_WEIGHTS_WEIGHTED_CE = 1,
} DgWeightsMode;

/**
 * Opaque dataset handle.
 */
typedef struct DgDataset DgDataset;

/**
 * Opaque model handle.
 */
typedef struct DgModel DgModel;

/**
 * Synthetic-data generation parameters (mirrors the `gen` config file).
 */
typedef struct DgSynthConfig {
  uint64_t num_domains;
  uint64_t num_classes;
  uint64_t feature_dim;
  uint64_t samples_per_domain;
  double class_skew;
  double domain_shift_scale;
  uint64_t intra_domain_subclusters;
  double noise_std;
  uint64_t seed;
} DgSynthConfig;

/**
 * Training hyperparameters (mirrors the training config file); the seed is
 * passed per call to [`dg_train`].
 */
typedef struct DgTrainOptions {
  /**
   * Hidden layer widths, input side first.
   */
  const uint64_t *hidden_dims;
  size_t hidden_dims_len;
  enum DgActivation activation;
  double margin;
  uint64_t hard_count;
  double alpha;
  double gamma;
  enum DgWeightsMode weights_mode;
  uint64_t batch_size;
  uint64_t epochs;
  double lr;
  double jitter_phi;
  double jitter_aux;
  uint64_t eval_every;
} DgTrainOptions;

/**
 * Evaluation summary returned by value.
 */
typedef struct DgMetrics {
  double accuracy;
  double macro_f1;
  double ovr_auc;
} DgMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dg_version(void);

/**
 * Message of the most recent error on this thread; valid until the next
 * failing call on the same thread. Never null.
 */
const char *dg_last_error_message(void);

/**
 * Generates a synthetic multi-domain dataset.
 *
 * # Safety
 * `config` and `out` must be valid pointers; on success `*out` owns a
 * dataset that must be released with [`dg_dataset_free`].
 */
enum DgStatus dg_dataset_generate(const struct DgSynthConfig *config, struct DgDataset **out);

/**
 * Loads a dataset CSV (schema `f0,...,f{d-1},label,domain`).
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer;
 * on success `*out` must be released with [`dg_dataset_free`].
 */
enum DgStatus dg_dataset_load(const char *path, struct DgDataset **out);

/**
 * Writes a dataset in the CSV schema.
 *
 * # Safety
 * `dataset` must be a live handle and `path` a valid string.
 */
enum DgStatus dg_dataset_save(const struct DgDataset *dataset, const char *path);

/**
 * Releases a dataset handle; a null handle is a no-op.
 *
 * # Safety
 * `dataset` must have come from this library and not be freed twice.
 */
void dg_dataset_free(struct DgDataset *dataset);

/**
 * Number of samples.
 *
 * # Safety
 * `dataset` must be a live handle; `out` a valid pointer.
 */
enum DgStatus dg_dataset_num_samples(const struct DgDataset *dataset, uint64_t *out);

/**
 * Declared class count.
 *
 * # Safety
 * See [`dg_dataset_num_samples`].
 */
enum DgStatus dg_dataset_num_classes(const struct DgDataset *dataset, uint64_t *out);

/**
 * Declared domain count.
 *
 * # Safety
 * See [`dg_dataset_num_samples`].
 */
enum DgStatus dg_dataset_num_domains(const struct DgDataset *dataset, uint64_t *out);

/**
 * Feature dimension.
 *
 * # Safety
 * See [`dg_dataset_num_samples`].
 */
enum DgStatus dg_dataset_feature_dim(const struct DgDataset *dataset, uint64_t *out);

/**
 * Splits a dataset into leave-one-domain-out (source, target) halves; the
 * source's domain ids are renumbered densely and the target becomes
 * single-domain.
 *
 * # Safety
 * `dataset` must be a live handle; `out_source` and `out_target` valid
 * pointers receiving new handles on success.
 */
enum DgStatus dg_dataset_split_loto(const struct DgDataset *dataset,
                                    uint64_t target_domain,
                                    struct DgDataset **out_source,
                                    struct DgDataset **out_target);

/**
 * Trains one model on a multi-domain source dataset with the given seed.
 *
 * # Safety
 * `source` must be a live handle, `options` a valid pointer whose
 * `hidden_dims` points at `hidden_dims_len` elements, and `out` a valid
 * pointer; on success `*out` must be released with [`dg_model_free`].
 */
enum DgStatus dg_train(const struct DgDataset *source,
                       const struct DgTrainOptions *options,
                       uint64_t seed,
                       struct DgModel **out);

/**
 * Evaluates a model on a dataset (accuracy, macro-F1, one-vs-rest AUC).
 *
 * # Safety
 * `model` and `dataset` must be live handles and `out` a valid pointer.
 */
enum DgStatus dg_evaluate(const struct DgModel *model,
                          const struct DgDataset *dataset,
                          struct DgMetrics *out);

/**
 * Cross-domain dispersion of the model's features on a dataset.
 *
 * # Safety
 * `model` and `dataset` must be live handles and `out` a valid pointer.
 */
enum DgStatus dg_feature_dispersion(const struct DgModel *model,
                                    const struct DgDataset *dataset,
                                    double *out);

/**
 * Writes model parameters in the documented CSV layout.
 *
 * # Safety
 * `model` must be a live handle and `path` a valid string.
 */
enum DgStatus dg_model_save(const struct DgModel *model, const char *path);

/**
 * Loads model parameters written by [`dg_model_save`] (or the CLI).
 *
 * # Safety
 * `path` must be a valid string and `out` a valid pointer; on success
 * `*out` must be released with [`dg_model_free`].
 */
enum DgStatus dg_model_load(const char *path, struct DgModel **out);

/**
 * Releases a model handle; a null handle is a no-op.
 *
 * # Safety
 * `model` must have come from this library and not be freed twice.
 */
void dg_model_free(struct DgModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DGADR_H */
