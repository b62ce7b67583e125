#ifndef ICL_GUARD_H
#define ICL_GUARD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IclGuardLossMode {
  ICL_GUARD_LOSS_MODE_SCALED = 0,
  ICL_GUARD_LOSS_MODE_CLIPPED = 1,
} IclGuardLossMode;

typedef enum IclGuardConfidence {
  ICL_GUARD_CONFIDENCE_ARGMAX = 0,
  ICL_GUARD_CONFIDENCE_TOP2 = 1,
  ICL_GUARD_CONFIDENCE_ENTROPY = 2,
} IclGuardConfidence;

/**
 * Result of every fallible call.
 */
typedef enum IclGuardStatus {
  ICL_GUARD_STATUS_OK = 0,
  ICL_GUARD_STATUS_NULL_POINTER = 1,
  ICL_GUARD_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed distributions, shapes, bounds or settings.
   */
  ICL_GUARD_STATUS_INVALID_ARGUMENT = 3,
  /**
   * Tolerance or delta outside its admissible range.
   */
  ICL_GUARD_STATUS_BUDGET = 4,
  ICL_GUARD_STATUS_EMPTY = 5,
  /**
   * A trace or selection file failed to parse; the message names the line.
   */
  ICL_GUARD_STATUS_PARSE = 6,
  ICL_GUARD_STATUS_IO = 7,
  ICL_GUARD_STATUS_PROTOCOL = 8,
  ICL_GUARD_STATUS_PANIC = 9,
} IclGuardStatus;

/**
 * Owned set of trace records.
 */
typedef struct IclGuardRecords IclGuardRecords;

/**
 * Calibrated threshold with its settings and certification trail.
 */
typedef struct IclGuardSelection IclGuardSelection;

typedef struct IclGuardCalibrateOptions {
  double epsilon;
  double delta;
  enum IclGuardLossMode mode;
  enum IclGuardConfidence confidence;
  /**
   * 0 picks half the trace depth.
   */
  size_t first_exit_layer;
  /**
   * Evenly spaced thresholds from 1 to 0, at least 2.
   */
  size_t grid_points;
} IclGuardCalibrateOptions;

/**
 * Exit threshold. When `zero_shot_only` is set `lambda` is ignored and
 * reported as NaN.
 */
typedef struct IclGuardThreshold {
  bool zero_shot_only;
  double lambda;
} IclGuardThreshold;

typedef struct IclGuardEvaluation {
  size_t records;
  double raw_risk;
  size_t helpful;
  size_t neutral;
  size_t harmful;
  double accuracy;
  double zero_shot_accuracy;
  double final_layer_accuracy;
  double exit_rate;
  double mean_layers;
  double mean_layers_with_fallback;
} IclGuardEvaluation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *icl_guard_version(void);

/**
 * Message of the last failed call on this thread, or NULL after a
 * success. Valid until the next call on the same thread.
 */
const char *icl_guard_last_error(void);

/**
 * Command line defaults, with a tolerance of 0.05.
 */
struct IclGuardCalibrateOptions icl_guard_calibrate_options_default(void);

/**
 * Read a JSONL trace file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum IclGuardStatus icl_guard_records_load(const char *path, struct IclGuardRecords **out);

/**
 * Write records as a JSONL trace file.
 *
 * # Safety
 * `records` must come from this library; `path` must be NUL-terminated.
 */
enum IclGuardStatus icl_guard_records_save(const struct IclGuardRecords *records, const char *path);

/**
 * Draw `n` records from a TOML profile, or from the default profile when
 * `profile_path` is NULL.
 *
 * # Safety
 * `profile_path` must be NULL or NUL-terminated; `out` must be writable.
 */
enum IclGuardStatus icl_guard_records_simulate(const char *profile_path,
                                               size_t n,
                                               uint64_t seed,
                                               struct IclGuardRecords **out);

/**
 * Number of records; 0 for NULL.
 *
 * # Safety
 * `records` must be NULL or come from this library.
 */
size_t icl_guard_records_len(const struct IclGuardRecords *records);

/**
 * Layers per trace; 0 for NULL or an empty set.
 *
 * # Safety
 * `records` must be NULL or come from this library.
 */
size_t icl_guard_records_num_layers(const struct IclGuardRecords *records);

/**
 * # Safety
 * `records` must be NULL or come from this library, and is not used again.
 */
void icl_guard_records_free(struct IclGuardRecords *records);

/**
 * Learn-then-Test selection on calibration records.
 *
 * # Safety
 * `records` must come from this library, `options` must point to valid
 * options and `out` must be writable.
 */
enum IclGuardStatus icl_guard_calibrate(const struct IclGuardRecords *records,
                                        const struct IclGuardCalibrateOptions *options,
                                        struct IclGuardSelection **out);

/**
 * Read a selection JSON file.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` writable.
 */
enum IclGuardStatus icl_guard_selection_load(const char *path, struct IclGuardSelection **out);

/**
 * # Safety
 * `selection` must come from this library; `path` must be NUL-terminated.
 */
enum IclGuardStatus icl_guard_selection_save(const struct IclGuardSelection *selection,
                                             const char *path);

/**
 * # Safety
 * `selection` must come from this library and `out` must be writable.
 */
enum IclGuardStatus icl_guard_selection_threshold(const struct IclGuardSelection *selection,
                                                  struct IclGuardThreshold *out);

/**
 * Length of the certified prefix of the tested sequence, sentinel
 * included; 0 for NULL.
 *
 * # Safety
 * `selection` must be NULL or come from this library.
 */
size_t icl_guard_selection_certified_count(const struct IclGuardSelection *selection);

/**
 * # Safety
 * `selection` must be NULL or come from this library, and is not used again.
 */
void icl_guard_selection_free(struct IclGuardSelection *selection);

/**
 * Apply a fixed threshold. `first_exit_layer` 0 picks half the depth.
 *
 * # Safety
 * `records` must come from this library and `out` must be writable.
 */
enum IclGuardStatus icl_guard_evaluate(const struct IclGuardRecords *records,
                                       struct IclGuardThreshold threshold,
                                       size_t first_exit_layer,
                                       enum IclGuardConfidence measure,
                                       struct IclGuardEvaluation *out);

/**
 * Apply a calibrated selection with its own exit settings.
 *
 * # Safety
 * `records` and `selection` must come from this library; `out` must be
 * writable.
 */
enum IclGuardStatus icl_guard_evaluate_selection(const struct IclGuardRecords *records,
                                                 const struct IclGuardSelection *selection,
                                                 struct IclGuardEvaluation *out);

/**
 * Hoeffding-Bentkus p-value for an observed mean loss in `[0, 1]`.
 *
 * # Safety
 * `out` must be writable.
 */
enum IclGuardStatus icl_guard_hb_pvalue(double risk_hat, uint64_t n, double level, double *out);

/**
 * Tolerance on the `[0, 1]` scale for the signed loss in `[-1, 1]`.
 *
 * # Safety
 * `out` must be writable.
 */
enum IclGuardStatus icl_guard_scale_epsilon(double epsilon, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ICL_GUARD_H */
