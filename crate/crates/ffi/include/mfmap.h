#ifndef MFMAP_H
#define MFMAP_H

#include <stddef.h>
#include <stdint.h>

typedef enum MfmapStatus {
  MFMAP_STATUS_OK = 0,
  MFMAP_STATUS_INVALID_ARGUMENT = 1,
  MFMAP_STATUS_IO = 2,
  MFMAP_STATUS_DATA = 3,
  MFMAP_STATUS_NUMERICAL = 4,
  MFMAP_STATUS_PANIC = 5,
} MfmapStatus;

/**
 * Replicated values at every location.
 */
typedef struct MfmapEnsemble MfmapEnsemble;

/**
 * Location sets of all fidelities.
 */
typedef struct MfmapLocations MfmapLocations;

/**
 * A fitted transport map.
 */
typedef struct MfmapModel MfmapModel;

/**
 * Training options. A tolerance <= 0 disables early stopping; a nonzero
 * `linear` drops the nonlinear kernel term.
 */
typedef struct MfmapTrainOptions {
  size_t epochs;
  size_t batch_size;
  double learning_rate;
  double tolerance;
  uint64_t seed;
  int32_t linear;
} MfmapTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; valid until the next failing call.
 */
const char *mfmap_last_error(void);

/**
 * Reads a locations CSV (`fidelity,x,y,...`).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MfmapStatus mfmap_locations_load(const char *path, struct MfmapLocations **out);

/**
 * Builds locations from `sizes[r]` points per fidelity, coordinates packed
 * fidelity by fidelity with `dim` values per point.
 *
 * # Safety
 * `sizes` must hold `num_fidelities` entries and `coords` `dim * sum(sizes)` values.
 */
enum MfmapStatus mfmap_locations_new(size_t dim,
                                     size_t num_fidelities,
                                     const size_t *sizes,
                                     const double *coords,
                                     struct MfmapLocations **out);

/**
 * # Safety
 * `locs` must be a live handle.
 */
size_t mfmap_locations_num_fidelities(const struct MfmapLocations *locs);

/**
 * Number of points in fidelity `r` (0 if out of range).
 *
 * # Safety
 * `locs` must be a live handle.
 */
size_t mfmap_locations_len(const struct MfmapLocations *locs, size_t r);

/**
 * # Safety
 * `locs` must come from this library and not be used afterwards.
 */
void mfmap_locations_free(struct MfmapLocations *locs);

/**
 * Reads one ensemble CSV per fidelity and checks them against `locs`.
 *
 * # Safety
 * `paths` must hold `count` NUL-terminated strings.
 */
enum MfmapStatus mfmap_ensemble_load(const struct MfmapLocations *locs,
                                     const char *const *paths,
                                     size_t count,
                                     struct MfmapEnsemble **out);

/**
 * Builds an ensemble from one row-major `replicates x sizes[r]` array per fidelity.
 *
 * # Safety
 * `sizes` and `values` must hold `num_fidelities` entries, each array sized as stated.
 */
enum MfmapStatus mfmap_ensemble_new(size_t replicates,
                                    size_t num_fidelities,
                                    const size_t *sizes,
                                    const double *const *values,
                                    struct MfmapEnsemble **out);

/**
 * # Safety
 * `ens` must be a live handle.
 */
size_t mfmap_ensemble_replicates(const struct MfmapEnsemble *ens);

/**
 * Copies fidelity `r` (row-major, replicates x N_r) into `buf` of length `len`.
 *
 * # Safety
 * `buf` must have room for `len` values.
 */
enum MfmapStatus mfmap_ensemble_copy_fidelity(const struct MfmapEnsemble *ens,
                                              size_t r,
                                              double *buf,
                                              size_t len);

/**
 * # Safety
 * `ens` must come from this library and not be used afterwards.
 */
void mfmap_ensemble_free(struct MfmapEnsemble *ens);

struct MfmapTrainOptions mfmap_train_options_default(void);

/**
 * Fits a model; `options` may be null for defaults.
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
enum MfmapStatus mfmap_train(const struct MfmapLocations *locs,
                             const struct MfmapEnsemble *train,
                             const struct MfmapTrainOptions *options,
                             struct MfmapModel **out);

/**
 * Restores a model from a checkpoint and the data it was trained on.
 *
 * # Safety
 * `path` must be NUL-terminated; handles must be live.
 */
enum MfmapStatus mfmap_model_load(const char *path,
                                  const struct MfmapLocations *locs,
                                  const struct MfmapEnsemble *train,
                                  struct MfmapModel **out);

/**
 * Writes the model's checkpoint JSON.
 *
 * # Safety
 * `model` must be live and `path` NUL-terminated.
 */
enum MfmapStatus mfmap_model_save(const struct MfmapModel *model, const char *path);

/**
 * Mean negative log score of `test`; per-replicate values are written to
 * `per_replicate` when it is non-null (`len` must equal the replicate count).
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum MfmapStatus mfmap_model_log_score(const struct MfmapModel *model,
                                       const struct MfmapEnsemble *test,
                                       double *mean,
                                       double *per_replicate,
                                       size_t len);

/**
 * Draws `count` joint samples, or conditional ones when `given` is non-null
 * (its fidelities are held fixed; it has 1 or `count` replicates).
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
enum MfmapStatus mfmap_model_sample(const struct MfmapModel *model,
                                    const struct MfmapEnsemble *given,
                                    size_t count,
                                    uint64_t seed,
                                    struct MfmapEnsemble **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void mfmap_model_free(struct MfmapModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFMAP_H */
