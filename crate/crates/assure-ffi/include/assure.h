/* C interface for the assure welfare-estimation library. */

#ifndef ASSURE_H
#define ASSURE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define ASSURE_OK 0

#define ASSURE_ERR_IO 1

#define ASSURE_ERR_CSV 2

#define ASSURE_ERR_DOMAIN 3

#define ASSURE_ERR_PRECONDITION 4

#define ASSURE_ERR_UNSUPPORTED 5

#define ASSURE_ERR_CONFIG 6

#define ASSURE_ERR_NULL_POINTER 7

#define ASSURE_ERR_UTF8 8

#define ASSURE_ERR_PANIC 9

#define ASSURE_MODE_GAUSSIAN 0

#define ASSURE_MODE_POISSON 1

#define ASSURE_METHOD_ASSURE 0

#define ASSURE_METHOD_CB 1

#define ASSURE_METHOD_POISSON 2

/**
 * Opaque dataset handle.
 */
typedef struct AssureDataset AssureDataset;

/**
 * Opaque decision-family handle.
 */
typedef struct AssureFamily AssureFamily;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. Empty until a
 * call fails; the pointer stays valid until the next failing call here.
 */
const char *assure_last_error_message(void);

/**
 * Builds a dataset from parallel arrays of length `n`. `covariates` is
 * either null (with `covariate_dim` 0) or a row-major `n * covariate_dim`
 * block. On success writes a new handle to `out`.
 *
 * # Safety
 * `y`, `sigma`, `cost` must point to `n` readable doubles; `covariates`,
 * when non-null, to `n * covariate_dim` of them; `out` must be a valid
 * destination for one pointer.
 */
int32_t assure_dataset_new(const double *y,
                           const double *sigma,
                           const double *cost,
                           const double *covariates,
                           size_t covariate_dim,
                           size_t n,
                           int32_t mode,
                           struct AssureDataset **out);

/**
 * Loads a dataset from a CSV file with columns y, sigma, k and optional
 * covariates x1..xp.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid destination for
 * one pointer.
 */
int32_t assure_dataset_from_csv(const char *path, int32_t mode, struct AssureDataset **out);

/**
 * Number of units in the dataset; 0 for a null handle.
 *
 * # Safety
 * `data`, when non-null, must be a live handle from this library.
 */
size_t assure_dataset_len(const struct AssureDataset *data);

/**
 * Releases a dataset handle. Null is a no-op.
 *
 * # Safety
 * `data` must be null or a handle not freed before.
 */
void assure_dataset_free(struct AssureDataset *data);

/**
 * Builds a decision family from its JSON config. The dataset supplies
 * covariate dimensions and the ensemble family's fitted components.
 *
 * # Safety
 * `config_json` must be NUL-terminated; `data` a live dataset handle;
 * `out` a valid destination for one pointer.
 */
int32_t assure_family_from_json(const char *config_json,
                                const struct AssureDataset *data,
                                struct AssureFamily **out);

/**
 * Parameter count of the family; 0 for a null handle.
 *
 * # Safety
 * `family`, when non-null, must be a live handle from this library.
 */
size_t assure_family_dim(const struct AssureFamily *family);

/**
 * Releases a family handle. Null is a no-op.
 *
 * # Safety
 * `family` must be null or a handle not freed before.
 */
void assure_family_free(struct AssureFamily *family);

/**
 * Evaluates one welfare estimate at `beta`. `method` selects the smoothed
 * (0), coupled-bootstrap (1), or count (2) estimator; `smoothing` is the
 * bandwidth or coupling scale, NaN for the default. Writes the estimate and
 * its standard error.
 *
 * # Safety
 * `beta` must point to `beta_len` doubles; `out_value` and `out_stderr`
 * must be valid destinations; handles must be live.
 */
int32_t assure_welfare_estimate(const struct AssureDataset *data,
                                const struct AssureFamily *family,
                                const double *beta,
                                size_t beta_len,
                                int32_t method,
                                double smoothing,
                                double *out_value,
                                double *out_stderr);

/**
 * Exhaustive grid argmax of the estimated welfare (families of up to two
 * parameters). Writes the argmax into `out_beta` (family dim entries) and
 * its estimate into `out_value`.
 *
 * # Safety
 * `out_beta` must hold `assure_family_dim(family)` doubles; `out_value`
 * one double; handles must be live.
 */
int32_t assure_grid_argmax(const struct AssureDataset *data,
                           const struct AssureFamily *family,
                           int32_t method,
                           double smoothing,
                           size_t grid_size,
                           double *out_beta,
                           double *out_value);

/**
 * Multistart Nelder-Mead argmax of the estimated welfare. Deterministic in
 * (starts, seed) at any parallelism.
 *
 * # Safety
 * Same contracts as `assure_grid_argmax`.
 */
int32_t assure_multistart_argmax(const struct AssureDataset *data,
                                 const struct AssureFamily *family,
                                 int32_t method,
                                 double smoothing,
                                 size_t starts,
                                 uint64_t seed,
                                 double *out_beta,
                                 double *out_value);

/**
 * Evaluates the family's 0/1 decision for every unit at `beta`, writing one
 * byte per unit into `out` (length `assure_dataset_len(data)`).
 *
 * # Safety
 * `beta` must point to `beta_len` doubles and `out` to one byte per unit;
 * handles must be live.
 */
int32_t assure_decisions(const struct AssureDataset *data,
                         const struct AssureFamily *family,
                         const double *beta,
                         size_t beta_len,
                         uint8_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASSURE_H */
