#ifndef PENADD_H
#define PENADD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define PENADD_OK 0

#define PENADD_ERR_NULL 1

#define PENADD_ERR_INVALID_INPUT 2

#define PENADD_ERR_DIMENSION 3

#define PENADD_ERR_PENALTY_DOMAIN 4

#define PENADD_ERR_EMPTY_DATA 5

#define PENADD_ERR_DEGENERATE_FIT 6

#define PENADD_ERR_NON_CONVERGENCE 7

#define PENADD_ERR_UNDEFINED_CRITERION 8

#define PENADD_ERR_SELECTION_FAILED 9

#define PENADD_ERR_BUFFER_TOO_SMALL 10

#define PENADD_ERR_INTERNAL 99

#define PENADD_SOLVER_DIRECT 0

#define PENADD_SOLVER_ITERATIVE 1

#define PENADD_CRITERION_AIC 0

#define PENADD_CRITERION_GCV 1

#define PENADD_CRITERION_AICC 2

/**
 * Opaque design and response.
 */
typedef struct PenaddDataset PenaddDataset;

/**
 * Opaque fitted surface; keeps a copy of the data for prediction.
 */
typedef struct PenaddFit PenaddFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *penadd_last_error(void);

/**
 * Copies an `n x d` row-major design (scaled to `[0,1]`) and `n` responses.
 *
 * # Safety
 * `x` must point to `n * d` doubles, `y` to `n` doubles and `out` to a
 * writable handle slot.
 */
int32_t penadd_dataset_new(const double *x,
                           uintptr_t n,
                           uintptr_t d,
                           const double *y,
                           struct PenaddDataset **out);

/**
 * # Safety
 * `ds` must be NULL or a handle from [`penadd_dataset_new`] not yet freed.
 */
void penadd_dataset_free(struct PenaddDataset *ds);

/**
 * Fits on a grid with `grid_sizes[k]` nodes and bandwidth `bandwidth[k]`
 * along axis `k`.
 *
 * # Safety
 * `grid_sizes` and `bandwidth` must hold one entry per predictor; `out`
 * must be a writable handle slot.
 */
int32_t penadd_fit(const struct PenaddDataset *ds,
                   const uintptr_t *grid_sizes,
                   const double *bandwidth,
                   double r,
                   int32_t solver_kind,
                   struct PenaddFit **out);

/**
 * # Safety
 * `fit` must be NULL or a handle from [`penadd_fit`] not yet freed.
 */
void penadd_fit_free(struct PenaddFit *fit);

/**
 * Number of grid nodes of a fit (length of the surface buffers).
 *
 * # Safety
 * `fit` must be a live handle or NULL (returns 0).
 */
uintptr_t penadd_fit_len(const struct PenaddFit *fit);

/**
 * Fitted intercept at the grid nodes, row-major with axis 1 slowest.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
int32_t penadd_fit_surface(const struct PenaddFit *fit, double *out, uintptr_t len);

/**
 * Intercept of the additive part at the grid nodes.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
int32_t penadd_fit_additive_surface(const struct PenaddFit *fit, double *out, uintptr_t len);

/**
 * Relative residual of the normal equations.
 *
 * # Safety
 * `out` must be a writable double.
 */
int32_t penadd_fit_residual(const struct PenaddFit *fit, double *out);

/**
 * Estimate at `m` points (`m x d` row-major, in `[0,1]^d`).
 *
 * # Safety
 * `x` must point to `m * d` doubles and `out` to `m` writable doubles.
 */
int32_t penadd_fit_predict(const struct PenaddFit *fit, const double *x, uintptr_t m, double *out);

/**
 * Trace of the hat matrix at the design points for one `(R, h)`.
 *
 * # Safety
 * `grid_sizes` and `bandwidth` must hold one entry per predictor; `out`
 * must be a writable double.
 */
int32_t penadd_trace(const struct PenaddDataset *ds,
                     const uintptr_t *grid_sizes,
                     const double *bandwidth,
                     double r,
                     double *out);

/**
 * Criterion search over `R/(1+R)` in steps of `shrink_step` and a common
 * bandwidth on `[h_min, h_max]` equidistant in `log10` with step `log_step`.
 * Writes the selected penalty (possibly `INFINITY`) and bandwidth.
 *
 * # Safety
 * `grid_sizes` must hold one entry per predictor; `out_r` and `out_h` must
 * be writable doubles.
 */
int32_t penadd_select(const struct PenaddDataset *ds,
                      const uintptr_t *grid_sizes,
                      double shrink_step,
                      double h_min,
                      double h_max,
                      double log_step,
                      int32_t criterion_kind,
                      double *out_r,
                      double *out_h);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PENADD_H */
