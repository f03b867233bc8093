#ifndef ERGOSELECT_H
#define ERGOSELECT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ErgoStatus {
  ERGO_STATUS_OK = 0,
  ERGO_STATUS_NULL_POINTER = 1,
  ERGO_STATUS_INVALID_ARGUMENT = 2,
  ERGO_STATUS_CONFIG = 3,
  ERGO_STATUS_NON_CONVERGENCE = 4,
  ERGO_STATUS_CERTIFICATE = 5,
  ERGO_STATUS_BUFFER_TOO_SMALL = 6,
  ERGO_STATUS_PANIC = 7,
} ErgoStatus;

/**
 * A discretized problem: Hamiltonian, diffusion, discount, potential, grid.
 */
typedef struct ErgoProblem ErgoProblem;

/**
 * Result of one solve.
 */
typedef struct ErgoSolution ErgoSolution;

typedef struct ErgoSolveOptions {
  /**
   * Sup-norm residual at which Newton stops.
   */
  double tol;
  size_t max_iter;
  double lambda_ceiling;
} ErgoSolveOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *ergo_last_error(void);

/**
 * Library version, static storage.
 */
const char *ergo_version(void);

struct ErgoSolveOptions ergo_solve_options_default(void);

/**
 * `H = ½|p|² + cos 4πx` on a one-dimensional grid of `n` nodes.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum ErgoStatus ergo_problem_cos4pi(size_t n, struct ErgoProblem **out);

/**
 * Build a problem from a run config in the command-line JSON format. Only
 * `model` and `grid` are used, but the whole document is validated. A
 * missing `c_h` is resolved as the command line does, which for viscous
 * models means several solves.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` valid for writes.
 */
enum ErgoStatus ergo_problem_from_json(const char *json, struct ErgoProblem **out);

/**
 * Number of grid nodes.
 *
 * # Safety
 * `problem` must be a live handle or null.
 */
size_t ergo_problem_len(const struct ErgoProblem *problem);

/**
 * # Safety
 * `problem` must come from this library and not be used afterwards.
 */
void ergo_problem_free(struct ErgoProblem *problem);

/**
 * Solve the discounted equation with discount `lambda` and viscosity
 * `eta`. `options` may be null for the defaults.
 *
 * # Safety
 * `problem` must be a live handle, `options` null or valid, `out` valid for
 * writes.
 */
enum ErgoStatus ergo_solve(const struct ErgoProblem *problem,
                           double lambda,
                           double eta,
                           const struct ErgoSolveOptions *options,
                           struct ErgoSolution **out);

/**
 * # Safety
 * `solution` must be a live handle or null.
 */
size_t ergo_solution_len(const struct ErgoSolution *solution);

/**
 * Copy the nodal values (axis 0 fastest) into `buf`, which must hold at
 * least `ergo_solution_len` doubles.
 *
 * # Safety
 * `buf` must be valid for `len` writes.
 */
enum ErgoStatus ergo_solution_values(const struct ErgoSolution *solution, double *buf, size_t len);

/**
 * Sup norm of the final residual, NaN for a null handle.
 *
 * # Safety
 * `solution` must be a live handle or null.
 */
double ergo_solution_residual(const struct ErgoSolution *solution);

/**
 * # Safety
 * `solution` must be a live handle or null.
 */
size_t ergo_solution_iterations(const struct ErgoSolution *solution);

/**
 * # Safety
 * `solution` must come from this library and not be used afterwards.
 */
void ergo_solution_free(struct ErgoSolution *solution);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ERGOSELECT_H */
