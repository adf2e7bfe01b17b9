#ifndef COVCLEBSCH_H
#define COVCLEBSCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum CcStatus {
  CC_STATUS_OK = 0,
  CC_STATUS_NULL_POINTER = 1,
  CC_STATUS_INVALID_ARGUMENT = 2,
  CC_STATUS_PARSE = 3,
  CC_STATUS_VALIDATION = 4,
  CC_STATUS_NEAR_COLLISION = 5,
  CC_STATUS_BLOW_UP = 6,
  CC_STATUS_IO = 7,
  CC_STATUS_NUMERICAL = 8,
  CC_STATUS_PANIC = 9,
} CcStatus;

// Opaque Lie algebra.
typedef struct CcAlgebra CcAlgebra;

// Opaque peakon strand (or classical peakon system when `n_s == 1`).
typedef struct CcPeakonSim CcPeakonSim;

// Opaque G-strand simulation.
typedef struct CcStrandSim CcStrandSim;

// Periodic strand grid; `n_s == 1` selects the s-independent mode.
typedef struct CcGrid {
  size_t n_s;
  double s_extent;
  double dt;
  double t_end;
} CcGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next call into this library from the same thread.
const char *cc_last_error_message(void);

// Short lowercase name of a status code. Never null.
const char *cc_status_name(enum CcStatus status);

// Builds a built-in algebra by name (`so3`, `se3`, `so4`, `gl2`, ...).
//
// # Safety
// `name` must be a NUL-terminated string and `out` a valid pointer.
enum CcStatus cc_algebra_builtin(const char *name, struct CcAlgebra **out_alg);

// # Safety
// `alg` must be null or a handle from [`cc_algebra_builtin`] not yet freed.
void cc_algebra_free(struct CcAlgebra *alg);

// Dimension of the algebra, or 0 for a null handle.
//
// # Safety
// `alg` must be null or a live handle.
size_t cc_algebra_dim(const struct CcAlgebra *alg);

// `out = [xi, eta]`; all buffers have `len == dim` entries.
//
// # Safety
// Pointers must be valid for `len` doubles.
enum CcStatus cc_algebra_bracket(const struct CcAlgebra *alg,
                                 const double *xi,
                                 const double *eta,
                                 double *out_buf,
                                 size_t len);

// `out = ad*_xi mu`.
//
// # Safety
// Pointers must be valid for `len` doubles.
enum CcStatus cc_algebra_ad_star(const struct CcAlgebra *alg,
                                 const double *xi,
                                 const double *mu,
                                 double *out_buf,
                                 size_t len);

// # Safety
// `alg` must be a live handle and `out_residual` valid.
enum CcStatus cc_algebra_jacobi_residual(const struct CcAlgebra *alg, double *out_residual);

// `G(x, y) = exp(-|x - y| / alpha) / (2 alpha)`.
//
// # Safety
// `out_value` must be valid.
enum CcStatus cc_kernel_eval_1d(double alpha, double x, double y, double *out_value);

// `q` and `m` hold `n_p * grid.n_s` values laid out `[peakon][s]`.
//
// # Safety
// `q` and `m` must be valid for `n_p * grid.n_s` doubles; `out_sim` must be valid.
enum CcStatus cc_peakon_new(double alpha,
                            struct CcGrid grid,
                            size_t n_p,
                            const double *q,
                            const double *m,
                            size_t history_every,
                            struct CcPeakonSim **out_sim);

// # Safety
// `sim` must be null or a live handle.
void cc_peakon_free(struct CcPeakonSim *sim);

// Advances by `n_steps` RK4 steps.
//
// # Safety
// `sim` must be a live handle.
enum CcStatus cc_peakon_step(struct CcPeakonSim *sim, size_t n_steps);

// Time and integrated collective Hamiltonian of the current state.
//
// # Safety
// All pointers must be valid.
enum CcStatus cc_peakon_observe(const struct CcPeakonSim *sim,
                                double *out_time,
                                double *out_hamiltonian);

// Copies `Q`, `M`, `N` (`[peakon][s]`, `len == n_p * n_s` each). Any output may be null.
//
// # Safety
// Non-null outputs must be valid for `len` doubles.
enum CcStatus cc_peakon_state(const struct CcPeakonSim *sim,
                              double *q,
                              double *m,
                              double *n,
                              size_t len);

// `a_t`, `a_s` are row-major `dim x dim`; `nu`, `gamma` are `[s][component]`.
//
// # Safety
// Buffers must be valid for the stated sizes; `alg` must be live.
enum CcStatus cc_strand_new(const struct CcAlgebra *alg,
                            const double *a_t,
                            const double *a_s,
                            struct CcGrid grid,
                            const double *nu,
                            const double *gamma,
                            size_t history_every,
                            struct CcStrandSim **out_sim);

// # Safety
// `sim` must be null or a live handle.
void cc_strand_free(struct CcStrandSim *sim);

// # Safety
// `sim` must be a live handle.
enum CcStatus cc_strand_step(struct CcStrandSim *sim, size_t n_steps);

// Time and strand energy of the current state.
//
// # Safety
// All pointers must be valid.
enum CcStatus cc_strand_observe(const struct CcStrandSim *sim,
                                double *out_time,
                                double *out_energy);

// Copies `nu` and `gamma` (`[s][component]`, `len == n_s * dim` each). Either may be null.
//
// # Safety
// Non-null outputs must be valid for `len` doubles.
enum CcStatus cc_strand_field(const struct CcStrandSim *sim, double *nu, double *gamma, size_t len);

// Loads a scenario config file and runs it, writing outputs as the CLI does.
//
// # Safety
// `path` must be a NUL-terminated string.
enum CcStatus cc_run_config(const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COVCLEBSCH_H */
