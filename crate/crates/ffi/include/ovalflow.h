#ifndef OVALFLOW_H
#define OVALFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define OF_OK 0

#define OF_ERR_NULL_POINTER -1

#define OF_ERR_INVALID_PARAMETER -2

#define OF_ERR_PARSE -3

#define OF_ERR_SCHEMA -4

#define OF_ERR_IO -5

#define OF_ERR_BUFFER_TOO_SMALL -6

#define OF_ERR_OUT_OF_RANGE -7

// Geometric precondition failed: degenerate profile, tip in range, Y <= 0,
// non-monotone data, empty region, region violation.
#define OF_ERR_GEOMETRY -8

// Numerical failure: CFL violation, blow-up, step failure, no convergence,
// under-resolution, symmetry violation, short window, not a solution.
#define OF_ERR_NUMERICAL -9

#define OF_ERR_PANIC -10

// Snapshots of one solver run.
typedef struct OfRun OfRun;

// A rescaled profile u(sigma) at time tau.
typedef struct OfState OfState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the message of the last failure on this thread into `buf`. This
// call never replaces the stored message.
//
// # Safety
// `buf` must be null or valid for `cap` writable bytes; `needed` must be
// null or valid for one `usize` write.
int32_t of_last_error_message(char *buf, size_t cap, size_t *needed);

// Build a state from `n` samples.
//
// # Safety
// `sigma` and `u` must be valid for `n` reads; `out` must be valid for one
// pointer write. Infinite tips are passed as `-INFINITY` / `INFINITY`.
int32_t of_state_new(const double *sigma,
                     const double *u,
                     size_t n,
                     double tau,
                     double sigma_minus,
                     double sigma_plus,
                     struct OfState **out);

// The default oval ansatz at `tau` on its default grid.
//
// # Safety
// `out` must be valid for one pointer write.
int32_t of_state_oval_ansatz(double tau, struct OfState **out);

// Release a state. Null is ignored.
//
// # Safety
// `state` must be null or a pointer returned by this library that has not
// been freed.
void of_state_free(struct OfState *state);

// Node count and rescaled time of a state.
//
// # Safety
// `state` must be a live handle; `n` and `tau` must be null or valid for
// one write each.
int32_t of_state_info(const struct OfState *state, size_t *n, double *tau);

// Copy sigma and u into caller buffers of capacity `cap`.
//
// # Safety
// `state` must be a live handle; `sigma` and `u` must be null or valid for
// `cap` writes.
int32_t of_state_copy(const struct OfState *state, double *sigma, double *u, size_t cap);

// u_tau of the rescaled flow on the contiguous block u >= u_min around
// sigma = 0. The block starts at input node `*start` and has `*len` nodes.
//
// # Safety
// `state` must be a live handle; `rates` must be valid for `cap` writes;
// `start` and `len` must be valid for one write each.
int32_t of_rhs_rescaled(const struct OfState *state,
                        double u_min,
                        double *rates,
                        size_t cap,
                        size_t *start,
                        size_t *len);

// Run the solver on a JSON experiment config (same schema as the CLI).
//
// # Safety
// `config_json` must be a NUL-terminated string; `out` must be valid for
// one pointer write.
int32_t of_run_new(const char *config_json, struct OfRun **out);

// Release a run. Null is ignored.
//
// # Safety
// `run` must be null or a live handle from `of_run_new`.
void of_run_free(struct OfRun *run);

// Number of stored snapshots and whether the run reached its end time
// (1) or stopped at a detected blow-up (0).
//
// # Safety
// `run` must be a live handle; `count` and `completed` must be null or
// valid for one write each.
int32_t of_run_info(const struct OfRun *run, size_t *count, int32_t *completed);

// Copy snapshot `k` into a new state handle.
//
// # Safety
// `run` must be a live handle; `out` must be valid for one pointer write.
int32_t of_run_snapshot(const struct OfRun *run, size_t k, struct OfState **out);

// A-priori diagnostics of a state as JSON. `config_json` may be null for
// the defaults; otherwise it holds diagnostics keys only.
//
// # Safety
// `state` must be a live handle; `config_json` null or NUL-terminated;
// `buf` null or valid for `cap` writes; `needed` null or valid for one write.
int32_t of_diagnostics_json(const struct OfState *state,
                            const char *config_json,
                            char *buf,
                            size_t cap,
                            size_t *needed);

// Run the quick (`quick != 0`) or full acceptance battery. The JSON
// summary goes to `buf`; `all_pass` receives 1 when every criterion passed.
// The summary is cached per battery, so a second call with a larger buffer
// does not rerun it.
//
// # Safety
// `buf` null or valid for `cap` writes; `needed` and `all_pass` null or
// valid for one write each.
int32_t of_suite_json(int32_t quick, char *buf, size_t cap, size_t *needed, int32_t *all_pass);

// Bryant profile Z0 and Z0' at `rho` (tip scalar curvature normalized to 1).
//
// # Safety
// `z` and `dz` must be null or valid for one write each.
int32_t of_bryant_eval(double rho, double *z, double *dz);

// Gaussian-weight Hermite eigenfunction psi_n(sigma) (psi_0 = 1, psi_2 = sigma^2 - 2).
double of_psi_n(uint32_t n, double sigma);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OVALFLOW_H */
