#ifndef LPVJUMP_H
#define LPVJUMP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call. Values 2 to 4 match the command-line exit codes.
typedef enum LpvjStatus {
  LPVJ_STATUS_OK = 0,
  // Null pointer, bad UTF-8 or an out-of-range argument.
  LPVJ_STATUS_INVALID_ARGUMENT = 1,
  // Parse or model validation error.
  LPVJ_STATUS_VALIDATION = 2,
  LPVJ_STATUS_INFEASIBLE = 3,
  // The solver or controller recovery failed numerically.
  LPVJ_STATUS_SOLVER = 4,
  // Internal panic caught at the boundary.
  LPVJ_STATUS_PANIC = 5,
} LpvjStatus;

typedef struct LpvjCertificate LpvjCertificate;

typedef struct LpvjController LpvjController;

// Parsed and validated system description.
typedef struct LpvjSystem LpvjSystem;

// Degrees, grid and margins of the gridded programs.
typedef struct LpvjOptions {
  uint32_t degree;
  // Points per parameter axis.
  size_t grid;
  double strict_margin;
  double pd_margin;
} LpvjOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Valid until the next call.
const char *lpvj_last_error(void);

// Frees a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void lpvj_string_free(char *s);

// Library defaults: degree 1, 50 grid points, margins 1e-7 and 1e-6.
struct LpvjOptions lpvj_options_default(void);

// Parses a TOML system description.
//
// # Safety
// `toml` must be a NUL-terminated string; `out` must be writable.
enum LpvjStatus lpvj_system_parse(const char *toml, struct LpvjSystem **out);

// # Safety
// `sys` must come from `lpvj_system_parse` and not have been freed. NULL is ignored.
void lpvj_system_free(struct LpvjSystem *sys);

// State, disturbance, input and output dimensions. Any output pointer may be NULL.
//
// # Safety
// `sys` must be a live handle; non-null outputs must be writable.
enum LpvjStatus lpvj_system_dims(const struct LpvjSystem *sys,
                                 size_t *n,
                                 size_t *n_w,
                                 size_t *n_u,
                                 size_t *n_z);

// Minimizes the gain bound of condition `theorem` (1 or 2) at delay bound `h`.
// `h` and `lambda_hat` may be NaN for the description's value and the default;
// `opts` may be NULL.
//
// # Safety
// `sys` must be a live handle, `opts` NULL or valid, `out` writable.
enum LpvjStatus lpvj_analyze(const struct LpvjSystem *sys,
                             uint32_t theorem,
                             double h,
                             double lambda_hat,
                             const struct LpvjOptions *opts,
                             struct LpvjCertificate **out);

// # Safety
// `cert` must be a live handle.
double lpvj_certificate_gamma(const struct LpvjCertificate *cert);

// Text form of the certificate; free with `lpvj_string_free`. NULL on a null handle.
//
// # Safety
// `cert` must be a live handle.
char *lpvj_certificate_to_text(const struct LpvjCertificate *cert);

// # Safety
// `cert` must be a live handle or NULL.
void lpvj_certificate_free(struct LpvjCertificate *cert);

// Synthesizes a memory state feedback from condition `theorem` (3 or 4).
//
// # Safety
// As for `lpvj_analyze`.
enum LpvjStatus lpvj_synthesize(const struct LpvjSystem *sys,
                                uint32_t theorem,
                                double h,
                                double lambda_hat,
                                const struct LpvjOptions *opts,
                                struct LpvjController **out);

// Reads a controller file's contents.
//
// # Safety
// `toml` must be NUL-terminated; `out` writable.
enum LpvjStatus lpvj_controller_parse(const char *toml, struct LpvjController **out);

// # Safety
// `ctrl` must be a live handle.
double lpvj_controller_gamma(const struct LpvjController *ctrl);

// # Safety
// `ctrl` must be a live handle.
char *lpvj_controller_to_text(const struct LpvjController *ctrl);

// Evaluates `K(rho)` and `Kd(rho)` into row-major buffers of `len >= n_u * n` entries.
//
// # Safety
// `ctrl` must be a live handle; `k` and `k_d` must hold `len` doubles.
enum LpvjStatus lpvj_controller_gains(const struct LpvjController *ctrl,
                                      double rho,
                                      double *k,
                                      double *k_d,
                                      size_t len);

// # Safety
// `ctrl` must be a live handle or NULL.
void lpvj_controller_free(struct LpvjController *ctrl);

// Monte-Carlo mean square with zero disturbance, from the description's initial history
// (zero if none). `ctrl` may be NULL for the open loop. Writes the final-to-initial
// mean-square ratio and the number of divergent runs.
//
// # Safety
// Handles must be live; outputs writable or NULL.
enum LpvjStatus lpvj_simulate_mean_square(const struct LpvjSystem *sys,
                                          const struct LpvjController *ctrl,
                                          size_t runs,
                                          double dt,
                                          double horizon,
                                          uint64_t seed,
                                          double *ratio,
                                          size_t *diverged_runs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LPVJUMP_H */
