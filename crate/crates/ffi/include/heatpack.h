/* heatpack C API: heat-packet frames, observability constants, sensor placement. */

#pragma once

/* Generated with cbindgen:0.27.0 */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the library's error classes.
 */
typedef enum HpStatus {
  HP_STATUS_OK = 0,
  HP_STATUS_PRECONDITION_VIOLATION = 2,
  HP_STATUS_NUMERICAL_NONCONVERGENCE = 3,
  HP_STATUS_INVARIANT_FAILURE = 4,
  HP_STATUS_NULL_POINTER = 5,
  HP_STATUS_INVALID_ARGUMENT = 6,
  HP_STATUS_PANIC = 7,
} HpStatus;

/**
 * Truncation set geometry for `hp_frame_build`.
 */
typedef enum HpTruncationMode {
  HP_TRUNCATION_MODE_BOX = 0,
  HP_TRUNCATION_MODE_BAND = 1,
  HP_TRUNCATION_MODE_SPECTRAL = 2,
} HpTruncationMode;

/**
 * Opaque packet-frame handle.
 */
typedef struct HpFrame HpFrame;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. Valid until the next
 * FFI call from the same thread.
 */
const char *hp_last_error_message(void);

/**
 * Builds a packet frame for the built-in bump profile and certifies its
 * reconstruction error on the given grid.
 *
 * # Safety
 * `lo`, `hi` (length `d`), `x0` (length `d`) and `res` (length `d`) must be
 * readable; `out_frame` must be a writable pointer slot.
 */
enum HpStatus hp_frame_build(uintptr_t d,
                             double epsilon0,
                             double delta,
                             double eta,
                             double epsilon,
                             enum HpTruncationMode mode,
                             const double *x0,
                             const double *lo,
                             const double *hi,
                             const uintptr_t *res,
                             struct HpFrame **out_frame);

/**
 * Parses a frame from its JSON document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out_frame` must be writable.
 */
enum HpStatus hp_frame_from_json(const char *json, struct HpFrame **out_frame);

/**
 * Serializes the frame to JSON; the returned string is owned by the
 * library and stays valid until the next call on this thread.
 *
 * # Safety
 * `frame` must be a live handle from this library.
 */
const char *hp_frame_to_json(const struct HpFrame *frame);

/**
 * Number of retained lattice modes.
 *
 * # Safety
 * `frame` must be a live handle from this library.
 */
uintptr_t hp_frame_len(const struct HpFrame *frame);

/**
 * Certified L2 reconstruction error of the frame.
 *
 * # Safety
 * `frame` must be a live handle from this library.
 */
double hp_frame_measured_error(const struct HpFrame *frame);

/**
 * Releases a frame handle. Passing NULL is a no-op.
 *
 * # Safety
 * `frame` must have been produced by this library and not freed before.
 */
void hp_frame_free(struct HpFrame *frame);

/**
 * Evaluates one heat packet phi(t, x); real and imaginary parts are
 * written to the output pointers.
 *
 * # Safety
 * `x0`, `xi`, `x` must point to `d` readable doubles; outputs writable.
 */
enum HpStatus hp_packet_value(uintptr_t d,
                              const double *x0,
                              const double *xi,
                              double sigma,
                              double t,
                              const double *x,
                              double *out_re,
                              double *out_im);

/**
 * Superposition of the frame's packets at (t, x).
 *
 * # Safety
 * `frame` live handle; `x` points to `d` doubles; outputs writable.
 */
enum HpStatus hp_superpose(const struct HpFrame *frame,
                           double t,
                           const double *x,
                           double *out_re,
                           double *out_im);

/**
 * Free-space heat kernel.
 *
 * # Safety
 * `x`, `y` point to `d` doubles; `out` writable.
 */
enum HpStatus hp_free_kernel(uintptr_t d, double t, const double *x, const double *y, double *out);

/**
 * Kac-principle bound on the kernel difference at y inside the box.
 *
 * # Safety
 * `y`, `lo`, `hi` point to `d` doubles; `out` writable.
 */
enum HpStatus hp_kac_bound(uintptr_t d,
                           double t,
                           const double *y,
                           const double *lo,
                           const double *hi,
                           double *out);

/**
 * Rational erfc approximation (b >= 0).
 *
 * # Safety
 * `out` must be writable.
 */
enum HpStatus hp_erfc_rational(double b, double *out);

/**
 * Solves the relaxed sensor-placement problem on the frame's domain grid.
 * The optimal density (values in [0,1], row-major over `res`) is written
 * into `out_mask`, which must hold `prod(res)` doubles.
 *
 * # Safety
 * `frame` live handle; `lo`, `hi` length `d`; `res` length `d`; `out_mask`
 * writable with `prod(res)` doubles; the scalar outputs writable.
 */
enum HpStatus hp_design_solve(const struct HpFrame *frame,
                              uintptr_t d,
                              const double *lo,
                              const double *hi,
                              const uintptr_t *res,
                              double m_fraction,
                              double t_end,
                              double n_radius,
                              uintptr_t iters,
                              double tol,
                              double *out_mask,
                              double *out_value,
                              double *out_gap,
                              double *out_lambda);

/**
 * Randomized packet observability constant for a mask given as row-major
 * density values on the grid (pass `prod(res)` doubles).
 *
 * # Safety
 * `frame` live handle; `lo`, `hi`, `res` length `d`; `mask` readable with
 * `prod(res)` doubles; `out` writable.
 */
enum HpStatus hp_c_rand_packets(const struct HpFrame *frame,
                                uintptr_t d,
                                const double *lo,
                                const double *hi,
                                const uintptr_t *res,
                                const double *mask,
                                double t_end,
                                double *out);

/**
 * Library version as understood by the C header.
 */
int hp_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus
