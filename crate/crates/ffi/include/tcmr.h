#ifndef TCMR_H
#define TCMR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Largest deviation from orthonormality accepted for an input rotation matrix.
#define TCMR_ROTATION_TOLERANCE 1e-6

typedef enum TcmrStatus {
  TCMR_STATUS_OK = 0,
  TCMR_STATUS_NULL_POINTER = 1,
  // Wrong buffer length, index out of range or malformed value.
  TCMR_STATUS_INVALID_ARGUMENT = 2,
  TCMR_STATUS_IO = 3,
  // A file could not be parsed or failed its integrity check.
  TCMR_STATUS_FORMAT = 4,
  // Inputs built for different models or dimensions.
  TCMR_STATUS_INCOMPATIBLE = 5,
  // Invalid body model or run configuration.
  TCMR_STATUS_CONFIG = 6,
  // Degenerate geometry or a non-finite value.
  TCMR_STATUS_NUMERIC = 7,
  // An internal bug; the library caught a panic.
  TCMR_STATUS_INTERNAL = 8,
} TcmrStatus;

// A skeleton and mesh; thread-safe and shareable between models.
typedef struct TcmrBodyModel TcmrBodyModel;

// A trained network loaded from a checkpoint.
typedef struct TcmrModel TcmrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *tcmr_version(void);

// Copies the calling thread's last error message into `buf` (truncated and
// always NUL-terminated when `len > 0`). Returns the full message length
// including the terminator, or 0 when the last call succeeded.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t tcmr_last_error_message(char *buf, size_t len);

// The bundled 24-joint body model.
//
// # Safety
// `out` must be a valid pointer; the handle written there is owned by the caller.
enum TcmrStatus tcmr_body_model_default(struct TcmrBodyModel **out);

// Loads a body model document.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum TcmrStatus tcmr_body_model_load(const char *path, struct TcmrBodyModel **out);

// # Safety
// `model` must be null or a handle from this library that was not freed yet.
void tcmr_body_model_free(struct TcmrBodyModel *model);

// Joint count, shape dimension, vertex count and flat parameter length.
//
// # Safety
// `model` must be a live handle; each output pointer must be null or valid.
enum TcmrStatus tcmr_body_model_dims(const struct TcmrBodyModel *model,
                                     size_t *joints,
                                     size_t *shape_dim,
                                     size_t *vertices,
                                     size_t *param_len);

// Posed joints (`joints_len = 3·J`) and optionally vertices (`3·V`) of one
// flat parameter vector: `J` axis-angle triples, shape, then scale and
// the two translation components.
//
// # Safety
// Pointers must be valid for the stated lengths; `vertices_out` may be null.
enum TcmrStatus tcmr_body_model_forward(const struct TcmrBodyModel *model,
                                        const double *params,
                                        size_t params_len,
                                        double *joints_out,
                                        size_t joints_len,
                                        double *vertices_out,
                                        size_t vertices_len);

// Loads a checkpoint. `body` may be null, in which case the body model named
// by the checkpoint's configuration is used.
//
// # Safety
// `path` must be NUL-terminated, `body` null or live, `out` valid.
enum TcmrStatus tcmr_model_load(const char *path,
                                const struct TcmrBodyModel *body,
                                struct TcmrModel **out);

// # Safety
// `model` must be null or a handle from this library that was not freed yet.
void tcmr_model_free(struct TcmrModel *model);

// Window length, per-frame feature length and flat parameter length of the output.
//
// # Safety
// `model` must be a live handle; each output pointer must be null or valid.
enum TcmrStatus tcmr_model_dims(const struct TcmrModel *model,
                                size_t *window,
                                size_t *feature_dim,
                                size_t *param_len);

// Estimates the parameters of the current frame of `count` windows.
// `features` holds `count × window × feature_dim` values, window-major;
// `params_out` receives `count × param_len`.
//
// # Safety
// Pointers must be valid for the stated lengths.
enum TcmrStatus tcmr_model_predict(const struct TcmrModel *model,
                                   const double *features,
                                   size_t features_len,
                                   size_t count,
                                   double *params_out,
                                   size_t params_len);

// Continuous 6D representation (two stacked columns) to a row-major 3×3 matrix.
//
// # Safety
// `rot6d` must hold 6 values and `matrix_out` room for 9.
enum TcmrStatus tcmr_rot6d_to_matrix(const double *rot6d, double *matrix_out);

// # Safety
// `axis_angle` must hold 3 values and `matrix_out` room for 9.
enum TcmrStatus tcmr_axis_angle_to_matrix(const double *axis_angle, double *matrix_out);

// Row-major rotation matrix to axis-angle with angle in `[0, π]`. Matrices
// further than [`TCMR_ROTATION_TOLERANCE`] from a rotation are rejected.
//
// # Safety
// `matrix` must hold 9 values and `axis_angle_out` room for 3.
enum TcmrStatus tcmr_matrix_to_axis_angle(const double *matrix, double *axis_angle_out);

// Mean joint error in mm over all `joint_count` joints after subtracting joint `root` on each side.
// Positions are in metres, `3·joint_count` values each.
//
// # Safety
// `pred` and `gt` must hold `3·joint_count` values; `out_mm` must be valid.
enum TcmrStatus tcmr_mpjpe(const double *pred,
                           const double *gt,
                           size_t joint_count,
                           size_t root,
                           double *out_mm);

// Mean joint error in mm after the best similarity transform of `pred` onto `gt`.
//
// # Safety
// `pred` and `gt` must hold `3·joint_count` values; `out_mm` must be valid.
enum TcmrStatus tcmr_pa_mpjpe(const double *pred,
                              const double *gt,
                              size_t joint_count,
                              double *out_mm);

// Mean acceleration error in mm/s² of two joint trajectories laid out
// frame-major (`frame_count × joint_count × 3`).
//
// # Safety
// `pred` and `gt` must hold `3·frame_count·joint_count` values; `out` must be valid.
enum TcmrStatus tcmr_accel_error(const double *pred,
                                 const double *gt,
                                 size_t frame_count,
                                 size_t joint_count,
                                 double fps,
                                 double *out_mm_s2);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TCMR_H */
