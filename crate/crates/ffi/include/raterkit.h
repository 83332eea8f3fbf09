#ifndef RATERKIT_H
#define RATERKIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RkStatus {
  RK_STATUS_OK = 0,
  RK_STATUS_NULL_POINTER = 1,
  RK_STATUS_INVALID_ARGUMENT = 2,
  RK_STATUS_DIMENSION_MISMATCH = 3,
  RK_STATUS_DOMAIN = 4,
  RK_STATUS_EMPTY_ANNOTATION = 5,
  RK_STATUS_UNDEFINED = 6,
  RK_STATUS_NOT_CONVERGED = 7,
  RK_STATUS_PANIC = 99,
} RkStatus;

// Annotations of one image under construction.
typedef struct RkStack RkStack;

// Result of [`rk_fuse_staple`].
typedef struct RkStapleInfo {
  size_t iterations;
  int converged;
  double prior;
} RkStapleInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *rk_version(void);

// Message of the last failed call on this thread, or NULL. The pointer stays
// valid until the next raterkit call on the same thread.
const char *rk_last_error(void);

// Create an empty stack for a `width` x `height` image.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum RkStatus rk_stack_new(size_t width, size_t height, struct RkStack **out);

// Release a stack. Passing NULL is a no-op.
//
// # Safety
// `stack` must come from [`rk_stack_new`] and not be used afterwards.
void rk_stack_free(struct RkStack *stack);

// Append one annotation of `len` bytes, which must equal width * height.
//
// # Safety
// `id` must be a NUL-terminated string and `mask` must point to `len` bytes.
enum RkStatus rk_stack_add(struct RkStack *stack, const char *id, const uint8_t *mask, size_t len);

// Restrict all statistics to a region of interest. NULL clears it.
//
// # Safety
// `roi` must be NULL or point to `len` bytes.
enum RkStatus rk_stack_set_roi(struct RkStack *stack, const uint8_t *roi, size_t len);

// Number of annotations added so far.
//
// # Safety
// `stack` must be a live handle; `out` must be writable.
enum RkStatus rk_stack_len(const struct RkStack *stack, size_t *out);

// Per-pixel count of annotators marking each pixel (0 outside the ROI).
//
// # Safety
// `out` must point to `len` writable `uint16_t` values.
enum RkStatus rk_agreement(const struct RkStack *stack, uint16_t *out, size_t len);

// Lower bound on the mean annotator error implied by the disagreement.
//
// # Safety
// `stack` must be a live handle; `out` must be writable.
enum RkStatus rk_smyth_bound(const struct RkStack *stack, double *out);

// Pixels marked by at least a fraction `tau` of the annotators, written as 0/1.
//
// # Safety
// `out` must point to `len` writable bytes.
enum RkStatus rk_fuse_vote(const struct RkStack *stack, double tau, uint8_t *out, size_t len);

// STAPLE with the default configuration. `mask` receives the 0/1 estimate and
// `posterior` (optional) the per-pixel posterior; `sensitivity` and
// `specificity` (optional) receive one value per annotator in insertion order.
// Returns `RK_STATUS_NOT_CONVERGED` with all outputs written when the
// iteration limit is reached.
//
// # Safety
// Buffers must hold `len` pixels or `n_annotators` values respectively.
enum RkStatus rk_fuse_staple(const struct RkStack *stack,
                             uint8_t *mask,
                             double *posterior,
                             size_t len,
                             double *sensitivity,
                             double *specificity,
                             size_t n_annotators,
                             struct RkStapleInfo *info);

// Skew-averaged precision at one operating point. `phi` must be positive.
//
// # Safety
// `out` must be writable.
enum RkStatus rk_pbar(double tp, double fp, double pi1, double pi2, double phi, double *out);

// Area under the P̄-R curve of `response` against `gt`. A non-positive `phi`
// uses the ground truth's negative-to-positive ratio; `radius` 0 is exact
// matching, larger values match detections within that many pixels. `roi`
// may be NULL.
//
// # Safety
// `response`, `gt` and `roi` must each hold width * height values.
enum RkStatus rk_auc(const double *response,
                     const uint8_t *gt,
                     const uint8_t *roi,
                     size_t width,
                     size_t height,
                     double pi1,
                     double pi2,
                     double phi,
                     double radius,
                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RATERKIT_H */
