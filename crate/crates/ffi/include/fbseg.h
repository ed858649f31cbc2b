#ifndef FBSEG_H
#define FBSEG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FbsegStatus {
  FBSEG_STATUS_OK = 0,
  FBSEG_STATUS_NULL_POINTER = 1,
  FBSEG_STATUS_INVALID_ARGUMENT = 2,
  FBSEG_STATUS_BUFFER_TOO_SMALL = 3,
  FBSEG_STATUS_IO = 4,
  FBSEG_STATUS_CORRUPT = 5,
  FBSEG_STATUS_NON_FINITE = 6,
  FBSEG_STATUS_INTERNAL = 7,
} FbsegStatus;

/*
 Trained or freshly initialised network.
 */
typedef struct FbsegModel FbsegModel;

/*
 One generated image/mask pair.
 */
typedef struct FbsegPolygon FbsegPolygon;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message describing the last failure on this thread; empty after a
 success. Valid until the next call on the same thread.
 */
const char *fbseg_last_error(void);

/*
 Generates one polygon instance with optional Gaussian noise.

 # Safety
 `out` must be a valid pointer to writable storage for one handle.
 */
enum FbsegStatus fbseg_polygon_generate(uint64_t seed,
                                        size_t height,
                                        size_t width,
                                        double sigma,
                                        uint64_t noise_seed,
                                        struct FbsegPolygon **out);

/*
 # Safety
 `polygon` must be null or a handle from [`fbseg_polygon_generate`] that
 has not been freed.
 */
void fbseg_polygon_free(struct FbsegPolygon *polygon);

/*
 Copies the image (`len` must equal `height·width`).

 # Safety
 `polygon` must be a live handle and `out` must hold `len` doubles.
 */
enum FbsegStatus fbseg_polygon_image(const struct FbsegPolygon *polygon, double *out, size_t len);

/*
 Copies the mask (1 = polygon).

 # Safety
 `polygon` must be a live handle and `out` must hold `len` bytes.
 */
enum FbsegStatus fbseg_polygon_mask(const struct FbsegPolygon *polygon, uint8_t *out, size_t len);

/*
 Freshly initialised model. `feedback` selects the recurrent model;
 `decay` and `softmax` are its stabilisers, `static_decay` applies to the
 feedforward model only.

 # Safety
 `out` must be a valid pointer to writable storage for one handle.
 */
enum FbsegStatus fbseg_model_new(size_t height,
                                 size_t width,
                                 bool feedback,
                                 bool decay,
                                 bool softmax,
                                 bool static_decay,
                                 uint64_t seed,
                                 struct FbsegModel **out);

/*
 # Safety
 `path` must be a NUL-terminated string and `out` writable.
 */
enum FbsegStatus fbseg_model_load(const char *path, struct FbsegModel **out);

/*
 # Safety
 `model` must be a live handle and `path` a NUL-terminated string.
 */
enum FbsegStatus fbseg_model_save(const struct FbsegModel *model, const char *path);

/*
 # Safety
 `model` must be null or a live handle.
 */
void fbseg_model_free(struct FbsegModel *model);

/*
 Number of learned scalars.

 # Safety
 `model` must be a live handle and `out` writable.
 */
enum FbsegStatus fbseg_model_parameter_count(const struct FbsegModel *model, size_t *out);

/*
 Final-step segmentation of `image` into `mask_out` (1 = polygon).

 # Safety
 `image` must hold `height·width` doubles and `mask_out` as many bytes.
 */
enum FbsegStatus fbseg_model_predict(const struct FbsegModel *model,
                                     const double *image,
                                     size_t height,
                                     size_t width,
                                     uint8_t *mask_out);

/*
 Per-step `‖δ(t)‖₂` of a feedback model's trajectory; writes
 `min(T, len)` values and stores `T` in `written`.

 # Safety
 `image` must hold `height·width` doubles, `out` `len` doubles, and
 `written` must be writable.
 */
enum FbsegStatus fbseg_model_delta_norms(const struct FbsegModel *model,
                                         const double *image,
                                         size_t height,
                                         size_t width,
                                         double *out,
                                         size_t len,
                                         size_t *written);

/*
 Polygon-class f1 of two binary masks of `len` pixels.

 # Safety
 `pred` and `truth` must each hold `len` bytes; `out` must be writable.
 */
enum FbsegStatus fbseg_f1_score(const uint8_t *pred, const uint8_t *truth, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FBSEG_H */
