#ifndef LAYERMIX_H
#define LAYERMIX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result codes shared by every fallible function.
typedef enum LmStatus {
  LM_STATUS_OK = 0,
  LM_STATUS_NULL_POINTER = 1,
  // Invalid configuration or argument value.
  LM_STATUS_CONFIG = 2,
  // Shapes, kinds or class counts disagree.
  LM_STATUS_SHAPE = 3,
  // Malformed volume file.
  LM_STATUS_FORMAT = 4,
  LM_STATUS_IO = 5,
  // A Rust panic was caught at the boundary.
  LM_STATUS_PANIC = 6,
} LmStatus;

// Opaque slice-block shuffle plan.
typedef struct LmShufflePlan LmShufflePlan;

// Opaque grid of any kind (image, label, confidence, supervision).
typedef struct LmVolume LmVolume;

// Message of the last failure on this thread, or NULL. Valid until the next
// failing call on the same thread.
const char *lm_last_error(void);

// Image volume from `d*h*w` floats in (D, H, W) row-major order.
enum LmStatus lm_volume_new_image(size_t d,
                                  size_t h,
                                  size_t w,
                                  const float *data,
                                  struct LmVolume **out_volume);

// Label volume with class ids below `classes`.
enum LmStatus lm_volume_new_label(size_t d,
                                  size_t h,
                                  size_t w,
                                  size_t classes,
                                  const uint8_t *data,
                                  struct LmVolume **out_volume);

void lm_volume_free(struct LmVolume *volume);

enum LmStatus lm_volume_read(const char *path_utf8, struct LmVolume **out_volume);

// Atomic write in the volume file format.
enum LmStatus lm_volume_write(const struct LmVolume *volume, const char *path_utf8);

// Kind byte as stored in files: 0 image, 1 label, 2 confidence, 3 supervision.
enum LmStatus lm_volume_kind(const struct LmVolume *volume, uint8_t *out_kind);

// Writes D, H, W into `out_dims[0..3]` and the class count (0 unless labels).
enum LmStatus lm_volume_shape(const struct LmVolume *volume, size_t *out_dims, size_t *out_classes);

// Copies the voxel values of an image or confidence volume.
enum LmStatus lm_volume_copy_floats(const struct LmVolume *volume, float *buffer, size_t len);

// Copies the voxel values of a label or supervision volume.
enum LmStatus lm_volume_copy_bytes(const struct LmVolume *volume, uint8_t *buffer, size_t len);

// Samples a plan for `batch` volumes with extent `extent` along the axis.
// `axis` is 0 (D), 1 (H), 2 (W), or -1 to draw it from the seed as well.
enum LmStatus lm_shuffle_plan_sample(uint64_t seed,
                                     int32_t axis,
                                     size_t extent,
                                     size_t p,
                                     size_t batch,
                                     struct LmShufflePlan **out_plan);

// Plan from an explicit `rows × cols` table given column by column
// (`entries[j * rows + i] = R[i, j]`).
enum LmStatus lm_shuffle_plan_new(int32_t axis,
                                  size_t p,
                                  size_t rows,
                                  size_t cols,
                                  const size_t *entries,
                                  struct LmShufflePlan **out_plan);

void lm_shuffle_plan_free(struct LmShufflePlan *plan);

// Axis code (0 D, 1 H, 2 W), thickness p, batch size and block count.
enum LmStatus lm_shuffle_plan_info(const struct LmShufflePlan *plan,
                                   int32_t *out_axis,
                                   size_t *out_p,
                                   size_t *out_batch,
                                   size_t *out_blocks);

// `R[row, col]`, or `S[row, col]` of the inverse when `inverse` is nonzero.
enum LmStatus lm_shuffle_plan_entry(const struct LmShufflePlan *plan,
                                    size_t row,
                                    size_t col,
                                    int32_t inverse,
                                    size_t *out_entry);

// Shuffles `count` volumes of one kind; writes `count` new handles to `outputs`.
enum LmStatus lm_shuffle_apply(const struct LmShufflePlan *plan,
                               const struct LmVolume *const *inputs,
                               size_t count,
                               struct LmVolume **outputs);

// Undoes [`lm_shuffle_apply`] for the same plan.
enum LmStatus lm_shuffle_recover(const struct LmShufflePlan *plan,
                                 const struct LmVolume *const *inputs,
                                 size_t count,
                                 struct LmVolume **outputs);

// Dice of one class. `*out_defined` is 0 when the class is absent from both.
enum LmStatus lm_dice_score(const struct LmVolume *pred,
                            const struct LmVolume *reference,
                            uint8_t class_id,
                            double *out_value,
                            int32_t *out_defined);

// Symmetric average surface distance in voxels. `*out_defined` is 0 when
// either mask is empty.
enum LmStatus lm_average_surface_distance(const struct LmVolume *pred,
                                          const struct LmVolume *reference,
                                          uint8_t class_id,
                                          double *out_value,
                                          int32_t *out_defined);

// Consistency weight at `iter` for a ramp of `rampup_iters` up to `lambda_max`.
double lm_consistency_rampup(uint64_t iter, uint64_t rampup_iters, double lambda_max);

// Polynomial learning rate `base_lr · (1 − iter/max_iters)^power`.
double lm_poly_lr(uint64_t iter, double base_lr, uint64_t max_iters, double power);

#endif  /* LAYERMIX_H */
