#ifndef MAOL_H
#define MAOL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every entry point.
typedef enum MaolStatus {
  MAOL_STATUS_OK = 0,
  MAOL_STATUS_NULL_POINTER = 1,
  MAOL_STATUS_INVALID_ARGUMENT = 2,
  MAOL_STATUS_SHAPE = 3,
  MAOL_STATUS_FORMAT = 4,
  MAOL_STATUS_IO = 5,
  MAOL_STATUS_BARRIER_VIOLATION = 6,
  MAOL_STATUS_DEGENERATE_STEP = 7,
  MAOL_STATUS_TRAINING_SET_INCOMPLETE = 8,
  MAOL_STATUS_NON_FINITE = 9,
  MAOL_STATUS_ADJOINT_MISMATCH = 10,
  MAOL_STATUS_PANIC = 11,
} MaolStatus;

// Opaque learned separable operator together with its provenance.
typedef struct MaolOperator MaolOperator;

// Opaque order-3 volume.
typedef struct MaolVolume MaolVolume;

// Settings for [`maol_learn`]; obtain defaults from
// [`maol_learn_options_default`].
typedef struct MaolLearnOptions {
  // Training patch size; also the column count of each factor.
  size_t patch[3];
  // Row count of each factor.
  size_t rows[3];
  size_t train_count;
  double nu;
  double kappa;
  double mu;
  double flat_tol;
  size_t max_iters;
  double grad_tol;
  uint64_t seed;
} MaolLearnOptions;

// Settings for [`maol_denoise`] and [`maol_cs`].
typedef struct MaolReconOptions {
  double lambda;
  // Sparsity parameter; zero or negative uses the operator's learning ν.
  double nu;
  size_t max_iters;
  double grad_tol;
  size_t stride;
} MaolReconOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or an empty string.
// The pointer stays valid until the next library call on this thread.
const char *maol_last_error(void);

// Static description of a status code.
const char *maol_status_name(enum MaolStatus status);

// Copies `d0·d1·d2` values from `data` into a new volume.
enum MaolStatus maol_volume_new(size_t d0,
                                size_t d1,
                                size_t d2,
                                const double *data,
                                struct MaolVolume **out);

enum MaolStatus maol_volume_read(const char *path, struct MaolVolume **out);

enum MaolStatus maol_volume_write(const struct MaolVolume *v, const char *path);

// Releases a volume; NULL is ignored.
void maol_volume_free(struct MaolVolume *v);

// Writes the three dimensions into `dims`.
enum MaolStatus maol_volume_dims(const struct MaolVolume *v, size_t *dims);

// Borrows the voxel data. The pointer stays valid until the volume is freed.
enum MaolStatus maol_volume_data(const struct MaolVolume *v, const double **data, size_t *len);

// Synthetic piecewise-smooth phantom in `[0, 255]`.
enum MaolStatus maol_phantom(size_t d0,
                             size_t d1,
                             size_t d2,
                             uint64_t seed,
                             struct MaolVolume **out);

// Copy of `v` with i.i.d. Gaussian noise of standard deviation `sigma`.
enum MaolStatus maol_awgn(const struct MaolVolume *v,
                          double sigma,
                          uint64_t seed,
                          struct MaolVolume **out);

enum MaolStatus maol_operator_read(const char *path, struct MaolOperator **out);

enum MaolStatus maol_operator_write(const struct MaolOperator *op, const char *path);

// Releases an operator; NULL is ignored.
void maol_operator_free(struct MaolOperator *op);

// Number of factors.
enum MaolStatus maol_operator_order(const struct MaolOperator *op, size_t *order);

// Shape `rows × cols` of factor `mode` (0-based).
enum MaolStatus maol_operator_shape(const struct MaolOperator *op,
                                    size_t mode,
                                    size_t *rows,
                                    size_t *cols);

// Defaults: 5×5×5 patches, 6×5 factors, T = 20000, ν = 1000,
// κ = 500, μ = 0.5.
struct MaolLearnOptions maol_learn_options_default(void);

// Defaults for reconstruction with the given λ.
struct MaolReconOptions maol_recon_options_default(double lambda);

// Draws a training set from `train` and learns one factor per mode.
enum MaolStatus maol_learn(const struct MaolVolume *train,
                           const struct MaolLearnOptions *opts,
                           struct MaolOperator **out);

// Denoises `noisy` (identity measurements) with the learned prior.
enum MaolStatus maol_denoise(const struct MaolVolume *noisy,
                             const struct MaolOperator *op,
                             const struct MaolReconOptions *opts,
                             struct MaolVolume **out);

// Simulates radially undersampled Fourier measurements of `clean` at
// `rate` and reconstructs them. `zero_filled` and `achieved_rate` may be
// NULL.
enum MaolStatus maol_cs(const struct MaolVolume *clean,
                        const struct MaolOperator *op,
                        double rate,
                        const struct MaolReconOptions *opts,
                        struct MaolVolume **out,
                        struct MaolVolume **zero_filled,
                        double *achieved_rate);

// PSNR in dB with peak 255; identical volumes give `+inf`.
enum MaolStatus maol_psnr(const struct MaolVolume *reference,
                          const struct MaolVolume *test,
                          double *out);

// Mean SSIM over transversal slices (slices must be at least 11×11).
enum MaolStatus maol_mssim(const struct MaolVolume *reference,
                           const struct MaolVolume *test,
                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MAOL_H */
