#ifndef HIKEDIM_H
#define HIKEDIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum HkdBackend {
  HKD_BACKEND_DENSE = 0,
  HKD_BACKEND_LANCZOS_DENSE = 1,
  HKD_BACKEND_LANCZOS_HMATRIX = 2,
} HkdBackend;

// Result of every fallible call.
typedef enum HkdStatus {
  HKD_STATUS_OK = 0,
  HKD_STATUS_INVALID_ARGUMENT = 1,
  HKD_STATUS_FORMAT = 2,
  HKD_STATUS_MALFORMED = 3,
  HKD_STATUS_DEGENERATE_INPUT = 4,
  HKD_STATUS_DATA = 5,
  HKD_STATUS_NUMERICAL = 6,
  HKD_STATUS_IO = 7,
  HKD_STATUS_NULL_POINTER = 8,
  HKD_STATUS_PANIC = 9,
} HkdStatus;

// Diffusion-map result handle.
typedef struct HkdDiffusionModel HkdDiffusionModel;

// Compressed kernel handle.
typedef struct HkdHMatrix HkdHMatrix;

// Point cloud handle.
typedef struct HkdPointCloud HkdPointCloud;

// Compression parameters.
typedef struct HkdHParams {
  size_t leaf_size_max;
  size_t rank_max;
  double tol;
  size_t neighbors;
  size_t dense_limit;
} HkdHParams;

// Diffusion-map parameters. `sigma <= 0` selects the automatic bandwidth.
typedef struct HkdDiffusionParams {
  double sigma;
  double alpha;
  uint32_t t;
  size_t k;
  double delta;
  enum HkdBackend backend;
  struct HkdHParams hmatrix;
  double eig_tol;
  size_t max_restarts;
  uint64_t seed;
} HkdDiffusionParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *hkd_version(void);

// Message of the last failure on this thread. Valid until the next failing call.
const char *hkd_last_error_message(void);

struct HkdHParams hkd_hparams_default(void);

struct HkdDiffusionParams hkd_diffusion_params_default(void);

// Copies `n * dim` row-major coordinates into a new cloud.
enum HkdStatus hkd_pointcloud_new(const double *data,
                                  size_t n,
                                  size_t dim,
                                  struct HkdPointCloud **out);

enum HkdStatus hkd_pointcloud_scurve(size_t n,
                                     double noise,
                                     uint64_t seed,
                                     struct HkdPointCloud **out);

enum HkdStatus hkd_pointcloud_swiss_roll(size_t n,
                                         double noise,
                                         uint64_t seed,
                                         struct HkdPointCloud **out);

enum HkdStatus hkd_pointcloud_uniform(size_t n,
                                      size_t dim,
                                      uint64_t seed,
                                      struct HkdPointCloud **out);

// Loads CSV or raw-f64 points; the format follows the file extension.
enum HkdStatus hkd_pointcloud_load(const char *path, int skip_header, struct HkdPointCloud **out);

enum HkdStatus hkd_pointcloud_save(const struct HkdPointCloud *pc, const char *path);

// Number of points, 0 for a null handle.
size_t hkd_pointcloud_n(const struct HkdPointCloud *pc);

size_t hkd_pointcloud_dim(const struct HkdPointCloud *pc);

// Copies the row-major coordinates into `out` (at least `n * dim` values).
enum HkdStatus hkd_pointcloud_data(const struct HkdPointCloud *pc, double *out, size_t len);

void hkd_pointcloud_free(struct HkdPointCloud *pc);

// Median pairwise distance over a seeded subsample of `sample` points.
enum HkdStatus hkd_median_sigma(const struct HkdPointCloud *pc,
                                size_t sample,
                                uint64_t seed,
                                double *out);

// Compresses the Gaussian kernel of `pc`. `sigma <= 0` picks the median
// distance. `est_rel_error` may be null.
enum HkdStatus hkd_hmatrix_compress(const struct HkdPointCloud *pc,
                                    double sigma,
                                    const struct HkdHParams *params,
                                    uint64_t seed,
                                    struct HkdHMatrix **out,
                                    double *est_rel_error);

enum HkdStatus hkd_hmatrix_load(const char *path, struct HkdHMatrix **out);

enum HkdStatus hkd_hmatrix_save(const struct HkdHMatrix *h, const char *path);

size_t hkd_hmatrix_n(const struct HkdHMatrix *h);

size_t hkd_hmatrix_stored_scalars(const struct HkdHMatrix *h);

// `y = K x` for vectors of length `n`.
enum HkdStatus hkd_hmatrix_matvec(const struct HkdHMatrix *h, const double *x, double *y, size_t n);

// `Y = K X` for column-major `n × m` blocks.
enum HkdStatus hkd_hmatrix_matmat(const struct HkdHMatrix *h,
                                  const double *x,
                                  double *y,
                                  size_t n,
                                  size_t m);

void hkd_hmatrix_free(struct HkdHMatrix *h);

// Runs the diffusion-map pipeline. A run whose eigensolver did not converge
// still returns `Ok`; check `hkd_model_converged`.
enum HkdStatus hkd_diffusion_map(const struct HkdPointCloud *pc,
                                 const struct HkdDiffusionParams *params,
                                 struct HkdDiffusionModel **out);

// Points in the model, 0 for a null handle.
size_t hkd_model_n(const struct HkdDiffusionModel *m);

// Eigenpairs held (may be fewer than requested without convergence).
size_t hkd_model_k(const struct HkdDiffusionModel *m);

int hkd_model_converged(const struct HkdDiffusionModel *m);

size_t hkd_model_intrinsic_dimension(const struct HkdDiffusionModel *m);

double hkd_model_sigma(const struct HkdDiffusionModel *m);

// Copies the `k` eigenvalues, descending.
enum HkdStatus hkd_model_eigenvalues(const struct HkdDiffusionModel *m, double *out, size_t len);

// Copies the column-major `n × k` eigenvectors.
enum HkdStatus hkd_model_eigenvectors(const struct HkdDiffusionModel *m, double *out, size_t len);

// Copies the column-major `n × (k - 1)` embedding.
enum HkdStatus hkd_model_coords(const struct HkdDiffusionModel *m, double *out, size_t len);

// Writes the CSV and JSON exports next to `prefix`.
enum HkdStatus hkd_model_export(const struct HkdDiffusionModel *m, const char *prefix);

void hkd_model_free(struct HkdDiffusionModel *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HIKEDIM_H */
