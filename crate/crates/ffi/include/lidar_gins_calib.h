#ifndef LIDAR_GINS_CALIB_H
#define LIDAR_GINS_CALIB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LgcStatus {
  LGC_STATUS_OK = 0,
  LGC_STATUS_NULL_ARGUMENT = 1,
  LGC_STATUS_CONFIG = 2,
  LGC_STATUS_DATASET = 3,
  LGC_STATUS_NUMERICAL = 4,
  LGC_STATUS_INVALID_ARGUMENT = 5,
  LGC_STATUS_PANIC = 6,
} LgcStatus;

typedef struct LgcConfig LgcConfig;

typedef struct LgcDataset LgcDataset;

typedef struct LgcReport LgcReport;

// Rigid transform as translation and unit quaternion `(x, y, z, w)`.
typedef struct LgcPose {
  double translation[3];
  double quaternion[4];
} LgcPose;

typedef struct LgcMapMetrics {
  double mme;
  double mpv;
  size_t n_points_evaluated;
  size_t n_points;
  double radius;
} LgcMapMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the NUL.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t lgc_last_error_message(char *buf, size_t len);

// Writes the default two-sensor synthetic dataset to `out_dir`.
//
// # Safety
// `out_dir` must be a valid NUL-terminated string.
enum LgcStatus lgc_simulate(uint64_t seed, bool zero_noise, const char *out_dir);

// Generates the default two-sensor synthetic dataset in memory.
//
// # Safety
// `out` must be valid for a pointer write.
enum LgcStatus lgc_dataset_simulate(uint64_t seed, bool zero_noise, struct LgcDataset **out);

// Loads a dataset directory.
//
// # Safety
// `dir` must be a valid NUL-terminated string and `out` valid for a pointer write.
enum LgcStatus lgc_dataset_load(const char *dir, struct LgcDataset **out);

// Number of sensors, 0 for a null handle.
//
// # Safety
// `ds` must be null or a live handle.
size_t lgc_dataset_sensor_count(const struct LgcDataset *ds);

// # Safety
// `ds` must be null or a handle from this library, not yet freed.
void lgc_dataset_free(struct LgcDataset *ds);

// Default pipeline configuration.
struct LgcConfig *lgc_config_new(void);

// Sets one `key = value` entry.
//
// # Safety
// `cfg` must be a live handle; `key` and `value` valid NUL-terminated strings.
enum LgcStatus lgc_config_set(struct LgcConfig *cfg, const char *key, const char *value);

// # Safety
// `cfg` must be null or a handle from this library, not yet freed.
void lgc_config_free(struct LgcConfig *cfg);

// Runs the pipeline on a dataset.
//
// # Safety
// `ds` and `cfg` must be live handles and `out` valid for a pointer write.
enum LgcStatus lgc_calibrate(const struct LgcDataset *ds,
                             const struct LgcConfig *cfg,
                             struct LgcReport **out);

// # Safety
// `report` must be null or a live handle.
size_t lgc_report_sensor_count(const struct LgcReport *report);

// Final GINS-from-LiDAR extrinsic of sensor `index`.
//
// # Safety
// `report` must be a live handle and `out` valid for a write.
enum LgcStatus lgc_report_extrinsic(const struct LgcReport *report,
                                    size_t index,
                                    struct LgcPose *out);

// Key-value report text; release with [`lgc_string_free`]. Null on a null handle.
//
// # Safety
// `report` must be null or a live handle.
char *lgc_report_key_values(const struct LgcReport *report);

// # Safety
// `report` must be null or a handle from this library, not yet freed.
void lgc_report_free(struct LgcReport *report);

// # Safety
// `s` must be null or a string returned by this library, not yet freed.
void lgc_string_free(char *s);

// MME and MPV of `n` points stored as `x y z` triples.
//
// # Safety
// `xyz` must be valid for `3 * n` reads and `out` for a write.
enum LgcStatus lgc_map_metrics(const double *xyz,
                               size_t n,
                               double radius,
                               struct LgcMapMetrics *out);

// Largest finite-difference Jacobian error over every factor family.
//
// # Safety
// `max_error` must be valid for a write.
enum LgcStatus lgc_jacobian_check(size_t configurations, uint64_t seed, double *max_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LIDAR_GINS_CALIB_H */
