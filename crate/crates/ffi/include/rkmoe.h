#ifndef RKMOE_H
#define RKMOE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum RkStatus {
  RK_STATUS_OK = 0,
  RK_STATUS_NULL_POINTER = 1,
  RK_STATUS_INVALID_ARGUMENT = 2,
  RK_STATUS_SHAPE = 3,
  RK_STATUS_NON_FINITE = 4,
  RK_STATUS_DIVERGED = 5,
  RK_STATUS_SINGULAR = 6,
  RK_STATUS_CONFIG = 7,
  RK_STATUS_FORMAT = 8,
  RK_STATUS_IO = 9,
  RK_STATUS_PANIC = 10,
} RkStatus;

// A fitted coarse-prior network.
typedef struct RkKan RkKan;

// A dense radiomap (estimate or ground truth).
typedef struct RkMap RkMap;

// Sparse observations of a scene.
typedef struct RkObservations RkObservations;

// A scene together with its ground-truth radiomap.
typedef struct RkScene RkScene;

// Message of the last failed call on this thread (empty if none). The
// pointer stays valid until the next failing call on this thread.
const char *rk_last_error(void);

// Library version as a static NUL-terminated string.
const char *rk_version(void);

// Generates a scene of `height × width` cells with `bands` frequencies
// taken from `frequencies_hz`, using default building and propagation
// settings.
//
// # Safety
// `frequencies_hz` must point to `bands` doubles; `out` must be writable.
enum RkStatus rk_scene_generate(size_t height,
                                size_t width,
                                const double *frequencies_hz,
                                size_t bands,
                                uint64_t seed,
                                struct RkScene **out);

// Loads an RKM1 file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum RkStatus rk_scene_load(const char *path, struct RkScene **out);

// Writes an RKM1 file.
//
// # Safety
// `scene` must be a live handle and `path` a NUL-terminated string.
enum RkStatus rk_scene_save(const struct RkScene *scene, const char *path);

// Grid size and band count of a scene.
//
// # Safety
// `scene` must be a live handle; output pointers must be writable.
enum RkStatus rk_scene_dims(const struct RkScene *scene,
                            size_t *height,
                            size_t *width,
                            size_t *bands);

// Copy of the ground-truth radiomap.
//
// # Safety
// `scene` must be a live handle; `out` must be writable.
enum RkStatus rk_scene_truth(const struct RkScene *scene, struct RkMap **out);

// # Safety
// `scene` must be null or a handle not yet freed.
void rk_scene_free(struct RkScene *scene);

// Samples `ratio · H · W` cells (at least one) of the ground truth.
//
// # Safety
// `scene` must be a live handle; `out` must be writable.
enum RkStatus rk_observations_sample(const struct RkScene *scene,
                                     double ratio,
                                     uint64_t seed,
                                     struct RkObservations **out);

// Observations per band.
//
// # Safety
// `obs` must be null or a live handle.
size_t rk_observations_count(const struct RkObservations *obs);

// # Safety
// `obs` must be null or a handle not yet freed.
void rk_observations_free(struct RkObservations *obs);

// Fits the coarse-prior network with default hyperparameters; `epochs`
// of zero keeps the default epoch count.
//
// # Safety
// `scene` and `obs` must be live handles; `out` must be writable.
enum RkStatus rk_kan_fit(const struct RkScene *scene,
                         const struct RkObservations *obs,
                         size_t epochs,
                         uint64_t seed,
                         struct RkKan **out);

// Dense coarse prior of a fitted network over a scene.
//
// # Safety
// `kan` and `scene` must be live handles; `out` must be writable.
enum RkStatus rk_kan_coarse(const struct RkKan *kan,
                            const struct RkScene *scene,
                            struct RkMap **out);

// Saves a fitted network as an RKCK checkpoint.
//
// # Safety
// `kan` must be a live handle and `path` a NUL-terminated string.
enum RkStatus rk_kan_save(const struct RkKan *kan, const char *path);

// # Safety
// `kan` must be null or a handle not yet freed.
void rk_kan_free(struct RkKan *kan);

// End-to-end estimate: fits the coarse prior, then refines it with the
// refiner checkpoint at `refiner_path`, or with a freshly initialized
// refiner (whose output equals the coarse prior) when the path is null.
//
// # Safety
// `scene` and `obs` must be live handles, `refiner_path` null or a
// NUL-terminated string, and `out` writable.
enum RkStatus rk_estimate(const struct RkScene *scene,
                          const struct RkObservations *obs,
                          const char *refiner_path,
                          uint64_t seed,
                          struct RkMap **out);

// Inverse-distance-weighted (power 2) interpolation of the observations.
//
// # Safety
// `obs` must be a live handle; `out` must be writable.
enum RkStatus rk_idw(const struct RkObservations *obs, struct RkMap **out);

// Grid size and band count of a map.
//
// # Safety
// `map` must be a live handle; output pointers must be writable.
enum RkStatus rk_map_dims(const struct RkMap *map, size_t *height, size_t *width, size_t *bands);

// Copies one band (row-major, `H·W` values in `[0, 1]`) into `buffer`,
// which must hold `len ≥ H·W` doubles.
//
// # Safety
// `map` must be a live handle and `buffer` writable for `len` doubles.
enum RkStatus rk_map_copy_band(const struct RkMap *map, size_t band, double *buffer, size_t len);

// Band-averaged NMSE and MSE of `estimate` against `truth`.
//
// # Safety
// Both maps must be live handles; output pointers must be writable.
enum RkStatus rk_metrics(const struct RkMap *estimate,
                         const struct RkMap *truth,
                         double *nmse,
                         double *mse);

// # Safety
// `map` must be null or a handle not yet freed.
void rk_map_free(struct RkMap *map);

#endif  /* RKMOE_H */
