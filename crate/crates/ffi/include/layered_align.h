#ifndef LAYERED_ALIGN_H
#define LAYERED_ALIGN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LaStatus {
  LA_STATUS_OK = 0,
  LA_STATUS_INVALID_INPUT = 1,
  LA_STATUS_CONFIG = 2,
  LA_STATUS_BUDGET = 3,
  LA_STATUS_INFEASIBLE = 4,
  LA_STATUS_SINGULAR = 5,
  LA_STATUS_IO = 6,
  LA_STATUS_NULL_POINTER = 7,
  LA_STATUS_PANIC = 8,
} LaStatus;

typedef enum LaTopologyKind {
  LA_TOPOLOGY_KIND_KX2 = 0,
  LA_TOPOLOGY_KIND_TWO_BY_K = 1,
  LA_TOPOLOGY_KIND_MAC = 2,
} LaTopologyKind;

typedef struct LaConfig LaConfig;

typedef struct LaRunResult LaRunResult;

typedef struct LaTopology LaTopology;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *la_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *la_version(void);

/**
 * Parses a JSON experiment config.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LaStatus la_config_from_json(const char *json, struct LaConfig **out);

/**
 * Overrides the seed and, when `threads > 0`, the worker count.
 *
 * # Safety
 * `config` must come from [`la_config_from_json`].
 */
enum LaStatus la_config_set_seed(struct LaConfig *config, uint64_t seed, uint32_t threads);

/**
 * # Safety
 * `config` must come from [`la_config_from_json`] or be null.
 */
void la_config_free(struct LaConfig *config);

/**
 * Runs the configured experiment.
 *
 * # Safety
 * `config` must be a live handle and `out` a valid pointer.
 */
enum LaStatus la_run(const struct LaConfig *config, struct LaRunResult **out);

/**
 * CSV text owned by `result`.
 *
 * # Safety
 * `result` must be a live handle or null.
 */
const char *la_result_csv(const struct LaRunResult *result);

/**
 * Summary JSON owned by `result`.
 *
 * # Safety
 * `result` must be a live handle or null.
 */
const char *la_result_summary_json(const struct LaRunResult *result);

/**
 * # Safety
 * `result` must come from [`la_run`] or be null.
 */
void la_result_free(struct LaRunResult *result);

/**
 * Samples a channel realization. `k` and `m` are ignored for the MAC.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum LaStatus la_topology_sample(enum LaTopologyKind kind,
                                 uint32_t k,
                                 uint32_t m,
                                 bool complex,
                                 uint64_t seed,
                                 double cond_ceiling,
                                 struct LaTopology **out);

/**
 * Rebuilds a topology from its JSON document.
 *
 * # Safety
 * `json` must be NUL-terminated and `out` a valid pointer.
 */
enum LaStatus la_topology_from_json(const char *json, struct LaTopology **out);

/**
 * JSON document of the topology; release with [`la_string_free`].
 *
 * # Safety
 * `topology` must be a live handle and `out` a valid pointer.
 */
enum LaStatus la_topology_to_json(const struct LaTopology *topology, char **out);

/**
 * # Safety
 * `topology` must come from this library or be null.
 */
void la_topology_free(struct LaTopology *topology);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void la_string_free(char *s);

/**
 * Alignment check with identity interference bases (K×2) or the designed
 * ρ/ζ directions (2×K). Writes the largest constraint residual.
 *
 * # Safety
 * `topology` must be a live handle and `max_residual` a valid pointer.
 */
enum LaStatus la_alignment_residual(const struct LaTopology *topology,
                                    double tol,
                                    double *max_residual);

/**
 * Whether the `(2Q+1)²` values `a·u + b·v` are pairwise more than `tol` apart.
 *
 * # Safety
 * `distinct` must be a valid pointer.
 */
enum LaStatus la_unique_decomposition(double a, double b, uint32_t q, double tol, bool *distinct);

/**
 * Smallest distance to the integers of the real `m×n` linear forms
 * (`entries` row-major) over nonzero `q` with `|q|∞ ≤ big_n`. `hybrid`
 * selects a common integer shift `p` for all forms.
 *
 * # Safety
 * `entries` must point to `m*n` doubles and `error` be a valid pointer.
 */
enum LaStatus la_min_form_distance(const double *entries,
                                   uint32_t m,
                                   uint32_t n,
                                   uint32_t big_n,
                                   bool hybrid,
                                   double *error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LAYERED_ALIGN_H */
