#ifndef COMPETENCE_NAV_H
#define COMPETENCE_NAV_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CnStatus {
  CN_STATUS_OK = 0,
  CN_STATUS_NULL_POINTER = 1,
  CN_STATUS_INVALID_UTF8 = 2,
  CN_STATUS_PARSE = 3,
  CN_STATUS_INVALID = 4,
  CN_STATUS_UNKNOWN_NODE = 5,
  CN_STATUS_UNKNOWN_EDGE = 6,
  CN_STATUS_NOT_CONVERGED = 7,
  CN_STATUS_UNREACHABLE = 8,
  CN_STATUS_IO = 9,
  CN_STATUS_BUFFER_TOO_SMALL = 10,
  CN_STATUS_PANIC = 99,
} CnStatus;

/**
 * Per-edge failure belief under the standard three-class taxonomy.
 */
typedef struct CnBelief CnBelief;

/**
 * Topological map.
 */
typedef struct CnMap CnMap;

/**
 * Streaming competence predictor.
 */
typedef struct CnPredictor CnPredictor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next library call on the same thread.
 */
const char *cn_last_error(void);

/**
 * Number of outcome classes (failure classes plus success) of the
 * standard taxonomy.
 */
size_t cn_class_count(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library.
 */
void cn_string_free(char *s);

/**
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
enum CnStatus cn_map_from_json(const char *json, struct CnMap **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum CnStatus cn_map_load(const char *path, struct CnMap **out);

/**
 * # Safety
 * `map` must be NULL or a handle from `cn_map_*` not yet freed.
 */
void cn_map_free(struct CnMap *map);

/**
 * # Safety
 * `map` must be a live handle or NULL (returns 0).
 */
size_t cn_map_node_count(const struct CnMap *map);

/**
 * # Safety
 * `map` must be a live handle or NULL (returns 0).
 */
size_t cn_map_edge_count(const struct CnMap *map);

/**
 * Belief with every edge and failure class at prior probability `epsilon`.
 *
 * # Safety
 * `map` must be a live handle and `out` writable.
 */
enum CnStatus cn_belief_new(const struct CnMap *map, double epsilon, struct CnBelief **out);

/**
 * # Safety
 * `belief` must be NULL or a live handle.
 */
void cn_belief_free(struct CnBelief *belief);

/**
 * Records a supervisor-reported failure of `class` on `src -> dst`.
 *
 * # Safety
 * `belief` must be a live handle.
 */
enum CnStatus cn_belief_intervention(struct CnBelief *belief,
                                     uint32_t src,
                                     uint32_t dst,
                                     size_t class_,
                                     double delta);

/**
 * Folds predicted per-failure-class probabilities into the belief of
 * `src -> dst`. `probs` holds one value per failure class.
 *
 * # Safety
 * `belief` must be a live handle and `probs` valid for `len` reads.
 */
enum CnStatus cn_belief_perception(struct CnBelief *belief,
                                   uint32_t src,
                                   uint32_t dst,
                                   const double *probs,
                                   size_t len,
                                   double delta);

/**
 * # Safety
 * `belief` must be a live handle and `out` writable.
 */
enum CnStatus cn_belief_prob(const struct CnBelief *belief,
                             uint32_t src,
                             uint32_t dst,
                             size_t class_,
                             double *out);

/**
 * Writes the outcome distribution of `src -> dst` (failure classes then
 * success, `cn_class_count()` values) into `out`.
 *
 * # Safety
 * `belief` must be a live handle and `out` valid for `capacity` writes.
 */
enum CnStatus cn_belief_snapshot(const struct CnBelief *belief,
                                 uint32_t src,
                                 uint32_t dst,
                                 double *out,
                                 size_t capacity);

/**
 * Plans to `goal` under the current belief and reports the first edge to
 * take from `from` together with the expected cost-to-go. At the goal the
 * next node is the goal itself and the cost is 0.
 *
 * # Safety
 * `map` and `belief` must be live handles built from the same map;
 * `next` and `value` writable.
 */
enum CnStatus cn_plan_next(const struct CnMap *map,
                           const struct CnBelief *belief,
                           uint32_t from,
                           uint32_t goal,
                           double recovery_cost,
                           double catastrophic_penalty,
                           uint32_t *next,
                           double *value);

/**
 * Predictor with default settings when `config_json` is NULL, otherwise
 * with the settings of that JSON object (missing fields take defaults).
 *
 * # Safety
 * `config_json` must be NULL or a NUL-terminated string; `out` writable.
 */
enum CnStatus cn_predictor_new(const char *config_json, struct CnPredictor **out);

/**
 * # Safety
 * `predictor` must be NULL or a live handle.
 */
void cn_predictor_free(struct CnPredictor *predictor);

/**
 * # Safety
 * `predictor` must be NULL or a live handle.
 */
void cn_predictor_reset(struct CnPredictor *predictor);

/**
 * Feeds one frame, given as a JSON object with `frame_index`,
 * `global_probs` and optional `detections`. Writes the per-failure-class
 * consensus into `probs` and whether it crossed the trigger threshold.
 *
 * # Safety
 * `predictor` must be a live handle, `frame_json` a NUL-terminated string,
 * `probs` valid for `capacity` writes and `triggered` writable.
 */
enum CnStatus cn_predictor_ingest(struct CnPredictor *predictor,
                                  const char *frame_json,
                                  double *probs,
                                  size_t capacity,
                                  bool *triggered);

/**
 * Runs one agent through a deployment and returns the episode log as JSON
 * lines. `config_json` is an experiment configuration (NULL for defaults)
 * supplying the seeds, task count and simulator settings; sensor fidelity
 * comes from the environment.
 *
 * # Safety
 * `env_json` and `agent` must be NUL-terminated strings, `config_json`
 * NULL or one, and `out` writable. Free the result with `cn_string_free`.
 */
enum CnStatus cn_run_deployment(const char *env_json,
                                const char *agent,
                                const char *config_json,
                                char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COMPETENCE_NAV_H */
