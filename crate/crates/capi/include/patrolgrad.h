/* C interface to the patrolgrad persistent-monitoring toolkit. */

#ifndef PATROLGRAD_H
#define PATROLGRAD_H

/* Generated by cbindgen from patrolgrad-capi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible entry point.
typedef enum PgStatus {
  PG_STATUS_OK = 0,
  // A required pointer argument was null.
  PG_STATUS_NULL_ARGUMENT = 1,
  // Configuration parse or validation failure.
  PG_STATUS_CONFIG = 2,
  // Numerical diagnostic (singular guard or internal inconsistency).
  PG_STATUS_NUMERIC = 3,
  // Resource budget exceeded.
  PG_STATUS_BUDGET = 4,
  // A string argument was not valid UTF-8.
  PG_STATUS_UTF8 = 5,
  // Index out of range.
  PG_STATUS_RANGE = 6,
  // Unexpected internal failure.
  PG_STATUS_INTERNAL = 7,
} PgStatus;

// Opaque projected-gradient-descent record.
typedef struct PgDescent PgDescent;

// Opaque cost gradient with its co-simulated cost.
typedef struct PgGradient PgGradient;

// Opaque mission description (targets, graph, agents, thresholds).
typedef struct PgMission PgMission;

// Opaque simulation result (cost, event log, trajectories, visit orders).
typedef struct PgSimResult PgSimResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread. Valid until
// the next failing call; never null.
const char *pg_last_error_message(void);

// Library version as a static string.
const char *pg_version(void);

// Release a string returned by this library.
//
// # Safety
// `s` must have been returned by a `pg_*` function documented as
// caller-owned, and must not be used afterwards.
void pg_string_free(char *s);

// Parse a mission configuration document (TOML text).
//
// # Safety
// `text` must be a valid NUL-terminated string and `out` a valid pointer.
enum PgStatus pg_mission_load(const char *text, struct PgMission **out);

// Load a mission configuration file from disk.
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` a valid pointer.
enum PgStatus pg_mission_load_file(const char *path, struct PgMission **out);

// # Safety
// `mission` must come from `pg_mission_load*` and not be used afterwards.
void pg_mission_free(struct PgMission *mission);

// # Safety
// `mission` must be a live handle.
size_t pg_mission_node_count(const struct PgMission *mission);

// # Safety
// `mission` must be a live handle.
size_t pg_mission_agent_count(const struct PgMission *mission);

// Read threshold entry (p, q) of agent z; +inf marks a non-edge.
//
// # Safety
// `mission` must be a live handle and `out` a valid pointer.
enum PgStatus pg_mission_get_threshold(const struct PgMission *mission,
                                       size_t p,
                                       size_t q,
                                       size_t z,
                                       double *out);

// Overwrite threshold entry (p, q) of agent z. Only finite entries
// (diagonal and existing edges) may be set, and values must be >= 0.
//
// # Safety
// `mission` must be a live handle with no concurrent readers.
enum PgStatus pg_mission_set_threshold(struct PgMission *mission,
                                       size_t p,
                                       size_t q,
                                       size_t z,
                                       double value);

// Run one exact event-driven simulation under the mission's thresholds.
//
// # Safety
// `mission` must be a live handle and `out` a valid pointer.
enum PgStatus pg_simulate(const struct PgMission *mission, struct PgSimResult **out);

// # Safety
// `result` must come from `pg_simulate` and not be used afterwards.
void pg_sim_result_free(struct PgSimResult *result);

// Average uncertainty J of the run.
//
// # Safety
// `result` must be a live handle.
double pg_sim_result_cost(const struct PgSimResult *result);

// # Safety
// `result` must be a live handle.
size_t pg_sim_result_event_count(const struct PgSimResult *result);

// Number of nodes agent `agent` visited (start node included).
//
// # Safety
// `result` must be a live handle.
size_t pg_sim_result_visit_count(const struct PgSimResult *result, size_t agent);

// Zero-based node id of the k-th visit of `agent`.
//
// # Safety
// `result` must be a live handle and `out` a valid pointer.
enum PgStatus pg_sim_result_visit(const struct PgSimResult *result,
                                  size_t agent,
                                  size_t k,
                                  size_t *out);

// Event log rendered as CSV; caller owns the string (`pg_string_free`).
//
// # Safety
// `result` must be a live handle.
char *pg_sim_result_events_csv(const struct PgSimResult *result);

// Event-driven gradient of the cost with respect to every threshold entry.
//
// # Safety
// `mission` must be a live handle and `out` a valid pointer.
enum PgStatus pg_grad_j(const struct PgMission *mission, struct PgGradient **out);

// # Safety
// `grad` must come from `pg_grad_j` and not be used afterwards.
void pg_gradient_free(struct PgGradient *grad);

// # Safety
// `grad` must be a live handle.
double pg_gradient_cost(const struct PgGradient *grad);

// # Safety
// `grad` must be a live handle.
double pg_gradient_norm(const struct PgGradient *grad);

// dJ/dtheta at entry (p, q) of agent z (zero for non-edges).
//
// # Safety
// `grad` must be a live handle and `out` a valid pointer.
enum PgStatus pg_gradient_get(const struct PgGradient *grad,
                              size_t p,
                              size_t q,
                              size_t z,
                              double *out);

// Run projected gradient descent from the mission's thresholds.
// `tol < 0` disables the early-stop tolerance.
//
// # Safety
// `mission` must be a live handle and `out` a valid pointer.
enum PgStatus pg_optimize(const struct PgMission *mission,
                          size_t iterations,
                          double beta0,
                          double gamma,
                          double tol,
                          struct PgDescent **out);

// # Safety
// `descent` must come from `pg_optimize` and not be used afterwards.
void pg_descent_free(struct PgDescent *descent);

// Number of recorded iterates (iterations + 1 without early stop).
//
// # Safety
// `descent` must be a live handle.
size_t pg_descent_len(const struct PgDescent *descent);

// Cost at iterate l.
//
// # Safety
// `descent` must be a live handle and `out` a valid pointer.
enum PgStatus pg_descent_cost_at(const struct PgDescent *descent, size_t l, double *out);

// Final threshold entry (p, q) of agent z after descent.
//
// # Safety
// `descent` must be a live handle and `out` a valid pointer.
enum PgStatus pg_descent_final_theta(const struct PgDescent *descent,
                                     size_t p,
                                     size_t q,
                                     size_t z,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PATROLGRAD_H */
