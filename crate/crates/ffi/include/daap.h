#ifndef DAAP_H
#define DAAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum DaapStatus {
  DAAP_STATUS_OK = 0,
  DAAP_STATUS_NULL_POINTER = 1,
  DAAP_STATUS_INVALID_UTF8 = 2,
  DAAP_STATUS_INVALID_ARGUMENT = 3,
  DAAP_STATUS_DATA_ERROR = 4,
  DAAP_STATUS_IO_ERROR = 5,
  DAAP_STATUS_OUT_OF_RANGE = 6,
  DAAP_STATUS_PANIC = 7,
} DaapStatus;

// Simulated welfare metrics.
typedef struct DaapReport DaapReport;

// A taxi scenario.
typedef struct DaapScenario DaapScenario;

// Solved policies with their population.
typedef struct DaapSolution DaapSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *daap_last_error(void);

// Library version as a static NUL-terminated string.
const char *daap_version(void);

// Generates a scenario from generator parameters given as JSON (NULL for
// defaults).
//
// # Safety
// `params_json` is NULL or a NUL-terminated string; `out` is writable.
enum DaapStatus daap_scenario_generate(const char *params_json, struct DaapScenario **out);

// Loads a scenario file.
//
// # Safety
// `path` is a NUL-terminated string; `out` is writable.
enum DaapStatus daap_scenario_load(const char *path, struct DaapScenario **out);

// Writes a scenario file.
//
// # Safety
// `scenario` is a live handle; `path` is a NUL-terminated string.
enum DaapStatus daap_scenario_save(const struct DaapScenario *scenario, const char *path);

// # Safety
// `scenario` is a live handle; `zones` and `horizon` are writable.
enum DaapStatus daap_scenario_shape(const struct DaapScenario *scenario,
                                    size_t *zones,
                                    size_t *horizon,
                                    size_t *fleet_size);

// Releases a scenario. NULL is ignored.
//
// # Safety
// `scenario` is NULL or a handle not yet freed.
void daap_scenario_free(struct DaapScenario *scenario);

// Solves the scenario with SoFA. `spec_json` is an experiment spec (its
// scenario field is ignored) or NULL for a fully rational fleet.
//
// # Safety
// `scenario` is a live handle; `spec_json` is NULL or NUL-terminated;
// `out` is writable.
enum DaapStatus daap_solve(const struct DaapScenario *scenario,
                           const char *spec_json,
                           struct DaapSolution **out);

// # Safety
// `path` is a NUL-terminated string; `out` is writable.
enum DaapStatus daap_solution_load(const char *path, struct DaapSolution **out);

// # Safety
// `solution` is a live handle; `path` is a NUL-terminated string.
enum DaapStatus daap_solution_save(const struct DaapSolution *solution, const char *path);

// Convergence flag (0 or 1), completed sweeps and number of agent types.
//
// # Safety
// `solution` is a live handle; the out-pointers are writable.
enum DaapStatus daap_solution_summary(const struct DaapSolution *solution,
                                      int32_t *converged,
                                      size_t *iterations,
                                      size_t *type_count);

// Probability that an agent of type `type_index` in zone `zone` at epoch
// `epoch` heads for zone `action`.
//
// # Safety
// `solution` is a live handle; `out` is writable.
enum DaapStatus daap_solution_policy_prob(const struct DaapSolution *solution,
                                          size_t type_index,
                                          size_t epoch,
                                          size_t zone,
                                          size_t action,
                                          double *out);

// # Safety
// `solution` is NULL or a handle not yet freed.
void daap_solution_free(struct DaapSolution *solution);

// Monte Carlo simulation of a solution on its scenario.
//
// # Safety
// `scenario` and `solution` are live handles; `out` is writable.
enum DaapStatus daap_simulate(const struct DaapScenario *scenario,
                              const struct DaapSolution *solution,
                              size_t runs,
                              uint64_t seed,
                              struct DaapReport **out);

// Fleet-wide average payoff per agent (mean and standard deviation over runs).
//
// # Safety
// `report` is a live handle; `mean` and `stddev` are writable.
enum DaapStatus daap_report_average_payoff(const struct DaapReport *report,
                                           double *mean,
                                           double *stddev);

// Average payoff of one agent type.
//
// # Safety
// `report` is a live handle; `mean` is writable.
enum DaapStatus daap_report_type_payoff(const struct DaapReport *report,
                                        size_t type_index,
                                        double *mean);

// Mean share of customer demand left unserved.
//
// # Safety
// `report` is a live handle; `mean` is writable.
enum DaapStatus daap_report_starvation(const struct DaapReport *report, double *mean);

// # Safety
// `report` is NULL or a handle not yet freed.
void daap_report_free(struct DaapReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DAAP_H */
