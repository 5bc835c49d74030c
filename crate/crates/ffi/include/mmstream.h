#ifndef MMSTREAM_H
#define MMSTREAM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum MmsStatus {
  MmsStatus_Ok = 0,
  MmsStatus_NullArgument = 1,
  MmsStatus_InvalidUtf8 = 2,
  MmsStatus_InvalidConfig = 3,
  MmsStatus_UnknownQuery = 4,
  MmsStatus_InvalidPlan = 5,
  MmsStatus_RunFailed = 6,
} MmsStatus;

/**
 * Opaque engine handle: configuration plus the model catalog.
 */
typedef struct MmsEngine MmsEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version string; static storage, do not free.
 */
const char *mms_version(void);

/**
 * Message for the most recent error on this thread; static until the next
 * failing call, do not free.
 */
const char *mms_last_error(void);

/**
 * Creates an engine with the built-in default configuration.
 */
struct MmsEngine *mms_engine_new(void);

/**
 * Creates an engine from a benchmark-config JSON document.
 *
 * # Safety
 * `config_json` must be a valid NUL-terminated string; `out` must point to
 * writable storage for one pointer.
 */
enum MmsStatus mms_engine_new_from_json(const char *config_json, struct MmsEngine **out);

/**
 * Releases an engine handle. Null is ignored.
 *
 * # Safety
 * `engine` must have been returned by an engine constructor and not freed.
 */
void mms_engine_free(struct MmsEngine *engine);

/**
 * Builds the naive plan for a query id ("Q1".."Q13") as a plan JSON
 * document.
 *
 * # Safety
 * `engine` must be a live engine handle; `query_id` a valid string;
 * `out_plan_json` writable storage for one pointer.
 */
enum MmsStatus mms_build_plan(const struct MmsEngine *engine,
                              const char *query_id,
                              char **out_plan_json);

/**
 * Validates a plan document. On success writes a report string: empty for
 * a valid plan, otherwise one violation per line.
 *
 * # Safety
 * Pointer contracts as in [`mms_build_plan`].
 */
enum MmsStatus mms_validate_plan(const char *plan_json, char **out_report);

/**
 * Optimizes a query's naive plan through the given phases
 * ("semantic,logical,physical" or any prefix; empty for none) and returns
 * the optimized plan JSON.
 *
 * # Safety
 * Pointer contracts as in [`mms_build_plan`].
 */
enum MmsStatus mms_optimize_plan(const struct MmsEngine *engine,
                                 const char *query_id,
                                 const char *phases,
                                 uint64_t seed,
                                 char **out_plan_json);

/**
 * Runs a plan over the query's stream and returns a metrics JSON document
 * with fields `query_id`, `fps`, `accuracy`, `frames`, `simulated_ms`,
 * `outputs`.
 *
 * # Safety
 * Pointer contracts as in [`mms_build_plan`].
 */
enum MmsStatus mms_run_plan(const struct MmsEngine *engine,
                            const char *plan_json,
                            uint64_t seed,
                            uint64_t frames,
                            char **out_metrics_json);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must have been returned via an out parameter of this library and not
 * freed before.
 */
void mms_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MMSTREAM_H */
