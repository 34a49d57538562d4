#ifndef LEADER_SIM_H
#define LEADER_SIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LsStatus {
  LS_STATUS_OK = 0,
  LS_STATUS_NULL_ARGUMENT = 1,
  LS_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed JSON or an unknown field.
   */
  LS_STATUS_INVALID_CONFIG = 3,
  /**
   * Well-formed input the simulator refuses (n = 0, bad adversary).
   */
  LS_STATUS_INVALID_INPUT = 4,
  LS_STATUS_IO = 5,
  /**
   * The run completed but invariant checks failed.
   */
  LS_STATUS_VIOLATIONS = 6,
  LS_STATUS_PANIC = 7,
} LsStatus;

typedef enum LsProtocol {
  LS_PROTOCOL_ASYNC = 0,
  LS_PROTOCOL_SYNC = 1,
} LsProtocol;

typedef enum LsOutcome {
  LS_OUTCOME_SUCCESS = 0,
  LS_OUTCOME_MULTI_LEADER = 1,
  LS_OUTCOME_NO_LEADER = 2,
  LS_OUTCOME_NONTERMINATING = 3,
} LsOutcome;

/**
 * Opaque trial report.
 */
typedef struct LsReport LsReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Runs one trial with default (all-at-zero, unit delay) adversary.
 *
 * # Safety
 * `protocol` must be one of the declared values; `out` must point to
 * writable storage for one handle.
 */
enum LsStatus ls_run_trial(enum LsProtocol protocol,
                           size_t n,
                           uint64_t seed,
                           bool unique_ids,
                           struct LsReport **out);

/**
 * Runs the trial described by `spec_json` (a JSON trial spec). When
 * `trace_path` is non-null the JSONL trace is written there.
 *
 * # Safety
 * `spec_json` must be a NUL-terminated string, `trace_path` null or
 * NUL-terminated, `out` valid for one handle write.
 */
enum LsStatus ls_run_trial_json(const char *spec_json,
                                const char *trace_path,
                                struct LsReport **out);

/**
 * Releases a report. Null is ignored.
 *
 * # Safety
 * `report` must come from this library and not have been freed.
 */
void ls_report_free(struct LsReport *report);

/**
 * Remote messages delivered; 0 for a null handle.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
uint64_t ls_report_total_messages(const struct LsReport *report);

/**
 * Virtual time from first wakeup to last event, in time units.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
double ls_report_elapsed(const struct LsReport *report);

/**
 * Rounds for a synchronous trial, -1 otherwise.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
int64_t ls_report_rounds(const struct LsReport *report);

/**
 * # Safety
 * `report` must be null or a live handle.
 */
uint64_t ls_report_elected_count(const struct LsReport *report);

/**
 * # Safety
 * `report` must be null or a live handle.
 */
uint64_t ls_report_trace_hash(const struct LsReport *report);

/**
 * # Safety
 * `report` must be null or a live handle.
 */
size_t ls_report_violation_count(const struct LsReport *report);

/**
 * Outcome of the trial; `Nonterminating` for a null handle.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
enum LsOutcome ls_report_outcome(const struct LsReport *report);

/**
 * Full report as JSON, or null for a null handle. Free with
 * [`ls_string_free`].
 *
 * # Safety
 * `report` must be null or a live handle.
 */
char *ls_report_to_json(const struct LsReport *report);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void ls_string_free(char *s);

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call into the library from the same thread.
 */
const char *ls_last_error_message(void);

/**
 * Replays the trace at `path`. Writes the violation count and trace hash
 * when the out pointers are non-null. Returns `Violations` if any were
 * found.
 *
 * # Safety
 * `path` must be NUL-terminated; out pointers null or writable.
 */
enum LsStatus ls_verify_trace(const char *path, size_t *violations, uint64_t *hash);

/**
 * Runs the sweep configured in the JSON file `config_path` and writes
 * `trials.csv` and `summary.csv` into `out_dir`.
 *
 * # Safety
 * Both arguments must be NUL-terminated strings.
 */
enum LsStatus ls_sweep_run(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LEADER_SIM_H */
