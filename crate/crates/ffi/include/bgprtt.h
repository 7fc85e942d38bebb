#ifndef BGPRTT_H
#define BGPRTT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every exported function.
 */
typedef enum BgprttStatus {
  BGPRTT_STATUS_OK = 0,
  BGPRTT_STATUS_NULL_POINTER = 1,
  BGPRTT_STATUS_INVALID_ARGUMENT = 2,
  BGPRTT_STATUS_IO = 3,
  BGPRTT_STATUS_FORMAT = 4,
  BGPRTT_STATUS_BUFFER_TOO_SMALL = 5,
  BGPRTT_STATUS_PANIC = 6,
} BgprttStatus;

/**
 * Longest-prefix-match table of elected prefix origins.
 */
typedef struct BgprttPrefixTable BgprttPrefixTable;

/**
 * Match report of one probe / collector-peer pair.
 */
typedef struct BgprttReport BgprttReport;

/**
 * Workflow parameters. `window_start = 0` and `window_end = UINT64_MAX`
 * mean unbounded.
 */
typedef struct BgprttParams {
  uint64_t window_start;
  uint64_t window_end;
  int64_t time_shift;
  double elbow_slope_threshold;
  uint64_t tolerance_window;
  double penalty_base;
  double penalty_offset;
  double initial_penalty;
  uint64_t rtt_period;
} BgprttParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread, or null.
 *
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *bgprtt_last_error_message(void);

/**
 * Fills `out` with the default parameters.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `BgprttParams`.
 */
enum BgprttStatus bgprtt_params_default(struct BgprttParams *out);

/**
 * Optimal changepoints of `values` under `penalty`, found with PELT.
 *
 * Writes the number of changepoints to `out_count` and, when it fits in
 * `capacity`, their indices to `out_indices`. Otherwise returns
 * `BGPRTT_STATUS_BUFFER_TOO_SMALL` with `out_count` still set.
 * `out_cost` may be null.
 *
 * # Safety
 * `values` must point to `len` doubles; `out_indices` to `capacity` slots.
 */
enum BgprttStatus bgprtt_pelt(const double *values,
                              size_t len,
                              double penalty,
                              size_t *out_indices,
                              size_t capacity,
                              size_t *out_count,
                              double *out_cost);

/**
 * As [`bgprtt_pelt`], using the unpruned quadratic dynamic program.
 *
 * # Safety
 * Same contract as [`bgprtt_pelt`].
 */
enum BgprttStatus bgprtt_optimal_partitioning(const double *values,
                                              size_t len,
                                              double penalty,
                                              size_t *out_indices,
                                              size_t capacity,
                                              size_t *out_count,
                                              double *out_cost);

/**
 * Penalty chosen by the elbow rule. `params` may be null for defaults.
 *
 * # Safety
 * `values` must point to `len` doubles and `out_penalty` to one double.
 */
enum BgprttStatus bgprtt_elbow_select(const double *values,
                                      size_t len,
                                      const struct BgprttParams *params,
                                      double *out_penalty);

/**
 * One minus the mean of `factors`, each of which must lie in [0, 1].
 *
 * # Safety
 * `factors` must point to `len` doubles and `out` to one double.
 */
enum BgprttStatus bgprtt_correlation_score(const double *factors, size_t len, double *out);

/**
 * Correlates one pair from an RTT file and a BGP file.
 *
 * `target` is a dotted IPv4 address and `prefix` a CIDR string. `params`
 * may be null for defaults. On success `*out` receives a report to be
 * released with [`bgprtt_report_free`].
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum BgprttStatus bgprtt_run_pair(const char *rtt_path,
                                  const char *bgp_path,
                                  const char *probe_id,
                                  const char *cp_id,
                                  const char *target,
                                  const char *prefix,
                                  const struct BgprttParams *params,
                                  struct BgprttReport **out);

/**
 * Correlation factor of the report; NaN for a null report.
 *
 * # Safety
 * `report` must be null or a live report.
 */
double bgprtt_report_factor(const struct BgprttReport *report);

/**
 * Number of valid updates in the report.
 *
 * # Safety
 * `report` must be null or a live report.
 */
size_t bgprtt_report_update_count(const struct BgprttReport *report);

/**
 * Number of valid updates matched to a changepoint.
 *
 * # Safety
 * `report` must be null or a live report.
 */
size_t bgprtt_report_matched_count(const struct BgprttReport *report);

/**
 * True when the pair had no valid updates.
 *
 * # Safety
 * `report` must be null or a live report.
 */
bool bgprtt_report_insufficient_data(const struct BgprttReport *report);

/**
 * Serializes the report as JSON into a string freed with [`bgprtt_string_free`].
 *
 * # Safety
 * `report` must be a live report and `out` writable.
 */
enum BgprttStatus bgprtt_report_to_json(const struct BgprttReport *report, char **out);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void bgprtt_string_free(char *s);

/**
 * Releases a report. Null is ignored.
 *
 * # Safety
 * `report` must come from [`bgprtt_run_pair`] and not be freed twice.
 */
void bgprtt_report_free(struct BgprttReport *report);

/**
 * Loads a prefix-origin CSV and an optional IXP list (`ixp_path` may be null).
 *
 * # Safety
 * Paths must be NUL-terminated; `out` must be writable.
 */
enum BgprttStatus bgprtt_prefix_table_load(const char *csv_path,
                                           const char *ixp_path,
                                           uint32_t probe_as,
                                           struct BgprttPrefixTable **out);

/**
 * Origin AS of the most specific prefix containing `address`, given in
 * host byte order (`0xC0000201` is 192.0.2.1). Writes 0 when no prefix matches.
 *
 * # Safety
 * `table` must be a live table and `out_asn` writable.
 */
enum BgprttStatus bgprtt_prefix_table_origin(const struct BgprttPrefixTable *table,
                                             uint32_t address,
                                             uint32_t *out_asn);

/**
 * Releases a prefix table. Null is ignored.
 *
 * # Safety
 * `table` must come from [`bgprtt_prefix_table_load`] and not be freed twice.
 */
void bgprtt_prefix_table_free(struct BgprttPrefixTable *table);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BGPRTT_H */
