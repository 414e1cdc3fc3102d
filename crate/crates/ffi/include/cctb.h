#ifndef CCTB_H
#define CCTB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Pass for `x_a` / `x_f` when the vehicle is not placed.
 */
#define CCTB_ABSENT 1e9

typedef enum CctbStatus {
  CCTB_STATUS_OK = 0,
  CCTB_STATUS_NULL_POINTER = 1,
  CCTB_STATUS_INVALID_ARGUMENT = 2,
  CCTB_STATUS_DOMAIN = 3,
  CCTB_STATUS_UNREACHABLE = 4,
  CCTB_STATUS_CONFIG = 5,
  CCTB_STATUS_IO = 6,
  CCTB_STATUS_INTERNAL = 7,
} CctbStatus;

/**
 * A full campaign configuration (dynamics, context, policy, grid, sim).
 */
typedef struct CctbConfig CctbConfig;

/**
 * Conflict geometry of one configuration type.
 */
typedef struct CctbContext CctbContext;

/**
 * Vehicle dynamics: braking distance, acceleration speed and time.
 */
typedef struct CctbProfile CctbProfile;

typedef struct CctbCriticalValues {
  double x_e_hat;
  /**
   * NaN when `has_x_a_hat` is false.
   */
  double x_a_hat;
  /**
   * NaN when `has_x_f_hat` is false.
   */
  double x_f_hat;
  bool has_x_a_hat;
  bool has_x_f_hat;
  bool feasible;
} CctbCriticalValues;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cctb_version(void);

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into the library from the same thread.
 */
const char *cctb_last_error_message(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, freed at most once.
 */
void cctb_string_free(char *s);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum CctbStatus cctb_profile_reference(struct CctbProfile **out);

/**
 * Named preset (`reference`, or one of the shipped A/D tables).
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CctbStatus cctb_profile_preset(const char *name, struct CctbProfile **out);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum CctbStatus cctb_profile_closed_form(double a_max,
                                         double b_max,
                                         double v_max,
                                         struct CctbProfile **out);

/**
 * Profile from A/D table CSV text.
 *
 * # Safety
 * `csv` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CctbStatus cctb_profile_from_table(const char *csv, double v_max, struct CctbProfile **out);

/**
 * # Safety
 * `p` must be NULL or a handle from a `cctb_profile_*` constructor, freed once.
 */
void cctb_profile_free(struct CctbProfile *p);

/**
 * # Safety
 * `p` must be a live profile handle and `out` a valid pointer.
 */
enum CctbStatus cctb_profile_v_max(const struct CctbProfile *p, double *out);

/**
 * Distance needed to stop from speed `v`.
 *
 * # Safety
 * `p` must be a live profile handle and `out` a valid pointer.
 */
enum CctbStatus cctb_brake_distance(const struct CctbProfile *p, double v, double *out);

/**
 * Speed reached after accelerating over `x` from speed `v`.
 *
 * # Safety
 * `p` must be a live profile handle and `out` a valid pointer.
 */
enum CctbStatus cctb_accel_speed(const struct CctbProfile *p, double v, double x, double *out);

/**
 * Time to cover `x` at full acceleration from speed `v`.
 *
 * # Safety
 * `p` must be a live profile handle and `out` a valid pointer.
 */
enum CctbStatus cctb_accel_time(const struct CctbProfile *p, double v, double x, double *out);

/**
 * Context with default geometry for `config_type` (`merging`,
 * `lane_change`, `cross_yield` or `cross_light`).
 *
 * # Safety
 * `config_type` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CctbStatus cctb_context_new(const char *config_type, struct CctbContext **out);

/**
 * Overrides one geometry key (`cd`, `vl`, `ty`, `tar`, `cda`,
 * `lane_half_width`, `inner_front_gap`). The context is left unchanged if
 * the result is invalid.
 *
 * # Safety
 * `ctx` must be a live context handle and `key` a NUL-terminated string.
 */
enum CctbStatus cctb_context_set(struct CctbContext *ctx, const char *key, double value);

/**
 * # Safety
 * `ctx` must be NULL or a handle from [`cctb_context_new`], freed once.
 */
void cctb_context_free(struct CctbContext *ctx);

/**
 * Critical distances for ego speed `v_e`.
 *
 * # Safety
 * Handles must be live and `out` a valid pointer.
 */
enum CctbStatus cctb_critical_values(const struct CctbContext *ctx,
                                     const struct CctbProfile *profile,
                                     double v_e,
                                     struct CctbCriticalValues *out);

/**
 * Parses a campaign TOML document. Relative table paths resolve against
 * `base_dir`, or the working directory when it is NULL.
 *
 * # Safety
 * `toml` must be a NUL-terminated string, `base_dir` NULL or one, and
 * `out` a valid pointer.
 */
enum CctbStatus cctb_config_parse(const char *toml, const char *base_dir, struct CctbConfig **out);

/**
 * # Safety
 * `cfg` must be NULL or a handle from [`cctb_config_parse`], freed once.
 */
void cctb_config_free(struct CctbConfig *cfg);

/**
 * Simulates one test case and writes `{"verdict": ..., "ledger": ...}` as
 * JSON to `out_json`. Use [`CCTB_ABSENT`] for a missing vehicle.
 *
 * # Safety
 * `cfg` must be a live config handle and `out_json` a valid pointer.
 */
enum CctbStatus cctb_run_case(const struct CctbConfig *cfg,
                              double v_e,
                              double x_a,
                              double x_f,
                              uint64_t seed,
                              char **out_json);

/**
 * Runs the whole campaign and writes the record as JSON. An incomplete
 * campaign still produces a record (`"complete": false`).
 *
 * # Safety
 * `cfg` must be a live config handle and `out_json` a valid pointer.
 */
enum CctbStatus cctb_run_campaign(const struct CctbConfig *cfg, char **out_json);

/**
 * Driving score of an incident ledger (JSON) under the default penalties.
 *
 * # Safety
 * `ledger_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CctbStatus cctb_score(const char *ledger_json, bool exclude_other, double *out);

/**
 * Like [`cctb_score`] but returns the full breakdown as JSON.
 *
 * # Safety
 * `ledger_json` must be a NUL-terminated string and `out_json` a valid pointer.
 */
enum CctbStatus cctb_score_json(const char *ledger_json, bool exclude_other, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CCTB_H */
