#ifndef AQMSIM_H
#define AQMSIM_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AqmStatus {
  AQM_STATUS_OK = 0,
  AQM_STATUS_NULL_POINTER = 1,
  AQM_STATUS_INVALID_ARGUMENT = 2,
  AQM_STATUS_CONFIG = 3,
  AQM_STATUS_NUMERICAL = 4,
  AQM_STATUS_NO_EQUILIBRIUM = 5,
  AQM_STATUS_IO = 6,
  AQM_STATUS_NOT_FOUND = 7,
  AQM_STATUS_BUFFER_TOO_SMALL = 8,
  AQM_STATUS_INTERNAL = 9,
} AqmStatus;

typedef enum AqmRegion {
  AQM_REGION_NO_DROP = 0,
  AQM_REGION_LINEAR = 1,
  AQM_REGION_FORCED_DROP = 2,
} AqmRegion;

/*
 Link, RED and load parameters.
 */
typedef struct AqmScenario AqmScenario;

/*
 A sampled multi-channel trajectory.
 */
typedef struct AqmSeries AqmSeries;

typedef struct AqmEquilibrium {
  double w;
  double q;
  double q_hat;
  double residual;
  /*
   An `AqmRegion` value.
   */
  int32_t branch;
} AqmEquilibrium;

typedef struct AqmOscillation {
  /*
   1 when an oscillation was detected.
   */
  int32_t detected;
  double dominant_period;
  double amplitude;
  double spectral_peak_ratio;
} AqmOscillation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. Valid until
 the next call into this library from the same thread.
 */
const char *aqm_last_error(void);

/*
 Library version, a static NUL-terminated string.
 */
const char *aqm_version(void);

/*
 RED drop probability at averaged queue `q_hat`.

 # Safety
 `out` must be valid for writes.
 */
enum AqmStatus aqm_drop_probability(double q_hat,
                                    double q_min,
                                    double q_max,
                                    double p_max,
                                    double *out);

/*
 Four flows, 100 pkt/s, 100 ms propagation RTT, RED(5, 15, 0.1), 50-packet
 buffer.

 # Safety
 `out` must be valid for writes.
 */
enum AqmStatus aqm_scenario_reference(struct AqmScenario **out);

/*
 Build a scenario; the EWMA weight is derived from `capacity` when
 `w_q` is not positive.

 # Safety
 `out` must be valid for writes.
 */
enum AqmStatus aqm_scenario_new(double capacity,
                                double prop_rtt,
                                uint32_t n_flows,
                                uint32_t buffer,
                                double q_min,
                                double q_max,
                                double p_max,
                                double w_q,
                                struct AqmScenario **out);

/*
 # Safety
 `s` must be null or a handle from this library, not yet freed.
 */
void aqm_scenario_free(struct AqmScenario *s);

/*
 Steady state of the moment model.

 # Safety
 `s` must be a live scenario handle; `out` must be valid for writes.
 */
enum AqmStatus aqm_equilibrium(const struct AqmScenario *s, struct AqmEquilibrium *out);

/*
 Packet-level run. Channels: `q`, `q_hat`, `p`, `cwnd_<i>`,
 `drops_red_cum`, `drops_tail_cum`.

 # Safety
 `s` must be a live scenario handle; `out` must be valid for writes.
 */
enum AqmStatus aqm_simulate_des(const struct AqmScenario *s,
                                double duration,
                                uint64_t seed,
                                double sample_interval,
                                struct AqmSeries **out);

/*
 Moment-model trajectory from `(w0, q0, q_hat0)`. Channels: `W`, `Q`,
 `Q_hat`.

 # Safety
 `s` must be a live scenario handle; `out` must be valid for writes.
 */
enum AqmStatus aqm_integrate_moments(const struct AqmScenario *s,
                                     double w0,
                                     double q0,
                                     double q_hat0,
                                     double t_end,
                                     double dt,
                                     double sample_interval,
                                     struct AqmSeries **out);

/*
 Langevin ensemble statistics from `(1, 0, 0)`. Channels: `W_mean`,
 `Q_mean`, `Q_hat_mean`, `W_var`, `Q_var`, `Q_hat_var`.

 # Safety
 `s` must be a live scenario handle; `out` must be valid for writes.
 */
enum AqmStatus aqm_fluid_ensemble(const struct AqmScenario *s,
                                  uint32_t n_paths,
                                  double t_end,
                                  double dt,
                                  double sample_interval,
                                  uint64_t seed,
                                  struct AqmSeries **out);

/*
 Hybrid-automaton run from slow start at `W = 1`, `ssthresh = 64`.
 Channels: `W`, `Q`, `Q_hat`, `ssthresh`.

 # Safety
 `s` must be a live scenario handle; `out` must be valid for writes.
 */
enum AqmStatus aqm_simulate_hybrid(const struct AqmScenario *s,
                                   double t_end,
                                   double dt,
                                   double sample_interval,
                                   uint64_t seed,
                                   struct AqmSeries **out);

/*
 # Safety
 `s` must be null or a handle from this library, not yet freed.
 */
void aqm_series_free(struct AqmSeries *s);

/*
 Number of samples; 0 for a null handle.

 # Safety
 `s` must be null or a live series handle.
 */
size_t aqm_series_len(const struct AqmSeries *s);

/*
 Number of channels (excluding time); 0 for a null handle.

 # Safety
 `s` must be null or a live series handle.
 */
size_t aqm_series_channel_count(const struct AqmSeries *s);

/*
 Name of channel `i`, owned by the handle; null when out of range.

 # Safety
 `s` must be null or a live series handle.
 */
const char *aqm_series_channel_name(const struct AqmSeries *s, size_t i);

/*
 Copy the sample times into `buf` (capacity `cap`). `*written` receives
 the number of samples, also when the buffer is too small.

 # Safety
 `s` must be a live series handle; `buf` must be valid for `cap` writes;
 `written` must be valid for writes.
 */
enum AqmStatus aqm_series_times(const struct AqmSeries *s,
                                double *buf,
                                size_t cap,
                                size_t *written);

/*
 Copy channel `name` into `buf`, as [`aqm_series_times`].

 # Safety
 As [`aqm_series_times`]; `name` must be a NUL-terminated string.
 */
enum AqmStatus aqm_series_channel(const struct AqmSeries *s,
                                  const char *name,
                                  double *buf,
                                  size_t cap,
                                  size_t *written);

/*
 Time average of channel `name` over `[from, end]`.

 # Safety
 `s` must be a live series handle; `name` a NUL-terminated string;
 `out` valid for writes.
 */
enum AqmStatus aqm_series_time_average(const struct AqmSeries *s,
                                       const char *name,
                                       double from,
                                       double *out);

/*
 Periodogram oscillation test on channel `name` after `cutoff`.

 # Safety
 `s` must be a live series handle; `name` a NUL-terminated string;
 `out` valid for writes.
 */
enum AqmStatus aqm_detect_oscillation(const struct AqmSeries *s,
                                      const char *name,
                                      double cutoff,
                                      double threshold,
                                      struct AqmOscillation *out);

/*
 Parse an experiment document (TOML text) and write its artifacts to
 `out_dir` as CSV.

 # Safety
 Both arguments must be NUL-terminated strings.
 */
enum AqmStatus aqm_run_config(const char *config_toml, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AQMSIM_H */
