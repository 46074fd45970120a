//! C ABI for `aqmsim`.
//!
//! Every fallible function returns an [`AqmStatus`] and writes its result
//! through an out-pointer. On failure, [`aqm_last_error`] returns a message
//! for the calling thread. Handles are opaque and must be released with
//! their `_free` function. Panics never cross the boundary; they become
//! `AQM_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use aqmsim::des::simulate_dumbbell;
use aqmsim::fluid::{simulate_paths, EnsembleConfig, Execution, FluidState};
use aqmsim::harness::{detect_oscillation, parse_config, run_experiment, OutputFormat};
use aqmsim::hybrid::{simulate_hybrid, HybridConfig, HybridState};
use aqmsim::moments::{fixed_point, integrate_sampled, MomentState};
use aqmsim::red::{drop_probability, RedParams, RedRegion};
use aqmsim::scenario::Scenario;
use aqmsim::series::TimeSeries;
use aqmsim::tcp::TcpPhase;
use aqmsim::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AqmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    NoEquilibrium = 5,
    Io = 6,
    NotFound = 7,
    BufferTooSmall = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AqmRegion {
    NoDrop = 0,
    Linear = 1,
    ForcedDrop = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AqmEquilibrium {
    pub w: f64,
    pub q: f64,
    pub q_hat: f64,
    pub residual: f64,
    /// An `AqmRegion` value.
    pub branch: i32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AqmOscillation {
    /// 1 when an oscillation was detected.
    pub detected: i32,
    pub dominant_period: f64,
    pub amplitude: f64,
    pub spectral_peak_ratio: f64,
}

/// Link, RED and load parameters.
pub struct AqmScenario {
    inner: Scenario,
}

/// A sampled multi-channel trajectory.
pub struct AqmSeries {
    inner: TimeSeries,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> AqmStatus {
    match e {
        Error::Config(_) => AqmStatus::Config,
        Error::Domain { .. } | Error::InvalidParams(_) | Error::Dimension { .. } => AqmStatus::InvalidArgument,
        Error::NoEquilibrium(_) => AqmStatus::NoEquilibrium,
        Error::Io { .. } => AqmStatus::Io,
        Error::Series(_) => AqmStatus::NotFound,
        _ => AqmStatus::Numerical,
    }
}

struct Fail(AqmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(AqmStatus::NullPointer, format!("`{what}` is null"))
}

/// Run `f`, translating errors and panics into a status and message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AqmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AqmStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal error: {msg}"));
            AqmStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(AqmStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

unsafe fn scenario_ref<'a>(s: *const AqmScenario) -> Result<&'a Scenario, Fail> {
    s.as_ref().map(|s| &s.inner).ok_or_else(|| null("scenario"))
}

unsafe fn series_ref<'a>(s: *const AqmSeries) -> Result<&'a AqmSeries, Fail> {
    s.as_ref().ok_or_else(|| null("series"))
}

fn boxed_series(inner: TimeSeries) -> *mut AqmSeries {
    let names = inner
        .names()
        .iter()
        .map(|n| CString::new(n.as_str()).unwrap_or_default())
        .collect();
    Box::into_raw(Box::new(AqmSeries { inner, names }))
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn aqm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn aqm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// RED drop probability at averaged queue `q_hat`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn aqm_drop_probability(q_hat: f64, q_min: f64, q_max: f64, p_max: f64, out: *mut f64) -> AqmStatus {
    guard(|| {
        // The EWMA weight plays no part in the drop function.
        let red = RedParams::new(q_min, q_max, p_max, 0.5)?;
        if !q_hat.is_finite() || q_hat < 0.0 {
            return Err(Fail(AqmStatus::InvalidArgument, format!("q_hat must be finite and >= 0 (got {q_hat})")));
        }
        write_out(out, drop_probability(q_hat, &red), "out")
    })
}

/// Four flows, 100 pkt/s, 100 ms propagation RTT, RED(5, 15, 0.1), 50-packet
/// buffer.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn aqm_scenario_reference(out: *mut *mut AqmScenario) -> AqmStatus {
    guard(|| {
        let s = Box::new(AqmScenario {
            inner: Scenario::reference(),
        });
        write_out(out, Box::into_raw(s), "out")
    })
}

/// Build a scenario; the EWMA weight is derived from `capacity` when
/// `w_q` is not positive.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn aqm_scenario_new(
    capacity: f64,
    prop_rtt: f64,
    n_flows: u32,
    buffer: u32,
    q_min: f64,
    q_max: f64,
    p_max: f64,
    w_q: f64,
    out: *mut *mut AqmScenario,
) -> AqmStatus {
    guard(|| {
        let inner = Scenario {
            capacity,
            prop_rtt,
            n_flows,
            buffer,
            q_min,
            q_max,
            p_max,
            w_q: (w_q > 0.0).then_some(w_q),
        };
        inner.fluid()?;
        if n_flows == 0 {
            return Err(Fail(AqmStatus::InvalidArgument, "n_flows must be >= 1".into()));
        }
        write_out(out, Box::into_raw(Box::new(AqmScenario { inner })), "out")
    })
}

/// # Safety
/// `s` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aqm_scenario_free(s: *mut AqmScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Steady state of the moment model.
///
/// # Safety
/// `s` must be a live scenario handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn aqm_equilibrium(s: *const AqmScenario, out: *mut AqmEquilibrium) -> AqmStatus {
    guard(|| {
        let p = scenario_ref(s)?.fluid()?;
        let e = fixed_point(&p, MomentState::new(1.0, 0.0, 0.0))?;
        let branch = match e.branch {
            RedRegion::NoDrop => AqmRegion::NoDrop,
            RedRegion::Linear => AqmRegion::Linear,
            RedRegion::ForcedDrop => AqmRegion::ForcedDrop,
        };
        write_out(
            out,
            AqmEquilibrium {
                w: e.w,
                q: e.q,
                q_hat: e.q_hat,
                residual: e.residual,
                branch: branch as i32,
            },
            "out",
        )
    })
}

/// Packet-level run. Channels: `q`, `q_hat`, `p`, `cwnd_<i>`,
/// `drops_red_cum`, `drops_tail_cum`.
///
/// # Safety
/// `s` must be a live scenario handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn aqm_simulate_des(
    s: *const AqmScenario,
    duration: f64,
    seed: u64,
    sample_interval: f64,
    out: *mut *mut AqmSeries,
) -> AqmStatus {
    guard(|| {
        let cfg = scenario_ref(s)?.des(duration, seed, sample_interval)?;
        let run = simulate_dumbbell(&cfg)?;
        write_out(out, boxed_series(run.series), "out")
    })
}

/// Moment-model trajectory from `(w0, q0, q_hat0)`. Channels: `W`, `Q`,
/// `Q_hat`.
///
/// # Safety
/// `s` must be a live scenario handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn aqm_integrate_moments(
    s: *const AqmScenario,
    w0: f64,
    q0: f64,
    q_hat0: f64,
    t_end: f64,
    dt: f64,
    sample_interval: f64,
    out: *mut *mut AqmSeries,
) -> AqmStatus {
    guard(|| {
        let p = scenario_ref(s)?.fluid()?;
        let series = integrate_sampled(&p, MomentState::new(w0, q0, q_hat0), t_end, dt, sample_interval)?;
        write_out(out, boxed_series(series), "out")
    })
}

/// Langevin ensemble statistics from `(1, 0, 0)`. Channels: `W_mean`,
/// `Q_mean`, `Q_hat_mean`, `W_var`, `Q_var`, `Q_hat_var`.
///
/// # Safety
/// `s` must be a live scenario handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn aqm_fluid_ensemble(
    s: *const AqmScenario,
    n_paths: u32,
    t_end: f64,
    dt: f64,
    sample_interval: f64,
    seed: u64,
    out: *mut *mut AqmSeries,
) -> AqmStatus {
    guard(|| {
        let p = scenario_ref(s)?.fluid()?;
        let ens = simulate_paths(
            &p,
            FluidState::new(1.0, 0.0, 0.0),
            &EnsembleConfig {
                t_end,
                dt,
                sample_interval,
                n_paths,
                seed,
                bins: 50,
                keep_paths: false,
                execution: Execution::Parallel,
            },
        )?;
        write_out(out, boxed_series(ens.stats), "out")
    })
}

/// Hybrid-automaton run from slow start at `W = 1`, `ssthresh = 64`.
/// Channels: `W`, `Q`, `Q_hat`, `ssthresh`.
///
/// # Safety
/// `s` must be a live scenario handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn aqm_simulate_hybrid(
    s: *const AqmScenario,
    t_end: f64,
    dt: f64,
    sample_interval: f64,
    seed: u64,
    out: *mut *mut AqmSeries,
) -> AqmStatus {
    guard(|| {
        let p = scenario_ref(s)?.hybrid()?;
        let run = simulate_hybrid(
            &p,
            HybridState::new(TcpPhase::SlowStart, 1.0, 0.0, 0.0, 64.0),
            &HybridConfig {
                t_end,
                dt,
                sample_interval,
                seed,
                averaging_start: 0.2 * t_end,
            },
        )?;
        write_out(out, boxed_series(run.series()), "out")
    })
}

/// # Safety
/// `s` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aqm_series_free(s: *mut AqmSeries) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Number of samples; 0 for a null handle.
///
/// # Safety
/// `s` must be null or a live series handle.
#[no_mangle]
pub unsafe extern "C" fn aqm_series_len(s: *const AqmSeries) -> usize {
    s.as_ref().map_or(0, |s| s.inner.len())
}

/// Number of channels (excluding time); 0 for a null handle.
///
/// # Safety
/// `s` must be null or a live series handle.
#[no_mangle]
pub unsafe extern "C" fn aqm_series_channel_count(s: *const AqmSeries) -> usize {
    s.as_ref().map_or(0, |s| s.names.len())
}

/// Name of channel `i`, owned by the handle; null when out of range.
///
/// # Safety
/// `s` must be null or a live series handle.
#[no_mangle]
pub unsafe extern "C" fn aqm_series_channel_name(s: *const AqmSeries, i: usize) -> *const c_char {
    s.as_ref()
        .and_then(|s| s.names.get(i))
        .map_or(ptr::null(), |c| c.as_ptr())
}

unsafe fn copy_into(src: &[f64], buf: *mut f64, cap: usize, written: *mut usize) -> Result<(), Fail> {
    write_out(written, src.len(), "written")?;
    if src.is_empty() {
        return Ok(());
    }
    if buf.is_null() {
        return Err(null("buf"));
    }
    if cap < src.len() {
        return Err(Fail(
            AqmStatus::BufferTooSmall,
            format!("buffer holds {cap} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Copy the sample times into `buf` (capacity `cap`). `*written` receives
/// the number of samples, also when the buffer is too small.
///
/// # Safety
/// `s` must be a live series handle; `buf` must be valid for `cap` writes;
/// `written` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn aqm_series_times(s: *const AqmSeries, buf: *mut f64, cap: usize, written: *mut usize) -> AqmStatus {
    guard(|| copy_into(series_ref(s)?.inner.times(), buf, cap, written))
}

/// Copy channel `name` into `buf`, as [`aqm_series_times`].
///
/// # Safety
/// As [`aqm_series_times`]; `name` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn aqm_series_channel(
    s: *const AqmSeries,
    name: *const c_char,
    buf: *mut f64,
    cap: usize,
    written: *mut usize,
) -> AqmStatus {
    guard(|| {
        let s = series_ref(s)?;
        let ys = s.inner.require(str_arg(name, "name")?)?;
        copy_into(ys, buf, cap, written)
    })
}

/// Time average of channel `name` over `[from, end]`.
///
/// # Safety
/// `s` must be a live series handle; `name` a NUL-terminated string;
/// `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn aqm_series_time_average(
    s: *const AqmSeries,
    name: *const c_char,
    from: f64,
    out: *mut f64,
) -> AqmStatus {
    guard(|| {
        let v = series_ref(s)?.inner.time_average(str_arg(name, "name")?, from)?;
        write_out(out, v, "out")
    })
}

/// Periodogram oscillation test on channel `name` after `cutoff`.
///
/// # Safety
/// `s` must be a live series handle; `name` a NUL-terminated string;
/// `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn aqm_detect_oscillation(
    s: *const AqmSeries,
    name: *const c_char,
    cutoff: f64,
    threshold: f64,
    out: *mut AqmOscillation,
) -> AqmStatus {
    guard(|| {
        let r = detect_oscillation(&series_ref(s)?.inner, str_arg(name, "name")?, cutoff, threshold)?;
        write_out(
            out,
            AqmOscillation {
                detected: i32::from(r.detected),
                dominant_period: r.dominant_period,
                amplitude: r.amplitude,
                spectral_peak_ratio: r.spectral_peak_ratio,
            },
            "out",
        )
    })
}

/// Parse an experiment document (TOML text) and write its artifacts to
/// `out_dir` as CSV.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn aqm_run_config(config_toml: *const c_char, out_dir: *const c_char) -> AqmStatus {
    guard(|| {
        let cfg = parse_config(str_arg(config_toml, "config_toml")?)?;
        let dir = str_arg(out_dir, "out_dir")?;
        run_experiment(&cfg, Path::new(dir), OutputFormat::Csv)?;
        Ok(())
    })
}
