//! Langevin (stochastic fluid) model of TCP windows feeding a RED queue.
//!
//! State is the per-flow window `W`, the queue `Q` and its EWMA `Q_hat`.
//! Between losses the window grows at `1/T(Q)`; losses arrive as a Poisson
//! stream of intensity `p(Q_hat) W / T` and halve the window. Both `W` and
//! `Q` carry Wiener noise whose variance is the sum of the birth and death
//! intensities of the underlying one-step process. `Q_hat` follows the
//! constraint ODE `dQ_hat/dt = w_q C (Q - Q_hat)`.
//!
//! Integration is Euler–Maruyama with clamping (`W >= w_floor`,
//! `0 <= Q <= buffer`); no reflection.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::red::{drop_probability, RedParams};
use crate::rng::{substream, Domain, SimRng};
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionMode {
    /// `sigma_Q = sqrt(W / T + C)`.
    #[default]
    SumRates,
    /// `sigma_Q = sqrt(max(0, W / T - C))`, the signed form clamped at zero.
    AsWrittenClamped,
    /// No Wiener noise.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "rate")]
pub enum JumpMode {
    /// Poisson losses with intensity `p(Q_hat) W / T`.
    #[default]
    Poisson,
    /// Poisson losses at a fixed rate (events/s).
    Constant(f64),
    /// No discrete jumps; the expected loss drift `-(W/2) lambda` is applied
    /// continuously instead.
    MeanDrift,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidParams {
    /// Queue service intensity, packets/s.
    pub capacity: f64,
    pub red: RedParams,
    /// Propagation round-trip time, s.
    pub prop_rtt: f64,
    pub diffusion: DiffusionMode,
    pub jumps: JumpMode,
    pub w_floor: f64,
    /// Upper queue clamp (buffer size), packets.
    pub buffer: f64,
}

impl FluidParams {
    /// Single-flow parameters with `w_q` derived from the capacity.
    pub fn new(capacity: f64, prop_rtt: f64, q_min: f64, q_max: f64, p_max: f64) -> Result<Self> {
        let p = Self {
            capacity,
            red: RedParams::for_capacity(q_min, q_max, p_max, capacity)?,
            prop_rtt,
            diffusion: DiffusionMode::SumRates,
            jumps: JumpMode::Poisson,
            w_floor: 1.0,
            buffer: 50.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.red.validate()?;
        if !(self.capacity.is_finite() && self.capacity > 0.0) {
            return Err(Error::InvalidParams(format!(
                "capacity must be finite and > 0 (got {})",
                self.capacity
            )));
        }
        if !(self.prop_rtt.is_finite() && self.prop_rtt >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "prop_rtt must be finite and >= 0 (got {})",
                self.prop_rtt
            )));
        }
        if !(self.w_floor.is_finite() && self.w_floor > 0.0) {
            return Err(Error::InvalidParams("w_floor must be finite and > 0".into()));
        }
        if !(self.buffer.is_finite() && self.buffer > 0.0) {
            return Err(Error::InvalidParams("queue bounds must satisfy 0 < buffer".into()));
        }
        if let JumpMode::Constant(rate) = self.jumps {
            if !(rate.is_finite() && rate >= 0.0) {
                return Err(Error::InvalidParams("constant jump rate must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// Copy with diffusion off and jumps replaced by their mean drift.
    pub fn noise_free(&self) -> Self {
        Self {
            diffusion: DiffusionMode::Off,
            jumps: JumpMode::MeanDrift,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidState {
    pub t: f64,
    pub w: f64,
    pub q: f64,
    pub q_hat: f64,
}

impl FluidState {
    pub fn new(w: f64, q: f64, q_hat: f64) -> Self {
        Self { t: 0.0, w, q, q_hat }
    }

    fn is_finite(&self) -> bool {
        self.t.is_finite() && self.w.is_finite() && self.q.is_finite() && self.q_hat.is_finite()
    }
}

/// Random inputs to one Euler–Maruyama step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseDraws {
    /// Wiener increment for `W`, already scaled by `sqrt(dt)`.
    pub dv1: f64,
    /// Wiener increment for `Q`, already scaled by `sqrt(dt)`.
    pub dv2: f64,
    /// A loss event occurred in `[t, t + dt)`.
    pub jump: bool,
}

impl NoiseDraws {
    /// Draws for a step of length `dt` at loss intensity `lambda`: two
    /// standard normals and one uniform, always in that order.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, dt: f64, lambda: f64) -> Self {
        let sd = dt.sqrt();
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.random();
        Self {
            dv1: z1 * sd,
            dv2: z2 * sd,
            jump: u < (lambda * dt).min(1.0),
        }
    }
}

/// Round-trip time `T(Q) = T_p + Q / C`.
pub fn rtt(q: f64, params: &FluidParams) -> f64 {
    params.prop_rtt + q / params.capacity
}

/// Loss-event intensity seen by one flow.
pub fn loss_intensity(state: &FluidState, params: &FluidParams) -> f64 {
    match params.jumps {
        JumpMode::Constant(rate) => rate,
        JumpMode::Off => 0.0,
        JumpMode::Poisson | JumpMode::MeanDrift => {
            let p = drop_probability(state.q_hat, &params.red);
            if p == 0.0 {
                0.0
            } else {
                p * state.w / rtt(state.q, params)
            }
        }
    }
}

/// Deterministic part of the dynamics, excluding noise and jumps:
/// `(1/T, W/T - C, w_q C (Q - Q_hat))`.
pub fn drift(state: &FluidState, params: &FluidParams) -> [f64; 3] {
    let t = rtt(state.q, params);
    [
        1.0 / t,
        state.w / t - params.capacity,
        params.red.w_q * params.capacity * (state.q - state.q_hat),
    ]
}

/// Noise amplitudes `(sigma_W, sigma_Q)` for `mode`.
pub fn diffusion(state: &FluidState, params: &FluidParams, mode: DiffusionMode) -> [f64; 2] {
    if mode == DiffusionMode::Off {
        return [0.0, 0.0];
    }
    let t = rtt(state.q, params);
    let lambda = loss_intensity(state, params);
    let sigma_w = (1.0 / t + 0.5 * state.w * lambda).sqrt();
    let inflow = state.w / t;
    let sigma_q = match mode {
        DiffusionMode::SumRates => (inflow + params.capacity).sqrt(),
        DiffusionMode::AsWrittenClamped => (inflow - params.capacity).max(0.0).sqrt(),
        DiffusionMode::Off => 0.0,
    };
    [sigma_w, sigma_q]
}

/// One Euler–Maruyama step with jump.
pub fn em_step(state: &FluidState, dt: f64, draws: &NoiseDraws, params: &FluidParams) -> Result<FluidState> {
    if !(dt > 0.0) {
        return Err(Error::Integration {
            t: state.t,
            reason: format!("step size must be > 0 (got {dt})"),
        });
    }
    let [dw, dq, dq_hat] = drift(state, params);
    let [sigma_w, sigma_q] = diffusion(state, params, params.diffusion);
    let loss = match params.jumps {
        JumpMode::MeanDrift => 0.5 * state.w * loss_intensity(state, params) * dt,
        JumpMode::Off => 0.0,
        JumpMode::Poisson | JumpMode::Constant(_) => {
            if draws.jump {
                0.5 * state.w
            } else {
                0.0
            }
        }
    };
    let next = FluidState {
        t: state.t + dt,
        w: (state.w + dw * dt - loss + sigma_w * draws.dv1).max(params.w_floor),
        q: (state.q + dq * dt + sigma_q * draws.dv2).clamp(0.0, params.buffer),
        q_hat: state.q_hat + dq_hat * dt,
    };
    if !next.is_finite() {
        return Err(Error::Integration {
            t: state.t,
            reason: format!("non-finite state after step: {next:?}"),
        });
    }
    Ok(next)
}

const MAX_HALVINGS: u32 = 12;

/// Advance by `dt` using `rng`; a failed step is retried as two half steps.
fn advance(state: &FluidState, dt: f64, params: &FluidParams, rng: &mut SimRng, depth: u32) -> Result<FluidState> {
    let lambda = loss_intensity(state, params);
    let draws = NoiseDraws::sample(rng, dt, lambda);
    match em_step(state, dt, &draws, params) {
        Ok(next) => Ok(next),
        Err(e) if depth >= MAX_HALVINGS => Err(e),
        Err(_) => {
            let mid = advance(state, 0.5 * dt, params, rng, depth + 1)?;
            advance(&mid, 0.5 * dt, params, rng, depth + 1)
        }
    }
}

pub const PATH_CHANNELS: [&str; 3] = ["W", "Q", "Q_hat"];

fn check_grid(t_end: f64, dt: f64, sample_interval: f64) -> Result<(usize, usize)> {
    if !(dt > 0.0 && dt.is_finite()) || !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "need dt > 0 and t_end > 0 (got dt = {dt}, t_end = {t_end})"
        )));
    }
    if !(sample_interval >= dt) {
        return Err(Error::InvalidParams(format!(
            "sample_interval {sample_interval} must be >= dt {dt}"
        )));
    }
    let steps = (t_end / dt).round() as usize;
    let every = ((sample_interval / dt).round() as usize).max(1);
    Ok((steps, every))
}

/// One path on the grid `t_k = k dt`, recorded every `sample_interval`.
pub fn simulate_path(
    params: &FluidParams,
    init: FluidState,
    t_end: f64,
    dt: f64,
    sample_interval: f64,
    rng: &mut SimRng,
) -> Result<TimeSeries> {
    params.validate()?;
    let (steps, every) = check_grid(t_end, dt, sample_interval)?;
    let mut series = TimeSeries::new(PATH_CHANNELS);
    let mut s = FluidState { t: 0.0, ..init };
    series.push(0.0, &[s.w, s.q, s.q_hat]);
    for k in 1..=steps {
        s = advance(&s, dt, params, rng, 0)?;
        s.t = k as f64 * dt;
        if k % every == 0 {
            series.push(s.t, &[s.w, s.q, s.q_hat]);
        }
    }
    Ok(series)
}

/// Normalized histogram: `density[i] * (edges[i+1] - edges[i])` sums to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn from_samples(samples: &[f64], bins: usize) -> Result<Self> {
        if samples.is_empty() || bins == 0 {
            return Err(Error::InvalidParams("histogram needs samples and bins".into()));
        }
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
        let mut counts = vec![0u64; bins];
        for &x in samples {
            let i = (((x - lo) / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        let n = samples.len() as f64;
        let density = counts
            .iter()
            .zip(edges.windows(2))
            .map(|(&c, e)| c as f64 / (n * (e[1] - e[0])))
            .collect();
        Ok(Self { edges, density })
    }

    pub fn integral(&self) -> f64 {
        self.density
            .iter()
            .zip(self.edges.windows(2))
            .map(|(d, e)| d * (e[1] - e[0]))
            .sum()
    }

    /// CSV with columns `bin_left,bin_right,density`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("bin_left,bin_right,density\n");
        for (d, e) in self.density.iter().zip(self.edges.windows(2)) {
            out.push_str(&format!("{},{},{}\n", e[0], e[1], d));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub t_end: f64,
    pub dt: f64,
    pub sample_interval: f64,
    pub n_paths: u32,
    pub seed: u64,
    pub bins: usize,
    /// Keep every path's series in the output (memory grows with n_paths).
    pub keep_paths: bool,
    pub execution: Execution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    /// Per-sample ensemble mean and variance of each channel.
    pub stats: TimeSeries,
    /// Empirical densities of `W` and `Q` across paths at `t_end`.
    pub w_density: Histogram,
    pub q_density: Histogram,
    pub paths: Vec<TimeSeries>,
}

/// Paths are simulated in chunks; within a chunk they may run in parallel,
/// and results are always folded in path order, so serial and parallel
/// execution give bit-identical output.
pub fn simulate_paths(params: &FluidParams, init: FluidState, cfg: &EnsembleConfig) -> Result<Ensemble> {
    params.validate()?;
    if cfg.n_paths == 0 {
        return Err(Error::InvalidParams("n_paths must be >= 1".into()));
    }
    check_grid(cfg.t_end, cfg.dt, cfg.sample_interval)?;
    const CHUNK: u32 = 64;
    let run = |i: u32| {
        let mut rng = substream(cfg.seed, Domain::FluidPath, i);
        simulate_path(params, init, cfg.t_end, cfg.dt, cfg.sample_interval, &mut rng)
    };
    let mut sums: Vec<[f64; 6]> = Vec::new();
    let mut times: Vec<f64> = Vec::new();
    let mut final_w = Vec::with_capacity(cfg.n_paths as usize);
    let mut final_q = Vec::with_capacity(cfg.n_paths as usize);
    let mut kept = Vec::new();
    let mut folded = 0u64;
    let mut start = 0;
    while start < cfg.n_paths {
        let end = (start + CHUNK).min(cfg.n_paths);
        let chunk: Vec<Result<TimeSeries>> = match cfg.execution {
            Execution::Serial => (start..end).map(run).collect(),
            Execution::Parallel => (start..end).into_par_iter().map(run).collect(),
        };
        for path in chunk {
            let path = path?;
            if sums.is_empty() {
                sums = vec![[0.0; 6]; path.len()];
                times = path.times().to_vec();
            }
            let cols: Vec<&[f64]> = PATH_CHANNELS.iter().map(|c| path.channel(c).unwrap()).collect();
            // Welford update: [mean; 3] followed by [sum of squared deviations; 3].
            folded += 1;
            let n = folded as f64;
            for (k, acc) in sums.iter_mut().enumerate() {
                for c in 0..3 {
                    let x = cols[c][k];
                    let delta = x - acc[c];
                    acc[c] += delta / n;
                    acc[c + 3] += delta * (x - acc[c]);
                }
            }
            let last = path.len() - 1;
            final_w.push(cols[0][last]);
            final_q.push(cols[1][last]);
            if cfg.keep_paths {
                kept.push(path);
            }
        }
        start = end;
    }
    let n = cfg.n_paths as f64;
    let mut stats = TimeSeries::new(["W_mean", "Q_mean", "Q_hat_mean", "W_var", "Q_var", "Q_hat_var"]);
    for (t, acc) in times.iter().zip(&sums) {
        stats.push(*t, &[acc[0], acc[1], acc[2], acc[3] / n, acc[4] / n, acc[5] / n]);
    }
    Ok(Ensemble {
        stats,
        w_density: Histogram::from_samples(&final_w, cfg.bins)?,
        q_density: Histogram::from_samples(&final_q, cfg.bins)?,
        paths: kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> FluidParams {
        FluidParams::new(100.0, 0.1, 5.0, 15.0, 0.1).unwrap()
    }

    #[test]
    fn rtt_examples() {
        let p = reference();
        assert_eq!(rtt(0.0, &p), 0.1);
        assert!((rtt(10.0, &p) - 0.2).abs() < 1e-15);
        assert!(rtt(11.0, &p) > rtt(10.0, &p));
    }

    #[test]
    fn loss_intensity_examples() {
        let p = reference();
        let s = FluidState::new(20.0, 10.0, 4.0);
        assert_eq!(loss_intensity(&s, &p), 0.0);
        // p(Q_hat = 10) = 0.05, W = 20, T = 0.2
        let s = FluidState::new(20.0, 10.0, 10.0);
        assert!((loss_intensity(&s, &p) - 5.0).abs() < 1e-12);
        let s = FluidState::new(20.0, 10.0, 16.0);
        assert!((loss_intensity(&s, &p) - 100.0).abs() < 1e-12);
        let c = FluidParams {
            jumps: JumpMode::Constant(3.0),
            ..p
        };
        assert_eq!(loss_intensity(&s, &c), 3.0);
    }

    #[test]
    fn drift_examples() {
        let p = reference();
        let d = drift(&FluidState::new(15.0, 10.0, 10.0), &p);
        assert!((d[0] - 5.0).abs() < 1e-12);
        assert!((d[1] + 25.0).abs() < 1e-12);
        assert_eq!(d[2], 0.0);
        // balance point W = C T(Q)
        let d = drift(&FluidState::new(20.0, 10.0, 3.0), &p);
        assert!(d[1].abs() < 1e-12);
    }

    #[test]
    fn diffusion_examples() {
        let p = reference();
        // lambda = 0 (Q_hat below q_min), T = 0.2
        let s = FluidState::new(20.0, 10.0, 0.0);
        let [sw, sq] = diffusion(&s, &p, DiffusionMode::SumRates);
        assert!((sw - 5f64.sqrt()).abs() < 1e-12);
        assert!((sq - 200f64.sqrt()).abs() < 1e-12);
        let [_, sq] = diffusion(&s, &p, DiffusionMode::AsWrittenClamped);
        assert!(sq.abs() < 1e-6);
        let s = FluidState::new(10.0, 10.0, 0.0);
        assert_eq!(diffusion(&s, &p, DiffusionMode::AsWrittenClamped)[1], 0.0);
    }

    #[test]
    fn zero_draw_step_is_euler_drift() {
        let p = FluidParams {
            jumps: JumpMode::Off,
            ..reference()
        };
        let s = FluidState::new(15.0, 10.0, 8.0);
        let dt = 1e-3;
        let n = em_step(&s, dt, &NoiseDraws::default(), &p).unwrap();
        let d = drift(&s, &p);
        assert!((n.w - (s.w + d[0] * dt)).abs() < 1e-15);
        assert!((n.q - (s.q + d[1] * dt)).abs() < 1e-15);
        assert!((n.q_hat - (s.q_hat + d[2] * dt)).abs() < 1e-15);
        assert_eq!(n.t, dt);
    }

    #[test]
    fn jump_halves_window() {
        let p = reference();
        let s = FluidState::new(10.0, 10.0, 8.0);
        let draws = NoiseDraws {
            jump: true,
            ..Default::default()
        };
        let n = em_step(&s, 1e-9, &draws, &p).unwrap();
        assert!((n.w - 5.0).abs() < 1e-6);
    }

    #[test]
    fn clamps_hold() {
        let p = reference();
        let s = FluidState::new(1.0, 0.0, 0.0);
        let draws = NoiseDraws {
            dv1: -10.0,
            dv2: -10.0,
            jump: true,
        };
        let n = em_step(&s, 1e-3, &draws, &p).unwrap();
        assert_eq!(n.w, 1.0);
        assert_eq!(n.q, 0.0);
        let draws = NoiseDraws {
            dv2: 100.0,
            ..Default::default()
        };
        let n = em_step(&FluidState::new(10.0, 49.0, 0.0), 1e-3, &draws, &p).unwrap();
        assert_eq!(n.q, 50.0);
    }

    #[test]
    fn bad_step_rejected() {
        let p = reference();
        assert!(em_step(&FluidState::new(1.0, 0.0, 0.0), 0.0, &NoiseDraws::default(), &p).is_err());
    }

    #[test]
    fn histogram_normalization() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64 / 37.0).collect();
        let h = Histogram::from_samples(&xs, 17).unwrap();
        assert!((h.integral() - 1.0).abs() < 1e-9);
        let h = Histogram::from_samples(&[3.0; 10], 5).unwrap();
        assert!((h.integral() - 1.0).abs() < 1e-12);
        assert!(h.to_csv_string().starts_with("bin_left,bin_right,density\n"));
    }

    fn ens(n_paths: u32, execution: Execution) -> EnsembleConfig {
        EnsembleConfig {
            t_end: 2.0,
            dt: 1e-3,
            sample_interval: 0.1,
            n_paths,
            seed: 17,
            bins: 20,
            keep_paths: true,
            execution,
        }
    }

    #[test]
    fn single_path_ensemble_matches_direct_path() {
        let p = reference();
        let init = FluidState::new(10.0, 5.0, 5.0);
        let e = simulate_paths(&p, init, &ens(1, Execution::Serial)).unwrap();
        let mut rng = substream(17, Domain::FluidPath, 0);
        let direct = simulate_path(&p, init, 2.0, 1e-3, 0.1, &mut rng).unwrap();
        assert_eq!(e.paths[0], direct);
        assert_eq!(e.stats.channel("W_mean").unwrap(), direct.channel("W").unwrap());
    }

    #[test]
    fn noise_free_paths_identical() {
        let p = reference().noise_free();
        let init = FluidState::new(10.0, 5.0, 5.0);
        let e = simulate_paths(&p, init, &ens(8, Execution::Parallel)).unwrap();
        for path in &e.paths[1..] {
            assert_eq!(path, &e.paths[0]);
        }
        assert!(e.stats.channel("W_var").unwrap().iter().all(|&v| v < 1e-20));
    }

    #[test]
    fn parallel_equals_serial() {
        let p = reference();
        let init = FluidState::new(10.0, 5.0, 5.0);
        let a = simulate_paths(&p, init, &ens(130, Execution::Serial)).unwrap();
        let b = simulate_paths(&p, init, &ens(130, Execution::Parallel)).unwrap();
        assert_eq!(a, b);
        assert!((a.w_density.integral() - 1.0).abs() < 1e-9);
        assert!((a.q_density.integral() - 1.0).abs() < 1e-9);
    }

    /// Euler–Maruyama over `[0, t_end]` with step `dt`, using Brownian
    /// increments summed from the finer grid `fine`.
    fn em_on_brownian_path(p: &FluidParams, init: FluidState, fine: &[(f64, f64)], fine_dt: f64, m: usize) -> FluidState {
        let dt = fine_dt * m as f64;
        let mut s = init;
        for block in fine.chunks(m) {
            let draws = NoiseDraws {
                dv1: block.iter().map(|b| b.0).sum(),
                dv2: block.iter().map(|b| b.1).sum(),
                jump: false,
            };
            s = em_step(&s, dt, &draws, p).unwrap();
        }
        s
    }

    /// Mean endpoint error ratios `e(64h)/e(32h)` and `e(32h)/e(16h)` against
    /// the step-`h` solution on shared Brownian paths.
    fn strong_error_ratios(p: &FluidParams) -> (f64, f64) {
        let init = FluidState::new(15.8, 25.0, 5.8);
        let t_end: f64 = 0.25;
        let fine_dt: f64 = 1e-4 / 16.0;
        let n_fine = (t_end / fine_dt).round() as usize;
        let mut errs = [0.0f64; 3];
        for path in 0..64 {
            let mut rng = substream(5, Domain::Synthetic, path);
            let sd = fine_dt.sqrt();
            let fine: Vec<(f64, f64)> = (0..n_fine)
                .map(|_| {
                    let a: f64 = rng.sample(StandardNormal);
                    let b: f64 = rng.sample(StandardNormal);
                    (a * sd, b * sd)
                })
                .collect();
            let reference = em_on_brownian_path(p, init, &fine, fine_dt, 1);
            for (i, m) in [64usize, 32, 16].iter().enumerate() {
                let e = em_on_brownian_path(p, init, &fine, fine_dt, *m);
                errs[i] += (e.w - reference.w).abs() + (e.q - reference.q).abs();
            }
        }
        (errs[0] / errs[1], errs[1] / errs[2])
    }

    #[test]
    fn drift_only_error_halves_with_step() {
        let (r1, r2) = strong_error_ratios(&reference().noise_free());
        assert!((1.6..=2.4).contains(&r1), "ratio {r1}");
        assert!((1.6..=2.4).contains(&r2), "ratio {r2}");
    }

    #[test]
    fn state_dependent_noise_gives_half_order() {
        // The diffusion coefficients depend on (W, Q), so Euler–Maruyama
        // converges strongly at order 1/2: ratio near sqrt(2), not 2.
        let p = FluidParams {
            jumps: JumpMode::MeanDrift,
            ..reference()
        };
        let (r1, r2) = strong_error_ratios(&p);
        assert!((1.2..=1.7).contains(&r1), "ratio {r1}");
        assert!((1.2..=1.7).contains(&r2), "ratio {r2}");
    }

    #[test]
    fn no_loss_window_nondecreasing() {
        // Q_hat stays below q_min: lambda = 0 so W only grows.
        let p = FluidParams {
            diffusion: DiffusionMode::Off,
            ..reference()
        };
        let mut rng = substream(1, Domain::Synthetic, 9);
        let path = simulate_path(&p, FluidState::new(1.0, 0.0, 0.0), 0.5, 1e-3, 1e-3, &mut rng).unwrap();
        let w = path.channel("W").unwrap();
        let qh = path.channel("Q_hat").unwrap();
        assert!(qh.iter().all(|&x| x <= 5.0));
        assert!(w.windows(2).all(|p| p[1] >= p[0]));
    }
}
