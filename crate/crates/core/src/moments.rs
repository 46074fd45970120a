//! First-moment equations of the fluid model.
//!
//! Means of `W`, `Q` and `Q_hat` under the mean-field closure
//! `E[f(X)] = f(E[X])` (covariances dropped). The jump term of the
//! stochastic model becomes the continuous loss drift `-(W/2) lambda`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluid::{rtt, FluidParams};
use crate::red::{drop_probability, RedRegion};
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentState {
    pub t: f64,
    pub w: f64,
    pub q: f64,
    pub q_hat: f64,
}

impl MomentState {
    pub fn new(w: f64, q: f64, q_hat: f64) -> Self {
        Self { t: 0.0, w, q, q_hat }
    }

    fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.w, self.q, self.q_hat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    #[serde(rename = "W_star")]
    pub w: f64,
    #[serde(rename = "Q_star")]
    pub q: f64,
    #[serde(rename = "Q_hat_star")]
    pub q_hat: f64,
    /// Max-norm of `rhs` at the returned point.
    pub residual: f64,
    pub branch: RedRegion,
}

pub const RESIDUAL_TOL: f64 = 1e-10;
const MAX_NEWTON: usize = 100;

fn rhs_with(w: f64, q: f64, q_hat: f64, p: f64, params: &FluidParams) -> [f64; 3] {
    let t = rtt(q, params);
    let lambda = p * w / t;
    [
        1.0 / t - 0.5 * w * lambda,
        w / t - params.capacity,
        params.red.w_q * params.capacity * (q - q_hat),
    ]
}

/// Time derivative of the mean state.
pub fn rhs(state: &MomentState, params: &FluidParams) -> [f64; 3] {
    let p = drop_probability(state.q_hat, &params.red);
    rhs_with(state.w, state.q, state.q_hat, p, params)
}

/// `rhs` at the clamped state, with derivatives pointing out of the clamp
/// set zeroed. Agrees with `rhs` in the interior.
fn projected_rhs(s: &MomentState, params: &FluidParams) -> [f64; 3] {
    let c = clamp_state(*s, params);
    let mut d = rhs(&c, params);
    if c.w <= params.w_floor && d[0] < 0.0 {
        d[0] = 0.0;
    }
    if (c.q <= 0.0 && d[1] < 0.0) || (c.q >= params.buffer && d[1] > 0.0) {
        d[1] = 0.0;
    }
    d
}

fn clamp_state(s: MomentState, params: &FluidParams) -> MomentState {
    MomentState {
        w: s.w.max(params.w_floor),
        q: s.q.clamp(0.0, params.buffer),
        ..s
    }
}

/// One classic RK4 step on the projected field, followed by the clamps.
pub fn rk4_step(s: &MomentState, dt: f64, params: &FluidParams) -> Result<MomentState> {
    let at = |base: &MomentState, k: &[f64; 3], h: f64| MomentState {
        t: base.t + h,
        w: base.w + h * k[0],
        q: base.q + h * k[1],
        q_hat: base.q_hat + h * k[2],
    };
    let k1 = projected_rhs(s, params);
    let k2 = projected_rhs(&at(s, &k1, 0.5 * dt), params);
    let k3 = projected_rhs(&at(s, &k2, 0.5 * dt), params);
    let k4 = projected_rhs(&at(s, &k3, dt), params);
    let mut k = [0.0; 3];
    for i in 0..3 {
        k[i] = (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
    }
    let next = clamp_state(at(s, &k, dt), params);
    if !(next.w.is_finite() && next.q.is_finite() && next.q_hat.is_finite()) {
        return Err(Error::Integration {
            t: s.t,
            reason: format!("non-finite moment state after step: {next:?}"),
        });
    }
    Ok(next)
}

/// RK4 on the grid `k dt` up to `t_end`, recording every step.
pub fn integrate(params: &FluidParams, init: MomentState, t_end: f64, dt: f64) -> Result<TimeSeries> {
    integrate_sampled(params, init, t_end, dt, dt)
}

/// As [`integrate`], recording a row every `sample_interval` (rounded to a
/// whole number of steps).
pub fn integrate_sampled(
    params: &FluidParams,
    init: MomentState,
    t_end: f64,
    dt: f64,
    sample_interval: f64,
) -> Result<TimeSeries> {
    params.validate()?;
    if !(dt > 0.0 && dt.is_finite()) || !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "need dt > 0 and t_end >= 0 (got dt = {dt}, t_end = {t_end})"
        )));
    }
    let steps = (t_end / dt).round() as usize;
    let every = ((sample_interval / dt).round() as usize).max(1);
    let mut series = TimeSeries::new(["W", "Q", "Q_hat"]);
    let mut s = MomentState { t: 0.0, ..init };
    series.push(0.0, &[s.w, s.q, s.q_hat]);
    for k in 1..=steps {
        s = rk4_step(&s, dt, params)?;
        s.t = k as f64 * dt;
        if k % every == 0 || k == steps {
            series.push(s.t, &[s.w, s.q, s.q_hat]);
        }
    }
    Ok(series)
}

fn max_norm(v: &[f64; 3]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Damped Newton on `rhs = 0` with the drop function fixed to one branch's
/// formula (the linear ramp extended beyond its interval, or `p = 1`).
fn newton(params: &FluidParams, guess: Vector3<f64>, branch: RedRegion) -> Result<Vector3<f64>> {
    let red = params.red;
    let p_of = |q_hat: f64| match branch {
        RedRegion::ForcedDrop => 1.0,
        _ => (q_hat - red.q_min) / (red.q_max - red.q_min) * red.p_max,
    };
    let min_q = -params.capacity * params.prop_rtt;
    let f = |x: &Vector3<f64>| -> Option<[f64; 3]> {
        if !(x[1] > min_q) || !x.iter().all(|v| v.is_finite()) {
            return None;
        }
        let r = rhs_with(x[0], x[1], x[2], p_of(x[2]), params);
        r.iter().all(|v| v.is_finite()).then_some(r)
    };
    let mut x = guess;
    let mut fx = f(&x).ok_or_else(|| Error::InvalidParams(format!("initial guess {x:?} outside the model domain")))?;
    for _ in 0..MAX_NEWTON {
        let norm = max_norm(&fx);
        if norm <= 0.1 * RESIDUAL_TOL {
            return Ok(x);
        }
        let mut jac = Matrix3::zeros();
        for j in 0..3 {
            let h = 1e-6 * x[j].abs().max(1.0);
            let (mut xp, mut xm) = (x, x);
            xp[j] += h;
            xm[j] -= h;
            let (Some(fp), Some(fm)) = (f(&xp), f(&xm)) else {
                break;
            };
            for i in 0..3 {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let Some(step) = jac.lu().solve(&Vector3::from(fx)) else {
            break;
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-6 {
            let trial = x - step * alpha;
            if let Some(ft) = f(&trial) {
                if max_norm(&ft) < norm * (1.0 - 1e-4 * alpha) {
                    x = trial;
                    fx = ft;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            // Stalled at rounding level counts as converged.
            if norm <= RESIDUAL_TOL {
                return Ok(x);
            }
            break;
        }
    }
    if max_norm(&fx) <= RESIDUAL_TOL {
        return Ok(x);
    }
    Err(Error::NoConvergence {
        iterations: MAX_NEWTON,
        residual: max_norm(&fx),
        last: [x[0], x[1], x[2]],
    })
}

/// Steady state of the moment equations.
///
/// Solves on the linear drop branch first; if that root lies above `q_max`
/// the `p = 1` branch is solved instead. A ramp root at or below `q_min`
/// cannot exist (it would need `p <= 0`).
pub fn fixed_point(params: &FluidParams, initial_guess: MomentState) -> Result<Equilibrium> {
    params.validate()?;
    let red = params.red;
    let guess = initial_guess.vector();
    let finish = |x: Vector3<f64>, branch: RedRegion| -> Result<Equilibrium> {
        let s = MomentState::new(x[0], x[1], x[2]);
        let residual = max_norm(&rhs(&s, params));
        if residual > RESIDUAL_TOL {
            return Err(Error::NoConvergence {
                iterations: MAX_NEWTON,
                residual,
                last: [x[0], x[1], x[2]],
            });
        }
        Ok(Equilibrium {
            w: x[0],
            q: x[1],
            q_hat: x[2],
            residual,
            branch,
        })
    };
    let linear = newton(params, guess, RedRegion::Linear);
    match linear {
        Ok(x) if x[2] > red.q_min && x[2] <= red.q_max => finish(x, RedRegion::Linear),
        Ok(x) if x[2] <= red.q_min => Err(Error::NoEquilibrium(format!(
            "linear-branch root Q_hat = {} is not above q_min = {}",
            x[2], red.q_min
        ))),
        other => {
            // Root above q_max, or no ramp root from this guess.
            let start = Vector3::new(2f64.sqrt(), red.q_max + 1.0, red.q_max + 1.0);
            match newton(params, start, RedRegion::ForcedDrop) {
                Ok(x) if x[2] > red.q_max => finish(x, RedRegion::ForcedDrop),
                Ok(x) => Err(Error::NoEquilibrium(format!(
                    "no root on either branch: ramp {:?}, forced-drop root Q_hat = {} not above q_max = {}",
                    other.map(|v| v[2]).ok(),
                    x[2],
                    red.q_max
                ))),
                Err(e) => Err(other.err().unwrap_or(e)),
            }
        }
    }
}

/// `g(Q) = (C T(Q))^2 p(Q) - 2`, zero exactly at an equilibrium queue.
pub fn scalar_reduction(q: f64, params: &FluidParams) -> f64 {
    let w = params.capacity * rtt(q, params);
    w * w * drop_probability(q, &params.red) - 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> FluidParams {
        FluidParams::new(100.0, 0.1, 5.0, 15.0, 0.1).unwrap()
    }

    fn bisect(mut lo: f64, mut hi: f64, g: impl Fn(f64) -> f64) -> f64 {
        assert!(g(lo) < 0.0 && g(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn rhs_examples() {
        let p = reference();
        let r = rhs(&MomentState::new(15.0, 10.0, 10.0), &p);
        assert!((r[0] + 23.125).abs() < 1e-12);
        let r = rhs(&MomentState::new(15.0, 10.0, 2.0), &p);
        assert!((r[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn algebraic_equilibrium_zeroes_rhs() {
        let p = reference();
        let q = bisect(5.0, 15.0, |q| (10.0 + q).powi(2) * (q - 5.0) - 200.0);
        let s = MomentState::new(100.0 * rtt(q, &p), q, q);
        assert!(max_norm(&rhs(&s, &p)) < 1e-11);
    }

    #[test]
    fn reference_fixed_point_matches_bisection() {
        let p = reference();
        let eq = fixed_point(&p, MomentState::new(10.0, 8.0, 8.0)).unwrap();
        let oracle = bisect(5.0, 15.0, |q| (10.0 + q).powi(2) * (q - 5.0) - 200.0);
        assert!((eq.q - oracle).abs() < 1e-8);
        assert!(((10.0 + eq.q).powi(2) * (eq.q - 5.0) - 200.0).abs() < 1e-8);
        assert!((eq.q - 5.80).abs() < 0.01 && (eq.w - 15.80).abs() < 0.01);
        assert!(eq.residual <= RESIDUAL_TOL);
        assert_eq!(eq.q_hat, eq.q);
        assert_eq!(eq.branch, RedRegion::Linear);
        assert!(scalar_reduction(eq.q, &p).abs() < 1e-8);
    }

    #[test]
    fn degenerate_high_drop_regime() {
        let mut p = reference();
        p.red.p_max = 1.0;
        p.red.q_min = 0.0;
        let eq = fixed_point(&p, MomentState::new(10.0, 5.0, 5.0)).unwrap();
        assert!(eq.w >= 2f64.sqrt());
        let pq = drop_probability(eq.q, &p.red);
        assert!((eq.w - (2.0 / pq).sqrt()).abs() < 1e-8);
    }

    #[test]
    fn forced_drop_branch_reported() {
        // With T_p = 0, W = Q; the ramp root (Q near 2.6) lies above
        // q_max = 1, while the p = 1 root W = Q = sqrt 2 is consistent.
        let mut p = reference();
        p.red.q_min = 0.2;
        p.red.q_max = 1.0;
        p.prop_rtt = 0.0;
        let eq = fixed_point(&p, MomentState::new(0.6, 0.6, 0.6)).unwrap();
        assert_eq!(eq.branch, RedRegion::ForcedDrop);
        assert!((eq.w - 2f64.sqrt()).abs() < 1e-9);
        assert!((eq.q - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn sliding_boundary_has_no_equilibrium() {
        // Ramp root above q_max but the p = 1 root below it.
        let mut p = reference();
        p.red.q_min = 0.5;
        p.red.q_max = 2.0;
        p.prop_rtt = 0.0;
        assert!(matches!(
            fixed_point(&p, MomentState::new(1.0, 1.0, 1.0)),
            Err(Error::NoEquilibrium(_))
        ));
    }

    #[test]
    fn equilibrium_json_keys() {
        let eq = fixed_point(&reference(), MomentState::new(10.0, 8.0, 8.0)).unwrap();
        let v = serde_json::to_value(eq).unwrap();
        for k in ["W_star", "Q_star", "Q_hat_star", "residual", "branch"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(v["branch"], "linear");
    }

    #[test]
    fn constant_at_equilibrium() {
        let p = reference();
        let eq = fixed_point(&p, MomentState::new(10.0, 8.0, 8.0)).unwrap();
        let ts = integrate(&p, MomentState::new(eq.w, eq.q, eq.q_hat), 1.0, 1e-3).unwrap();
        for c in ["W", "Q", "Q_hat"] {
            let col = ts.channel(c).unwrap();
            assert!(col.iter().all(|v| (v - col[0]).abs() < 1e-9));
        }
    }

    #[test]
    fn fourth_order_richardson() {
        let p = reference();
        let init = MomentState::new(16.5, 6.5, 6.0);
        let end = |dt: f64| {
            let ts = integrate(&p, init, 1.0, dt).unwrap();
            ts.last_row().unwrap()
        };
        let (a, b, c) = (end(4e-3), end(2e-3), end(1e-3));
        let ratio = (a[0] - b[0]).abs() / (b[0] - c[0]).abs();
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn converges_from_empty_start() {
        let p = reference();
        let eq = fixed_point(&p, MomentState::new(10.0, 8.0, 8.0)).unwrap();
        let ts = integrate_sampled(&p, MomentState::new(1.0, 0.0, 0.0), 60.0, 1e-3, 0.1).unwrap();
        let last = ts.last_row().unwrap();
        assert!(((last[0] - eq.w) / eq.w).abs() < 1e-4);
        assert!(((last[1] - eq.q) / eq.q).abs() < 1e-4);
    }

    #[test]
    fn q_hat_is_first_order_lag() {
        // Freeze Q by balancing inflow: W = C T(Q), and keep p = 0 with
        // thresholds far above so W only drifts slowly.
        let mut p = reference();
        p.red.q_min = 1e3;
        p.red.q_max = 2e3;
        p.buffer = 5e3;
        let q0 = 10.0;
        let s = MomentState::new(100.0 * rtt(q0, &p), q0, 0.0);
        let dt = 1e-4;
        let ts = integrate(&p, s, 0.01, dt).unwrap();
        let rate = p.red.w_q * p.capacity;
        let t = ts.times();
        let qh = ts.channel("Q_hat").unwrap();
        let q = ts.channel("Q").unwrap();
        // Over a short window Q moves little; compare to the closed form.
        for i in (0..t.len()).step_by(20) {
            let expect = q0 * (1.0 - (-rate * t[i]).exp());
            assert!((qh[i] - expect).abs() < 1e-3 + (q[i] - q0).abs(), "t {}", t[i]);
        }
    }

    #[test]
    fn bad_guess_domain() {
        let p = reference();
        assert!(fixed_point(&p, MomentState::new(10.0, -100.0, 8.0)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn fixed_point_residual_and_bisection(
            p_max in 0.02f64..0.5,
            q_min in 1.0f64..8.0,
            span in 4.0f64..20.0,
            c in 50.0f64..400.0,
            tp in 0.02f64..0.3,
        ) {
            let params = FluidParams::new(c, tp, q_min, q_min + span, p_max).unwrap();
            let params = FluidParams { buffer: 1e4, ..params };
            let mid = q_min + 0.5 * span;
            let eq = fixed_point(&params, MomentState::new(c * rtt(mid, &params), mid, mid)).unwrap();
            let s = MomentState::new(eq.w, eq.q, eq.q_hat);
            prop_assert!(max_norm(&rhs(&s, &params)) <= RESIDUAL_TOL);
            if eq.branch == RedRegion::Linear {
                let g = |q| scalar_reduction(q, &params);
                let oracle = bisect(q_min + 1e-12, q_min + span, g);
                prop_assert!((eq.q - oracle).abs() < 1e-8 * oracle.max(1.0));
            } else {
                prop_assert!(eq.q > q_min + span);
            }
        }
    }
}
