//! Random Early Detection: EWMA queue estimate, drop function and the
//! Bernoulli drop decision.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RED thresholds, maximum drop probability and EWMA weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RedParams {
    pub q_min: f64,
    pub q_max: f64,
    pub p_max: f64,
    pub w_q: f64,
}

impl RedParams {
    pub fn new(q_min: f64, q_max: f64, p_max: f64, w_q: f64) -> Result<Self> {
        let params = Self {
            q_min,
            q_max,
            p_max,
            w_q,
        };
        params.validate()?;
        Ok(params)
    }

    /// Parameters with `w_q` derived from the link's service rate.
    pub fn for_capacity(q_min: f64, q_max: f64, p_max: f64, capacity: f64) -> Result<Self> {
        Self::new(q_min, q_max, p_max, ewma_weight(capacity)?)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.q_min, self.q_max, self.p_max, self.w_q]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidParams("RED parameters must be finite".into()));
        }
        if self.q_min < 0.0 || self.q_min >= self.q_max {
            return Err(Error::InvalidParams(format!(
                "RED thresholds need 0 <= q_min < q_max (got q_min = {}, q_max = {})",
                self.q_min, self.q_max
            )));
        }
        if !(self.p_max > 0.0 && self.p_max <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "p_max must lie in (0, 1] (got {})",
                self.p_max
            )));
        }
        if !(self.w_q > 0.0 && self.w_q < 1.0) {
            return Err(Error::InvalidParams(format!(
                "w_q must lie in (0, 1) (got {})",
                self.w_q
            )));
        }
        Ok(())
    }
}

/// Instantaneous and averaged queue length seen by the RED control block.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QueueObservation {
    pub q: f64,
    pub q_hat: f64,
}

/// EWMA weight for a link serving `capacity` packets per second:
/// `1 - exp(-1 / capacity)`.
pub fn ewma_weight(capacity: f64) -> Result<f64> {
    if !capacity.is_finite() || capacity <= 0.0 {
        return Err(Error::Domain {
            what: "capacity",
            value: capacity,
            constraint: "must be finite and > 0",
        });
    }
    // -expm1(-x) keeps full precision when 1/capacity is tiny.
    Ok(-(-1.0 / capacity).exp_m1())
}

/// One step of `q_hat <- (1 - w_q) q_hat + w_q q`.
pub fn ewma_update(q_hat: f64, q: f64, w_q: f64) -> Result<f64> {
    if !(w_q > 0.0 && w_q < 1.0) {
        return Err(Error::Domain {
            what: "w_q",
            value: w_q,
            constraint: "must lie in (0, 1)",
        });
    }
    if !q_hat.is_finite() || !q.is_finite() {
        return Err(Error::Domain {
            what: "queue length",
            value: if q_hat.is_finite() { q } else { q_hat },
            constraint: "must be finite",
        });
    }
    let next = (1.0 - w_q) * q_hat + w_q * q;
    // Rounding can push the convex combination a hair outside its bracket.
    Ok(next.clamp(q_hat.min(q), q_hat.max(q)))
}

/// Piecewise-linear RED drop function: zero up to `q_min`, a ramp up to
/// `p_max` at `q_max` (inclusive), and one above `q_max`.
pub fn drop_probability(q_hat: f64, params: &RedParams) -> f64 {
    if q_hat <= params.q_min {
        0.0
    } else if q_hat <= params.q_max {
        (q_hat - params.q_min) / (params.q_max - params.q_min) * params.p_max
    } else {
        1.0
    }
}

/// Which piece of the drop function a queue average falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RedRegion {
    /// `q_hat <= q_min`
    NoDrop,
    /// `q_min < q_hat <= q_max`
    Linear,
    /// `q_hat > q_max`
    ForcedDrop,
}

impl RedRegion {
    pub fn of(q_hat: f64, params: &RedParams) -> Self {
        if q_hat <= params.q_min {
            Self::NoDrop
        } else if q_hat <= params.q_max {
            Self::Linear
        } else {
            Self::ForcedDrop
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::NoDrop => "no_drop",
            Self::Linear => "linear",
            Self::ForcedDrop => "forced_drop",
        }
    }
}

/// Bernoulli trial with success probability `p`. Consumes exactly one
/// uniform draw from `rng` regardless of `p`.
pub fn drop_decision<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Result<bool> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain {
            what: "drop probability",
            value: p,
            constraint: "must lie in [0, 1]",
        });
    }
    let u: f64 = rng.random();
    Ok(u < p)
}
