use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Domain};
use crate::scenario::Scenario;

/// Scenario parameters a box may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    PMax,
    QMin,
    QMax,
    WQ,
    LinkCapacity,
    PropRtt,
    NFlows,
}

impl Param {
    pub const ALL: [Param; 7] = [
        Param::PMax,
        Param::QMin,
        Param::QMax,
        Param::WQ,
        Param::LinkCapacity,
        Param::PropRtt,
        Param::NFlows,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Param::PMax => "p_max",
            Param::QMin => "q_min",
            Param::QMax => "q_max",
            Param::WQ => "w_q",
            Param::LinkCapacity => "link_capacity",
            Param::PropRtt => "prop_rtt",
            Param::NFlows => "n_flows",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == name)
    }

    /// Write `value` into `s`; `n_flows` rounds to the nearest integer.
    pub fn apply(self, s: &mut Scenario, value: f64) {
        match self {
            Param::PMax => s.p_max = value,
            Param::QMin => s.q_min = value,
            Param::QMax => s.q_max = value,
            Param::WQ => s.w_q = Some(value),
            Param::LinkCapacity => s.capacity = value,
            Param::PropRtt => s.prop_rtt = value,
            Param::NFlows => s.n_flows = value.round().max(1.0) as u32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDim {
    pub param: Param,
    pub lower: f64,
    pub upper: f64,
}

/// Axis-aligned region of scenario space; unlisted parameters come from
/// `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    dims: Vec<BoxDim>,
    base: Scenario,
}

impl ParameterBox {
    /// Every corner must give a valid scenario. The constraints involved
    /// (`q_min < q_max`, positivity, ranges) are monotone in each
    /// coordinate, so checking corners covers the whole box.
    pub fn new(dims: Vec<BoxDim>, base: Scenario) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Surrogate("parameter box needs at least one dimension".into()));
        }
        for (i, d) in dims.iter().enumerate() {
            if !(d.lower.is_finite() && d.upper.is_finite() && d.lower < d.upper) {
                return Err(Error::Surrogate(format!(
                    "dimension `{}` needs finite bounds with lower < upper (got [{}, {}])",
                    d.param.as_str(),
                    d.lower,
                    d.upper
                )));
            }
            if dims[..i].iter().any(|e| e.param == d.param) {
                return Err(Error::Surrogate(format!(
                    "dimension `{}` listed twice",
                    d.param.as_str()
                )));
            }
        }
        if dims.len() > 16 {
            return Err(Error::Surrogate("at most 16 dimensions are supported".into()));
        }
        let b = Self { dims, base };
        for mask in 0u32..(1 << b.dims.len()) {
            let corner: Vec<f64> = b
                .dims
                .iter()
                .enumerate()
                .map(|(i, d)| if mask >> i & 1 == 1 { d.upper } else { d.lower })
                .collect();
            let s = b.scenario(&corner)?;
            s.fluid().map_err(|e| {
                Error::Surrogate(format!("box corner {corner:?} gives an invalid scenario: {e}"))
            })?;
        }
        Ok(b)
    }

    pub fn dims(&self) -> &[BoxDim] {
        &self.dims
    }

    pub fn base(&self) -> &Scenario {
        &self.base
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.dims.iter().map(|d| d.param.as_str().to_string()).collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims.len() {
            return Err(Error::Dimension {
                expected: self.dims.len(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dims.len()
            && x.iter().zip(&self.dims).all(|(v, d)| *v >= d.lower && *v <= d.upper)
    }

    /// Map to the unit cube.
    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(x.iter()
            .zip(&self.dims)
            .map(|(v, d)| (v - d.lower) / (d.upper - d.lower))
            .collect())
    }

    pub fn denormalize(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(u)?;
        Ok(u.iter()
            .zip(&self.dims)
            .map(|(v, d)| d.lower + v * (d.upper - d.lower))
            .collect())
    }

    /// The base scenario with the box coordinates `x` applied.
    pub fn scenario(&self, x: &[f64]) -> Result<Scenario> {
        self.check_dim(x)?;
        let mut s = self.base;
        for (d, &v) in self.dims.iter().zip(x) {
            d.param.apply(&mut s, v);
        }
        Ok(s)
    }
}

/// Latin hypercube plan: along every dimension the `n` points fall in `n`
/// distinct equal-width bins, jittered uniformly inside their bin.
pub fn sample_plan(b: &ParameterBox, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n < 2 {
        return Err(Error::Surrogate(format!("sample plan needs n >= 2 (got {n})")));
    }
    let mut rng = substream(seed, Domain::SamplePlan, 0);
    let mut unit = vec![vec![0.0; b.len()]; n];
    #[allow(clippy::needless_range_loop)]
    for j in 0..b.len() {
        let mut bins: Vec<usize> = (0..n).collect();
        bins.shuffle(&mut rng);
        for (i, bin) in bins.into_iter().enumerate() {
            let jitter: f64 = rng.random();
            // Keep the point inside its own bin even after rounding.
            unit[i][j] = ((bin as f64 + jitter) / n as f64).min((bin + 1) as f64 / n as f64 * (1.0 - f64::EPSILON));
        }
    }
    unit.iter().map(|u| b.denormalize(u)).collect()
}
