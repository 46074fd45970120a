use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plan::ParameterBox;
use crate::des::simulate_dumbbell;
use crate::error::{Error, Result};
use crate::fluid::{rtt, simulate_paths, EnsembleConfig, Execution, FluidState};
use crate::moments::{fixed_point, MomentState};
use crate::rng::replication_seed;
use crate::scenario::Scenario;

/// A simulator reduced to scalar responses at a scenario.
pub trait Evaluator: Sync {
    fn name(&self) -> String;
    fn response_names(&self) -> Vec<String>;
    fn evaluate(&self, scenario: &Scenario, seed: u64) -> Result<Vec<f64>>;
    /// Settings recorded alongside the dataset.
    fn settings(&self) -> serde_json::Value {
        serde_json::Value::Null
    }
}

/// Built-in evaluators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelEvaluator {
    /// Moment-model equilibrium: `Q_star`, `W_star`.
    Moments,
    /// Packet-level run: post-transient `mean_q`, `drop_fraction`,
    /// `throughput`.
    Des {
        duration: f64,
        sample_interval: f64,
        transient_fraction: f64,
    },
    /// Langevin ensemble: post-transient time averages of the ensemble
    /// means, `mean_w` and `mean_q`.
    Fluid {
        n_paths: u32,
        t_end: f64,
        dt: f64,
        sample_interval: f64,
        transient_fraction: f64,
    },
}

impl Evaluator for ModelEvaluator {
    fn name(&self) -> String {
        match self {
            Self::Moments => "moments",
            Self::Des { .. } => "des",
            Self::Fluid { .. } => "fluid",
        }
        .into()
    }

    fn response_names(&self) -> Vec<String> {
        let names: &[&str] = match self {
            Self::Moments => &["Q_star", "W_star"],
            Self::Des { .. } => &["mean_q", "drop_fraction", "throughput"],
            Self::Fluid { .. } => &["mean_w", "mean_q"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    fn evaluate(&self, scenario: &Scenario, seed: u64) -> Result<Vec<f64>> {
        match *self {
            Self::Moments => {
                let p = scenario.fluid()?;
                let mid = 0.5 * (p.red.q_min + p.red.q_max);
                let guess = MomentState::new(p.capacity * rtt(mid, &p), mid, mid);
                let eq = fixed_point(&p, guess)?;
                Ok(vec![eq.q, eq.w])
            }
            Self::Des {
                duration,
                sample_interval,
                transient_fraction,
            } => {
                let out = simulate_dumbbell(&scenario.des(duration, seed, sample_interval)?)?;
                let mean_q = out.series.time_average("q", transient_fraction * duration)?;
                Ok(vec![mean_q, out.summary.drop_fraction, out.summary.throughput])
            }
            Self::Fluid {
                n_paths,
                t_end,
                dt,
                sample_interval,
                transient_fraction,
            } => {
                let cfg = EnsembleConfig {
                    t_end,
                    dt,
                    sample_interval,
                    n_paths,
                    seed,
                    bins: 10,
                    keep_paths: false,
                    execution: Execution::Serial,
                };
                let e = simulate_paths(&scenario.fluid()?, FluidState::new(1.0, 0.0, 0.0), &cfg)?;
                let from = transient_fraction * t_end;
                Ok(vec![
                    e.stats.time_average("W_mean", from)?,
                    e.stats.time_average("Q_mean", from)?,
                ])
            }
        }
    }

    fn settings(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    pub point: Vec<f64>,
    /// Mean over replications.
    pub mean: Vec<f64>,
    /// Sample standard deviation over replications (0 for one replication).
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedPoint {
    pub index: usize,
    pub point: Vec<f64>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub evaluator: String,
    pub settings: serde_json::Value,
    pub seed: u64,
    pub replications: u32,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub param_box: ParameterBox,
    pub response_names: Vec<String>,
    pub rows: Vec<DesignRow>,
    pub failures: Vec<FailedPoint>,
    pub provenance: Provenance,
}

/// Sidecar contents: everything except the rows.
#[derive(Serialize, Deserialize)]
struct Sidecar {
    param_box: ParameterBox,
    input_names: Vec<String>,
    response_names: Vec<String>,
    failures: Vec<FailedPoint>,
    provenance: Provenance,
}

impl Dataset {
    pub fn input_names(&self) -> Vec<String> {
        self.param_box.names()
    }

    /// Column `j` of the response means.
    pub fn response(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean[j]).collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.point.clone()).collect()
    }

    /// Checks row widths and that every point lies in the box.
    pub fn validate(&self) -> Result<()> {
        let d = self.param_box.len();
        let m = self.response_names.len();
        for (i, r) in self.rows.iter().enumerate() {
            if r.point.len() != d || r.mean.len() != m || r.std.len() != m {
                return Err(Error::Surrogate(format!("dataset row {i} has the wrong width")));
            }
            if !self.param_box.contains(&r.point) {
                return Err(Error::Surrogate(format!("dataset row {i} lies outside the box")));
            }
        }
        Ok(())
    }

    /// CSV: input columns, response means, then `<response>_std` columns.
    pub fn to_csv_string(&self) -> String {
        let mut header = self.input_names();
        header.extend(self.response_names.iter().cloned());
        header.extend(self.response_names.iter().map(|n| format!("{n}_std")));
        let mut out = header.join(",");
        out.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r
                .point
                .iter()
                .chain(&r.mean)
                .chain(&r.std)
                .map(|v| v.to_string())
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn sidecar_path(csv: &Path) -> PathBuf {
        csv.with_extension("json")
    }

    fn sidecar_json(&self) -> Result<String> {
        let s = Sidecar {
            param_box: self.param_box.clone(),
            input_names: self.input_names(),
            response_names: self.response_names.clone(),
            failures: self.failures.clone(),
            provenance: self.provenance.clone(),
        };
        Ok(serde_json::to_string_pretty(&s)? + "\n")
    }

    /// Writes `csv` and its JSON sidecar next to it.
    pub fn write(&self, csv: &Path) -> Result<()> {
        std::fs::write(csv, self.to_csv_string()).map_err(|e| Error::io(csv, e))?;
        let side = Self::sidecar_path(csv);
        std::fs::write(&side, self.sidecar_json()?).map_err(|e| Error::io(&side, e))
    }

    pub fn read(csv: &Path) -> Result<Self> {
        let side = Self::sidecar_path(csv);
        let meta: Sidecar = serde_json::from_str(
            &std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?,
        )?;
        let text = std::fs::read_to_string(csv).map_err(|e| Error::io(csv, e))?;
        let d = meta.input_names.len();
        let m = meta.response_names.len();
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Surrogate("empty dataset CSV".into()))?
            .split(',')
            .collect();
        if header.len() != d + 2 * m {
            return Err(Error::Surrogate(format!(
                "dataset CSV has {} columns, sidecar implies {}",
                header.len(),
                d + 2 * m
            )));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Surrogate(format!("dataset CSV row {}: {e}", i + 2)))?;
            if vals.len() != header.len() {
                return Err(Error::Surrogate(format!("dataset CSV row {} is ragged", i + 2)));
            }
            rows.push(DesignRow {
                point: vals[..d].to_vec(),
                mean: vals[d..d + m].to_vec(),
                std: vals[d + m..].to_vec(),
            });
        }
        let ds = Self {
            param_box: meta.param_box,
            response_names: meta.response_names,
            rows,
            failures: meta.failures,
            provenance: meta.provenance,
        };
        ds.validate()?;
        Ok(ds)
    }
}

fn mean_std(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let m = samples[0].len();
    let mean: Vec<f64> = (0..m).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n).collect();
    let std = (0..m)
        .map(|j| {
            if samples.len() < 2 {
                0.0
            } else {
                let ss: f64 = samples.iter().map(|s| (s[j] - mean[j]).powi(2)).sum();
                (ss / (n - 1.0)).sqrt()
            }
        })
        .collect();
    (mean, std)
}

/// Evaluate every point `replications` times with split seeds. Points are
/// independent and run in parallel; results keep the input order. A point
/// whose evaluation fails becomes a failure record.
pub fn evaluate_design(
    param_box: &ParameterBox,
    points: &[Vec<f64>],
    evaluator: &dyn Evaluator,
    replications: u32,
    seed: u64,
) -> Result<Dataset> {
    if replications == 0 {
        return Err(Error::Surrogate("replications must be >= 1".into()));
    }
    for (i, p) in points.iter().enumerate() {
        if !param_box.contains(p) {
            return Err(Error::Surrogate(format!("design point {i} {p:?} lies outside the box")));
        }
    }
    let names = evaluator.response_names();
    let results: Vec<std::result::Result<DesignRow, FailedPoint>> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let fail = |e: Error| FailedPoint {
                index: i,
                point: p.clone(),
                error: e.to_string(),
            };
            let scenario = param_box.scenario(p).map_err(fail)?;
            let mut samples = Vec::with_capacity(replications as usize);
            for r in 0..replications {
                let s = replication_seed(seed, ((i as u64) << 32) | r as u64);
                let v = evaluator.evaluate(&scenario, s).map_err(fail)?;
                if v.len() != names.len() || v.iter().any(|x| !x.is_finite()) {
                    return Err(fail(Error::Surrogate(format!(
                        "evaluator returned {v:?} for responses {names:?}"
                    ))));
                }
                samples.push(v);
            }
            let (mean, std) = mean_std(&samples);
            Ok(DesignRow {
                point: p.clone(),
                mean,
                std,
            })
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(f) => failures.push(f),
        }
    }
    Ok(Dataset {
        param_box: param_box.clone(),
        response_names: names,
        rows,
        failures,
        provenance: Provenance {
            evaluator: evaluator.name(),
            settings: evaluator.settings(),
            seed,
            replications,
            version: env!("CARGO_PKG_VERSION").into(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::plan::{sample_plan, BoxDim, Param};

    fn small_box() -> ParameterBox {
        ParameterBox::new(
            vec![
                BoxDim { param: Param::PMax, lower: 0.05, upper: 0.2 },
                BoxDim { param: Param::QMin, lower: 3.0, upper: 7.0 },
            ],
            Scenario::reference(),
        )
        .unwrap()
    }

    struct Flaky;

    impl Evaluator for Flaky {
        fn name(&self) -> String {
            "flaky".into()
        }
        fn response_names(&self) -> Vec<String> {
            vec!["y".into()]
        }
        fn evaluate(&self, s: &Scenario, seed: u64) -> Result<Vec<f64>> {
            if s.q_min > 6.5 {
                return Err(Error::NoConvergence {
                    iterations: 100,
                    residual: 1.0,
                    last: [0.0; 3],
                });
            }
            Ok(vec![s.p_max + (seed % 7) as f64])
        }
    }

    #[test]
    fn moments_dataset_is_deterministic() {
        let b = small_box();
        let pts = sample_plan(&b, 8, 1).unwrap();
        let a = evaluate_design(&b, &pts, &ModelEvaluator::Moments, 1, 5).unwrap();
        let c = evaluate_design(&b, &pts, &ModelEvaluator::Moments, 1, 99).unwrap();
        assert_eq!(a.rows, c.rows);
        assert_eq!(a.rows.len(), 8);
        assert_eq!(a.response_names, vec!["Q_star", "W_star"]);
        for r in &a.rows {
            assert!(r.mean[0] > 3.0 && r.mean[0] < 15.0);
            assert_eq!(r.std, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn failures_are_recorded() {
        let b = small_box();
        let pts = vec![vec![0.1, 4.0], vec![0.1, 6.9], vec![0.15, 5.0]];
        let d = evaluate_design(&b, &pts, &Flaky, 3, 1).unwrap();
        assert_eq!(d.rows.len(), 2);
        assert_eq!(d.failures.len(), 1);
        assert_eq!(d.failures[0].index, 1);
        assert!(d.failures[0].error.contains("converge"));
    }

    #[test]
    fn replication_mean_and_std() {
        let b = small_box();
        let d = evaluate_design(&b, &[vec![0.1, 4.0]], &Flaky, 10, 3).unwrap();
        let samples: Vec<f64> = (0..10u64)
            .map(|r| 0.1 + (replication_seed(3, r) % 7) as f64)
            .collect();
        let mean = samples.iter().sum::<f64>() / 10.0;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 9.0;
        assert!((d.rows[0].mean[0] - mean).abs() < 1e-12);
        assert!((d.rows[0].std[0] - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn outside_point_rejected() {
        let b = small_box();
        assert!(evaluate_design(&b, &[vec![0.5, 4.0]], &Flaky, 1, 1).is_err());
    }

    #[test]
    fn csv_sidecar_round_trip() {
        let b = small_box();
        let pts = sample_plan(&b, 6, 2).unwrap();
        let d = evaluate_design(&b, &pts, &ModelEvaluator::Moments, 1, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("design.csv");
        d.write(&path).unwrap();
        assert!(Dataset::sidecar_path(&path).exists());
        let back = Dataset::read(&path).unwrap();
        assert_eq!(back, d);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("p_max,q_min,Q_star,W_star,Q_star_std,W_star_std\n"));
    }
}
