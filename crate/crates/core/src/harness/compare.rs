//! Cross-model comparison of time series on a common grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{interpolate, uniform_grid, TimeSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    pub abs_diff: f64,
    /// `|a - b| / |b|`; absent when `b` is zero and `a` is not.
    pub rel_diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDistance {
    pub channel_a: String,
    pub channel_b: String,
    pub mean_abs_diff: f64,
    pub max_abs_diff: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub cutoff: f64,
    pub grid_start: f64,
    pub grid_step: f64,
    pub samples: usize,
    pub metrics: Vec<MetricRow>,
    pub distances: Vec<ChannelDistance>,
}

impl ComparisonReport {
    pub fn metric(&self, name: &str) -> Option<&MetricRow> {
        self.metrics.iter().find(|m| m.metric == name)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("metric,a,b,abs_diff,rel_diff\n");
        for m in &self.metrics {
            let rel = m.rel_diff.map(|r| r.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{}\n", m.metric, m.a, m.b, m.abs_diff, rel));
        }
        out
    }
}

fn mean_step(t: &[f64]) -> f64 {
    if t.len() < 2 {
        return 0.0;
    }
    (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64
}

fn rel(a: f64, b: f64) -> Option<f64> {
    if a == b {
        Some(0.0)
    } else if b == 0.0 {
        None
    } else {
        Some((a - b).abs() / b.abs())
    }
}

fn stats(v: &[f64]) -> [(&'static str, f64); 4] {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    [("mean", mean), ("std", var.sqrt()), ("min", min), ("max", max)]
}

/// Compare channel pairs `(name in a, name in b)`. Both series are
/// resampled by linear interpolation onto a uniform grid over their common
/// time range from `cutoff` on; the step is the coarser of the two mean
/// sampling intervals. Relative differences take `b` as the reference.
pub fn compare_channels(
    a: &TimeSeries,
    b: &TimeSeries,
    cutoff: f64,
    pairs: &[(&str, &str)],
) -> Result<ComparisonReport> {
    if pairs.is_empty() {
        return Err(Error::Series("no channels to compare".into()));
    }
    let (ta, tb) = (a.times(), b.times());
    if ta.is_empty() || tb.is_empty() {
        return Err(Error::Series("cannot compare an empty series".into()));
    }
    let lo = ta[0].max(tb[0]);
    let hi = ta[ta.len() - 1].min(tb[tb.len() - 1]);
    if lo > hi {
        return Err(Error::Series(format!(
            "time ranges are disjoint ([{}, {}] and [{}, {}])",
            ta[0],
            ta[ta.len() - 1],
            tb[0],
            tb[tb.len() - 1]
        )));
    }
    let start = lo.max(cutoff);
    let step = mean_step(ta).max(mean_step(tb));
    let grid = if step > 0.0 && hi > start {
        uniform_grid(start, hi, step)
    } else if start <= hi {
        vec![start]
    } else {
        vec![]
    };
    if grid.is_empty() {
        return Err(Error::Series(format!(
            "no overlap after the cutoff {cutoff} (common range ends at {hi})"
        )));
    }
    let mut metrics = Vec::new();
    let mut distances = Vec::new();
    for &(ca, cb) in pairs {
        let ya = a.require(ca)?;
        let yb = b.require(cb)?;
        let va: Vec<f64> = grid.iter().map(|&t| interpolate(ta, ya, t).unwrap()).collect();
        let vb: Vec<f64> = grid.iter().map(|&t| interpolate(tb, yb, t).unwrap()).collect();
        let label = if ca == cb { ca.to_string() } else { format!("{ca}~{cb}") };
        for ((name, x), (_, y)) in stats(&va).into_iter().zip(stats(&vb)) {
            metrics.push(MetricRow {
                metric: format!("{name}({label})"),
                a: x,
                b: y,
                abs_diff: (x - y).abs(),
                rel_diff: rel(x, y),
            });
        }
        let d: Vec<f64> = va.iter().zip(&vb).map(|(x, y)| (x - y).abs()).collect();
        let n = d.len() as f64;
        distances.push(ChannelDistance {
            channel_a: ca.to_string(),
            channel_b: cb.to_string(),
            mean_abs_diff: d.iter().sum::<f64>() / n,
            max_abs_diff: d.iter().copied().fold(0.0, f64::max),
            rmse: (d.iter().map(|x| x * x).sum::<f64>() / n).sqrt(),
        });
    }
    Ok(ComparisonReport {
        cutoff,
        grid_start: grid[0],
        grid_step: step,
        samples: grid.len(),
        metrics,
        distances,
    })
}

/// Compare every channel name the two series share.
pub fn compare(a: &TimeSeries, b: &TimeSeries, cutoff: f64) -> Result<ComparisonReport> {
    let shared: Vec<(&str, &str)> = a
        .names()
        .iter()
        .filter(|n| b.names().contains(n))
        .map(|n| (n.as_str(), n.as_str()))
        .collect();
    if shared.is_empty() {
        return Err(Error::Series("the series share no channel names".into()));
    }
    compare_channels(a, b, cutoff, &shared)
}
