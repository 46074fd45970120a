//! Timestamped multi-channel trajectories and their CSV form.
//!
//! CSV layout: a header `t,<channel>,...`, then one newline-terminated row
//! per sample. Numbers use Rust's shortest round-trip formatting with '.'
//! as decimal separator, so identical series always serialize to identical
//! bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeries {
    names: Vec<String>,
    t: Vec<f64>,
    columns: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let columns = vec![Vec::new(); names.len()];
        Self {
            names,
            t: Vec::new(),
            columns,
        }
    }

    pub fn push(&mut self, t: f64, row: &[f64]) {
        assert_eq!(row.len(), self.names.len(), "row width mismatch");
        self.t.push(t);
        for (col, &v) in self.columns.iter_mut().zip(row) {
            col.push(v);
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn require(&self, name: &str) -> Result<&[f64]> {
        self.channel(name)
            .ok_or_else(|| Error::Series(format!("missing channel `{name}`")))
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn last_row(&self) -> Option<Vec<f64>> {
        (!self.is_empty()).then(|| self.row(self.len() - 1))
    }

    /// Linear interpolation of `name` at time `at`; clamps outside the range.
    pub fn interpolate(&self, name: &str, at: f64) -> Result<f64> {
        let ys = self.require(name)?;
        interpolate(&self.t, ys, at)
            .ok_or_else(|| Error::Series("cannot interpolate an empty series".into()))
    }

    /// Time average of a channel over `[from, end]`, treating samples as a
    /// piecewise-linear signal.
    pub fn time_average(&self, name: &str, from: f64) -> Result<f64> {
        let ys = self.require(name)?;
        let mut area = 0.0;
        let mut span = 0.0;
        for i in 1..self.t.len() {
            let (t0, t1) = (self.t[i - 1], self.t[i]);
            if t1 <= from {
                continue;
            }
            let (a, y0) = if t0 < from {
                (from, interpolate(&self.t[i - 1..=i], &ys[i - 1..=i], from).unwrap())
            } else {
                (t0, ys[i - 1])
            };
            area += 0.5 * (y0 + ys[i]) * (t1 - a);
            span += t1 - a;
        }
        if span <= 0.0 {
            return Err(Error::Series(format!(
                "no samples after t = {from} to average `{name}`"
            )));
        }
        Ok(area / span)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.len() * (self.names.len() + 1) * 12);
        out.push('t');
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for i in 0..self.len() {
            write!(out, "{}", self.t[i]).unwrap();
            for col in &self.columns {
                write!(out, ",{}", col[i]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    /// Parse CSV text with a `t` column. Columns that are not numeric on
    /// every row (phase labels and the like) are skipped.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Series("empty CSV".into()))?
            .split(',')
            .map(str::trim)
            .collect();
        let t_idx = header
            .iter()
            .position(|h| *h == "t")
            .ok_or_else(|| Error::Series("CSV has no `t` column".into()))?;
        let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').map(str::trim).collect()).collect();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != header.len() {
                return Err(Error::Series(format!(
                    "row {} has {} fields, header has {}",
                    i + 2,
                    r.len(),
                    header.len()
                )));
            }
        }
        let parse_col = |j: usize| -> Option<Vec<f64>> {
            rows.iter().map(|r| r[j].parse::<f64>().ok()).collect()
        };
        let t = parse_col(t_idx).ok_or_else(|| Error::Series("non-numeric `t` value".into()))?;
        let mut names = Vec::new();
        let mut columns = Vec::new();
        for (j, name) in header.iter().enumerate() {
            if j == t_idx {
                continue;
            }
            if let Some(col) = parse_col(j) {
                names.push(name.to_string());
                columns.push(col);
            }
        }
        Ok(Self { names, t, columns })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text)
    }
}

/// Piecewise-linear interpolation on sorted abscissae; clamps at the ends.
pub fn interpolate(xs: &[f64], ys: &[f64], at: f64) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    if at <= xs[0] {
        return Some(ys[0]);
    }
    let last = xs.len() - 1;
    if at >= xs[last] {
        return Some(ys[last]);
    }
    let hi = xs.partition_point(|&x| x <= at);
    let lo = hi - 1;
    let (x0, x1) = (xs[lo], xs[hi]);
    if x1 == x0 {
        return Some(ys[hi]);
    }
    let w = (at - x0) / (x1 - x0);
    Some(ys[lo] + w * (ys[hi] - ys[lo]))
}

/// Uniform grid `start, start + step, ...` not exceeding `end`.
pub fn uniform_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}
