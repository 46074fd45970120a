//! Periodogram-based detection of self-oscillation in a trajectory.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{interpolate, uniform_grid, TimeSeries};

pub const MIN_SAMPLES: usize = 64;
pub const DEFAULT_THRESHOLD: f64 = 5.0;
/// Half-width, in bins, of the moving average applied before the ratio test.
const SMOOTH_HALF: usize = 2;
/// Half-width, in bins, of the band whose power defines the amplitude.
const BAND_HALF: usize = 4;
const RATIO_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillationReport {
    pub detected: bool,
    /// s; 0 when the signal has no variation.
    pub dominant_period: f64,
    /// Packets (units of the channel).
    pub amplitude: f64,
    /// Smoothed peak power over the median smoothed power, capped at 1e12.
    pub spectral_peak_ratio: f64,
    pub threshold: f64,
    pub samples: usize,
}

/// Samples of `channel` from `cutoff` on, linearly resampled at the median
/// positive sampling interval (repeated time stamps are allowed).
fn uniform_samples(series: &TimeSeries, channel: &str, cutoff: f64) -> Result<(Vec<f64>, f64)> {
    let t = series.times();
    let y = series.require(channel)?;
    let mut steps: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
    if steps.is_empty() {
        return Err(Error::Series(format!("`{channel}` has fewer than two distinct time stamps")));
    }
    steps.sort_by(f64::total_cmp);
    let step = steps[steps.len() / 2];
    let start = t[0].max(cutoff);
    let end = t[t.len() - 1];
    if start >= end {
        return Err(Error::Series(format!("no samples after the cutoff {cutoff}")));
    }
    let grid = uniform_grid(start, end, step);
    Ok((grid.iter().map(|&g| interpolate(t, y, g).unwrap()).collect(), step))
}

/// Detect a dominant oscillation in `channel` after `cutoff`.
///
/// The mean is removed and the periodogram `|X_k|^2` taken over the
/// positive frequencies. A 5-bin moving average smooths it, and the signal
/// counts as oscillating when the smoothed maximum is at least `threshold`
/// times the smoothed median. The period comes from the raw peak refined by
/// a parabola through the log powers of its neighbours. The amplitude is
/// `sqrt(2)` times the RMS carried by the 9 bins around the peak.
pub fn detect_oscillation(series: &TimeSeries, channel: &str, cutoff: f64, threshold: f64) -> Result<OscillationReport> {
    if !(threshold > 1.0) {
        return Err(Error::InvalidParams(format!("threshold must be > 1 (got {threshold})")));
    }
    let (x, step) = uniform_samples(series, channel, cutoff)?;
    let n = x.len();
    if n < MIN_SAMPLES {
        return Err(Error::Series(format!(
            "oscillation detection needs at least {MIN_SAMPLES} samples after the cutoff (got {n})"
        )));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    let variance = buf.iter().map(|c| c.re * c.re).sum::<f64>() / n as f64;
    let flat = OscillationReport {
        detected: false,
        dominant_period: 0.0,
        amplitude: 0.0,
        spectral_peak_ratio: 0.0,
        threshold,
        samples: n,
    };
    // Rounding noise of a constant signal is not an oscillation.
    if variance.sqrt() <= 1e-12 * scale {
        return Ok(flat);
    }
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    // Bins 1..=half; index 0 of `power` is bin 1.
    let power: Vec<f64> = buf[1..=half].iter().map(|c| c.norm_sqr()).collect();
    let m = power.len();
    let smoothed: Vec<f64> = (0..m)
        .map(|i| {
            let lo = i.saturating_sub(SMOOTH_HALF);
            let hi = (i + SMOOTH_HALF).min(m - 1);
            power[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let mut sorted = smoothed.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[m / 2];
    let peak_smoothed = sorted[m - 1];
    let ratio = if median > 0.0 {
        (peak_smoothed / median).min(RATIO_CAP)
    } else {
        RATIO_CAP
    };

    let k = (0..m).max_by(|&a, &b| power[a].total_cmp(&power[b]).then(b.cmp(&a))).unwrap();
    let offset = if k > 0 && k + 1 < m && power[k - 1] > 0.0 && power[k + 1] > 0.0 {
        let (a, b, c) = (power[k - 1].ln(), power[k].ln(), power[k + 1].ln());
        let denom = a - 2.0 * b + c;
        if denom < 0.0 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 }
    } else {
        0.0
    };
    let freq = (k as f64 + 1.0 + offset) / (n as f64 * step);

    // Parseval: mean square = (1/n^2) sum over all bins; positive bins other
    // than Nyquist have a mirrored twin.
    let lo = k.saturating_sub(BAND_HALF);
    let hi = (k + BAND_HALF).min(m - 1);
    let band: f64 = (lo..=hi)
        .map(|i| {
            let bin = i + 1;
            let twin = if 2 * bin == n { 1.0 } else { 2.0 };
            twin * power[i]
        })
        .sum();
    let rms = band.sqrt() / n as f64;

    Ok(OscillationReport {
        detected: ratio >= threshold,
        dominant_period: 1.0 / freq,
        amplitude: 2f64.sqrt() * rms,
        spectral_peak_ratio: ratio,
        threshold,
        samples: n,
    })
}
