//! Error bars and fits for sampled data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Jackknife over `blocks` contiguous blocks of equally long series. `f` maps the vector
/// of observable means to the derived quantity. Returns `(f(means), standard error)`.
pub fn jackknife(series: &[Vec<f64>], blocks: usize, f: impl Fn(&[f64]) -> f64) -> (f64, f64) {
    let k = series.len();
    let n = series.first().map_or(0, Vec::len);
    let full: Vec<f64> = series.iter().map(|s| s.iter().sum::<f64>() / n as f64).collect();
    let value = f(&full);
    let blocks = blocks.min(n);
    if blocks < 2 {
        return (value, f64::NAN);
    }
    let bounds: Vec<usize> = (0..=blocks).map(|b| b * n / blocks).collect();
    let totals: Vec<f64> = series.iter().map(|s| s.iter().sum()).collect();
    let mut leave_out = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let (lo, hi) = (bounds[b], bounds[b + 1]);
        let len = (n - (hi - lo)) as f64;
        let means: Vec<f64> = (0..k).map(|i| (totals[i] - series[i][lo..hi].iter().sum::<f64>()) / len).collect();
        leave_out.push(f(&means));
    }
    let mean = leave_out.iter().sum::<f64>() / blocks as f64;
    let var = leave_out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() * (blocks as f64 - 1.0) / blocks as f64;
    (value, var.sqrt())
}

/// Integrated autocorrelation time `½ + Σ_t ρ(t)` with the self-consistent window
/// `t ≤ 6 τ`.
pub fn integrated_autocorrelation(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return 0.5;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let c0 = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return 0.5;
    }
    let mut tau = 0.5;
    for t in 1..n / 2 {
        let ct = (0..n - t).map(|i| (series[i] - mean) * (series[i + t] - mean)).sum::<f64>() / n as f64;
        tau += ct / c0;
        if t as f64 >= 6.0 * tau {
            break;
        }
    }
    tau.max(0.5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationFit {
    /// Amplitude `K` in `|c| ≈ K exp(-d / ℓ)`.
    pub amplitude: f64,
    /// Correlation length; infinite when the data do not decay.
    pub length: f64,
    /// RMS residual of `ln |c|`.
    pub residual: f64,
    pub decaying: bool,
    /// Points dropped because the correlation was not positive.
    pub dropped: Vec<(f64, f64)>,
}

/// Least squares fit of `ln |c| = ln K - d / ℓ`.
pub fn correlation_length_fit(points: &[(f64, f64)]) -> Result<CorrelationFit> {
    let (kept, dropped): (Vec<(f64, f64)>, Vec<(f64, f64)>) =
        points.iter().copied().partition(|&(d, c)| c > 0.0 && c.is_finite() && d.is_finite());
    if !dropped.is_empty() {
        log::warn!("correlation fit dropped {} non-positive points", dropped.len());
    }
    let mut distances: Vec<f64> = kept.iter().map(|p| p.0).collect();
    distances.sort_by(f64::total_cmp);
    distances.dedup();
    if distances.len() < 2 {
        return Err(Error::Fit(format!("need at least two distinct distances, got {}", distances.len())));
    }
    let n = kept.len() as f64;
    let mx = kept.iter().map(|p| p.0).sum::<f64>() / n;
    let my = kept.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxx: f64 = kept.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = kept.iter().map(|p| (p.0 - mx) * (p.1.ln() - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (kept.iter().map(|p| (p.1.ln() - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    let decaying = slope < -1e-12;
    Ok(CorrelationFit {
        amplitude: intercept.exp(),
        length: if decaying { -1.0 / slope } else { f64::INFINITY },
        residual,
        decaying,
        dropped,
    })
}
