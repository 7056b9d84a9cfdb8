//! Convolution-invariant SDR and plain SNR.
//!
//! CI-SDR first fits an FIR filter `h` of `filter_len` taps so that `h * s`
//! best matches the estimate in the least-squares sense, then reports
//!
//! ```text
//! 10 log10( |h*s|^2 / (|h*s - d|^2 + alpha |h*s|^2) ),  alpha = 10^(-sdr_max_db / 10)
//! ```
//!
//! The fit compares the full convolution `h * s` (length `T + L - 1`) with
//! the estimate zero-padded to the same length, so the normal equations are
//! exactly Toeplitz in the autocorrelation of `s`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::signal::convolve;

/// Tikhonov term added to the normal-equation diagonal, relative to the
/// zero-lag autocorrelation.
pub const TIKHONOV: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CISDRConfig {
    /// Filter taps; 512 is 32 ms at 16 kHz.
    pub filter_len: usize,
    /// Soft ceiling on the reported SDR in dB.
    pub sdr_max_db: f64,
}

impl Default for CISDRConfig {
    fn default() -> Self {
        Self {
            filter_len: 512,
            sdr_max_db: 30.0,
        }
    }
}

impl CISDRConfig {
    /// Threshold as printed in the training recipe, `SDR_max = -30 dB`,
    /// plugged literally into `alpha = 10^(-SDR_max / 10)`. This caps every
    /// result below -30 dB and is only kept for reproducing that setting.
    pub fn literal_training_threshold() -> Self {
        Self {
            filter_len: 512,
            sdr_max_db: -30.0,
        }
    }

    pub fn alpha(&self) -> f64 {
        10f64.powf(-self.sdr_max_db / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.filter_len == 0 {
            return Err(Error::InvalidConfig("filter length must be at least 1".into()));
        }
        let a = self.alpha();
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sdr_max_db {} gives invalid alpha",
                self.sdr_max_db
            )));
        }
        Ok(())
    }
}

/// `out[k] = sum_t a[t] b[t + k]` for `k < lags`.
fn cross_correlation(a: &[f64], b: &[f64], lags: usize) -> Vec<f64> {
    let rev: Vec<f64> = a.iter().rev().copied().collect();
    let full = convolve(&rev, b);
    let zero = a.len() - 1;
    (0..lags).map(|k| full.get(zero + k).copied().unwrap_or(0.0)).collect()
}

/// Least-squares FIR filter `h` of `filter_len` taps minimizing
/// `|h * s - d_hat|`.
pub fn ls_filter_estimate(s: &[f64], d_hat: &[f64], filter_len: usize) -> Result<Vec<f64>> {
    if s.len() != d_hat.len() {
        return Err(Error::ShapeMismatch(format!(
            "reference has {} samples, estimate {}",
            s.len(),
            d_hat.len()
        )));
    }
    if filter_len == 0 || s.len() < filter_len {
        return Err(Error::InvalidConfig(format!(
            "filter length {filter_len} for {} samples",
            s.len()
        )));
    }
    if s.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroReference);
    }
    let r = cross_correlation(s, s, filter_len);
    let p = cross_correlation(s, d_hat, filter_len);
    let l = filter_len;
    let mut a = vec![0.0; l * l];
    for i in 0..l {
        for j in 0..l {
            a[i * l + j] = r[i.abs_diff(j)];
        }
        a[i * l + i] += TIKHONOV * r[0];
    }
    solve_spd(&mut a, &p).ok_or_else(|| Error::InvalidConfig("singular normal equations".into()))
}

/// Energies `(|h*s|^2, |h*s - d_hat|^2)` for a fitted filter.
fn projection_energies(s: &[f64], d_hat: &[f64], h: &[f64]) -> (f64, f64) {
    let proj = convolve(s, h);
    let mut signal = 0.0;
    let mut residual = 0.0;
    for (t, p) in proj.iter().enumerate() {
        let d = d_hat.get(t).copied().unwrap_or(0.0);
        signal += p * p;
        residual += (p - d) * (p - d);
    }
    (signal, residual)
}

/// CI-SDR in dB, positive is better. The training loss is its negation.
pub fn ci_sdr(s: &[f64], d_hat: &[f64], cfg: &CISDRConfig) -> Result<f64> {
    cfg.validate()?;
    let h = ls_filter_estimate(s, d_hat, cfg.filter_len)?;
    let (signal, residual) = projection_energies(s, d_hat, &h);
    Ok(10.0 * (signal / (residual + cfg.alpha() * signal)).log10())
}

pub fn snr_db(signal: &[f64], noise: &[f64]) -> Result<f64> {
    if signal.len() != noise.len() {
        return Err(Error::ShapeMismatch(format!(
            "signal has {} samples, noise {}",
            signal.len(),
            noise.len()
        )));
    }
    let es: f64 = signal.iter().map(|v| v * v).sum();
    let en: f64 = noise.iter().map(|v| v * v).sum();
    if en <= 0.0 {
        return Err(Error::ZeroNoise);
    }
    Ok(10.0 * (es / en).log10())
}
