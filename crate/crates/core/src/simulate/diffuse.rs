//! Spherically isotropic diffuse noise by spatial coherence shaping.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use super::{distance, Point, SPEED_OF_SOUND};
use crate::error::{Error, Result};
use crate::seed::keyed_rng;

const EIGEN_FLOOR: f64 = 1e-10;

/// `sin(x) / x` with the removable singularity filled in.
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Target coherence between two points `d` metres apart at `f` Hz.
pub fn spherical_coherence(f: f64, d: f64) -> f64 {
    sinc(2.0 * std::f64::consts::PI * f * d / SPEED_OF_SOUND)
}

/// Real mixing matrix `C` with `C C^T = gamma`. Falls back to an
/// eigendecomposition with floored eigenvalues when Cholesky fails.
fn coherence_factor(gamma: DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = gamma.clone().cholesky() {
        return c.l();
    }
    let eig = SymmetricEigen::new(gamma);
    let mut v = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(EIGEN_FLOOR).sqrt();
        v.column_mut(j).scale_mut(s);
    }
    v
}

pub fn diffuse_noise(mics: &[Point], len: usize, fs: u32, seed: u64) -> Result<Vec<Vec<f64>>> {
    diffuse_noise_with(mics, len, fs, &mut keyed_rng(seed, "diffuse"))
}

/// `len` samples of unit-variance noise per microphone whose pairwise
/// coherence follows the spherically isotropic model.
pub fn diffuse_noise_with<R: Rng>(mics: &[Point], len: usize, fs: u32, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let m = mics.len();
    if m == 0 {
        return Err(Error::NoChannels);
    }
    for i in 0..m {
        for j in i + 1..m {
            if distance(&mics[i], &mics[j]) < 1e-6 {
                return Err(Error::Scene(format!("microphones {i} and {j} coincide")));
            }
        }
    }
    if len == 0 {
        return Ok(vec![Vec::new(); m]);
    }
    let nfft = len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);

    let mut spectra: Vec<Vec<Complex64>> = (0..m)
        .map(|_| {
            let mut buf: Vec<Complex64> = (0..nfft)
                .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
                .collect();
            fwd.process(&mut buf);
            buf
        })
        .collect();

    let dist: Vec<Vec<f64>> = mics
        .iter()
        .map(|a| mics.iter().map(|b| distance(a, b)).collect())
        .collect();
    let mut out = vec![vec![Complex64::new(0.0, 0.0); nfft]; m];
    let mut x = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..=nfft / 2 {
        let f = k as f64 * fs as f64 / nfft as f64;
        let gamma = DMatrix::from_fn(m, m, |i, j| spherical_coherence(f, dist[i][j]));
        let c = coherence_factor(gamma);
        // the same real factor on k and nfft - k keeps the output real
        for bin in [k, (nfft - k) % nfft] {
            for (xi, s) in x.iter_mut().zip(&spectra) {
                *xi = s[bin];
            }
            for (i, o) in out.iter_mut().enumerate() {
                o[bin] = (0..m).map(|j| x[j] * c[(i, j)]).sum();
            }
        }
    }
    spectra.clear();
    Ok(out
        .into_iter()
        .map(|mut s| {
            inv.process(&mut s);
            s.iter().take(len).map(|v| v.re / nfft as f64).collect()
        })
        .collect())
}
