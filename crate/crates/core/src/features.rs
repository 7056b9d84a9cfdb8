//! Magnitude and inter-channel phase difference features.
//!
//! For every frame the mask estimator sees a `2F x M` matrix: the first `F`
//! rows hold `|y_m(f)|`, the last `F` rows the phase of `y_m(f)` relative to
//! the channel-averaged spectrum.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::Spectrogram;

/// Variance floor used in magnitude normalization.
pub const NORM_EPS: f64 = 1e-8;

/// Real feature tensor indexed `(k, n, m)` with `k < 2F`.
///
/// Stored channel-major so that one channel's feature sequence is a
/// contiguous `N x 2F` row-major block.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    values: Vec<f64>,
    num_bins: usize,
    num_frames: usize,
    num_channels: usize,
}

impl FeatureTensor {
    pub fn zeros(num_bins: usize, num_frames: usize, num_channels: usize) -> Self {
        Self {
            values: vec![0.0; 2 * num_bins * num_frames * num_channels],
            num_bins,
            num_frames,
            num_channels,
        }
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    /// Feature rows per frame, `2F`.
    pub fn feature_dim(&self) -> usize {
        2 * self.num_bins
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    #[inline]
    fn index(&self, k: usize, n: usize, m: usize) -> usize {
        (m * self.num_frames + n) * 2 * self.num_bins + k
    }

    #[inline]
    pub fn get(&self, k: usize, n: usize, m: usize) -> f64 {
        self.values[self.index(k, n, m)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, n: usize, m: usize, v: f64) {
        let i = self.index(k, n, m);
        self.values[i] = v;
    }

    /// `N x 2F` row-major feature sequence of channel `m`.
    pub fn channel(&self, m: usize) -> &[f64] {
        let len = self.num_frames * 2 * self.num_bins;
        &self.values[m * len..(m + 1) * len]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn select_channels(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::NoChannels);
        }
        let mut values = Vec::with_capacity(indices.len() * self.channel(0).len());
        for &m in indices {
            if m >= self.num_channels {
                return Err(Error::InvalidChannel {
                    index: m,
                    channels: self.num_channels,
                });
            }
            values.extend_from_slice(self.channel(m));
        }
        Ok(Self {
            values,
            num_channels: indices.len(),
            ..*self
        })
    }
}

pub fn extract_features(spec: &Spectrogram) -> Result<FeatureTensor> {
    let (nf, nn, nm) = (spec.num_bins(), spec.num_frames(), spec.num_channels());
    if nm == 0 {
        return Err(Error::NoChannels);
    }
    let mut z = FeatureTensor::zeros(nf, nn, nm);
    for n in 0..nn {
        for f in 0..nf {
            let mean: Complex64 = (0..nm).map(|m| spec.get(f, n, m)).sum::<Complex64>() / nm as f64;
            for m in 0..nm {
                let y = spec.get(f, n, m);
                z.set(f, n, m, y.norm());
                // arg(y / mean) = arg(y * conj(mean)); zero mean or zero y
                // give atan2(0, 0) = 0.
                let ipd = if mean == Complex64::new(0.0, 0.0) {
                    0.0
                } else {
                    wrap_phase((y * mean.conj()).arg())
                };
                z.set(nf + f, n, m, ipd);
            }
        }
    }
    Ok(z)
}

/// Maps `-pi` to `+pi` so phases lie in `(-pi, pi]`.
fn wrap_phase(p: f64) -> f64 {
    if p <= -std::f64::consts::PI {
        p + 2.0 * std::f64::consts::PI
    } else {
        p
    }
}

/// Per-utterance normalization over frames, separately for every
/// `(row, channel)` pair: magnitude rows get zero mean and unit variance,
/// phase rows get zero mean.
pub fn normalize_features(z: &FeatureTensor) -> Result<FeatureTensor> {
    let nn = z.num_frames;
    if nn < 2 {
        return Err(Error::TooFewFrames { needed: 2, got: nn });
    }
    let nf = z.num_bins;
    let mut out = z.clone();
    for m in 0..z.num_channels {
        for k in 0..2 * nf {
            let mean = (0..nn).map(|n| z.get(k, n, m)).sum::<f64>() / nn as f64;
            let scale = if k < nf {
                let var = (0..nn).map(|n| (z.get(k, n, m) - mean).powi(2)).sum::<f64>() / nn as f64;
                1.0 / (var + NORM_EPS).sqrt()
            } else {
                1.0
            };
            for n in 0..nn {
                out.set(k, n, m, (z.get(k, n, m) - mean) * scale);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn spec_from(values: &[Vec<Complex64>]) -> Spectrogram {
        // values[m][n] for a single-bin spectrogram
        let nm = values.len();
        let nn = values[0].len();
        let mut s = Spectrogram::zeros(1, nn, nm, 0, 0);
        for (m, row) in values.iter().enumerate() {
            for (n, v) in row.iter().enumerate() {
                s.set(0, n, m, *v);
            }
        }
        s
    }

    #[test]
    fn two_channel_ipd_by_hand() {
        let s = spec_from(&[vec![Complex64::new(1.0, 0.0)], vec![Complex64::new(0.0, 1.0)]]);
        let z = extract_features(&s).unwrap();
        assert!((z.get(0, 0, 0) - 1.0).abs() < 1e-15);
        assert!((z.get(0, 0, 1) - 1.0).abs() < 1e-15);
        assert!((z.get(1, 0, 0) + PI / 4.0).abs() < 1e-12);
        assert!((z.get(1, 0, 1) - PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn identical_channels_and_mono_have_zero_ipd() {
        let y = vec![Complex64::new(0.3, -1.2), Complex64::new(-2.0, 0.5)];
        let z = extract_features(&spec_from(&[y.clone(), y.clone(), y.clone()])).unwrap();
        for m in 0..3 {
            for n in 0..2 {
                assert_eq!(z.get(1, n, m), 0.0);
            }
        }
        let z1 = extract_features(&spec_from(std::slice::from_ref(&y))).unwrap();
        for n in 0..2 {
            assert_eq!(z1.get(1, n, 0), 0.0);
            assert_eq!(z1.get(0, n, 0), y[n].norm());
        }
    }

    #[test]
    fn zero_mean_bin_has_zero_ipd() {
        let s = spec_from(&[vec![Complex64::new(1.0, 0.0)], vec![Complex64::new(-1.0, 0.0)]]);
        let z = extract_features(&s).unwrap();
        assert_eq!(z.get(1, 0, 0), 0.0);
        assert_eq!(z.get(1, 0, 1), 0.0);
    }

    #[test]
    fn normalization_examples() {
        let mut z = FeatureTensor::zeros(1, 2, 1);
        z.set(0, 0, 0, 0.0);
        z.set(0, 1, 0, 2.0);
        z.set(1, 0, 0, PI / 4.0);
        z.set(1, 1, 0, PI / 4.0);
        let out = normalize_features(&z).unwrap();
        let expect = 1.0 / (1.0 + NORM_EPS).sqrt();
        assert!((out.get(0, 0, 0) + expect).abs() < 1e-15);
        assert!((out.get(0, 1, 0) - expect).abs() < 1e-15);
        assert_eq!(out.get(1, 0, 0), 0.0);
        assert_eq!(out.get(1, 1, 0), 0.0);

        let mut c = FeatureTensor::zeros(1, 5, 1);
        for n in 0..5 {
            c.set(0, n, 0, 3.5);
        }
        assert!(normalize_features(&c).unwrap().channel(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn normalization_needs_two_frames() {
        let z = FeatureTensor::zeros(3, 1, 2);
        assert!(matches!(
            normalize_features(&z),
            Err(Error::TooFewFrames { needed: 2, got: 1 })
        ));
    }

    fn arb_spec() -> impl Strategy<Value = Spectrogram> {
        (1usize..5, 2usize..6, 1usize..4).prop_flat_map(|(nm, nn, nf)| {
            prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), nm * nn * nf).prop_map(move |v| {
                let data = v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect();
                Spectrogram::from_data(data, nf, nn, nm, 0, 0).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn ipd_in_half_open_range(s in arb_spec()) {
            let z = extract_features(&s).unwrap();
            for m in 0..z.num_channels() {
                for n in 0..z.num_frames() {
                    for f in 0..z.num_bins() {
                        let p = z.get(z.num_bins() + f, n, m);
                        prop_assert!(p > -PI && p <= PI);
                    }
                }
            }
        }

        #[test]
        fn permutation_equivariant(s in arb_spec(), seed in any::<u64>()) {
            let nm = s.num_channels();
            let mut perm: Vec<usize> = (0..nm).collect();
            // deterministic shuffle from the seed
            let mut x = seed;
            for i in (1..nm).rev() {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (x >> 33) as usize % (i + 1));
            }
            let z = extract_features(&s).unwrap();
            let zp = extract_features(&s.select_channels(&perm).unwrap()).unwrap();
            let expect = z.select_channels(&perm).unwrap();
            for (a, b) in zp.values().iter().zip(expect.values()) {
                // the channel mean is summed in a different order
                let d = (a - b).abs();
                prop_assert!(d < 1e-9 || (d - 2.0 * PI).abs() < 1e-9, "{a} vs {b}");
            }
        }

        #[test]
        fn normalized_magnitude_moments(
            rows in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 8), 1..4)
        ) {
            let nf = rows.len();
            let mut z = FeatureTensor::zeros(nf, 8, 1);
            for (f, row) in rows.iter().enumerate() {
                for (n, v) in row.iter().enumerate() {
                    z.set(f, n, 0, *v);
                }
            }
            let out = normalize_features(&z).unwrap();
            for (f, row) in rows.iter().enumerate() {
                let mean = row.iter().sum::<f64>() / 8.0;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
                let vals: Vec<f64> = (0..8).map(|n| out.get(f, n, 0)).collect();
                let nm = vals.iter().sum::<f64>() / 8.0;
                prop_assert!(nm.abs() < 1e-6);
                if var > 1e-3 {
                    let nv = vals.iter().map(|v| (v - nm).powi(2)).sum::<f64>() / 8.0;
                    prop_assert!((nv - 1.0).abs() < 1e-3);
                }
            }
        }
    }
}
