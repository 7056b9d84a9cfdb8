//! Mask-driven multichannel filtering.
//!
//! A time-frequency mask `g` splits every subband into desired and undesired
//! parts. Their mask-weighted spatial covariances give the MVDR filter
//!
//! ```text
//! w_r(f) = Phi_uu(f)^-1 Phi_dd(f) e_r / trace(Phi_uu(f)^-1 Phi_dd(f))
//! ```
//!
//! and the reference channel `r` is the one maximizing the ratio of summed
//! desired to summed undesired output power over all subbands.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, Cholesky};
use crate::signal::Spectrogram;

/// Regularizer added to the noise covariance diagonal, relative to its trace.
pub const DIAGONAL_LOADING: f64 = 1e-6;
/// Mask-sum threshold per frame: a subband needs `sum_n g > 1e-6 * N`.
pub const MASK_SUM_FLOOR: f64 = 1e-6;
/// `|trace(Phi_uu^-1 Phi_dd)|` below this means no desired signal.
pub const MIN_TRACE: f64 = 1e-12;
const ORACLE_EPS: f64 = 1e-12;

/// Real time-frequency mask with entries in `[0, 1]`, indexed `(f, n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TFMask {
    g: Vec<f64>,
    num_bins: usize,
    num_frames: usize,
}

impl TFMask {
    pub fn new(g: Vec<f64>, num_bins: usize, num_frames: usize) -> Result<Self> {
        if g.len() != num_bins * num_frames {
            return Err(Error::ShapeMismatch(format!(
                "{} mask values for {num_bins} x {num_frames}",
                g.len()
            )));
        }
        if let Some(v) = g.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidConfig(format!("mask value {v} outside [0, 1]")));
        }
        Ok(Self {
            g,
            num_bins,
            num_frames,
        })
    }

    pub fn constant(value: f64, num_bins: usize, num_frames: usize) -> Result<Self> {
        Self::new(vec![value; num_bins * num_frames], num_bins, num_frames)
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    #[inline]
    pub fn get(&self, f: usize, n: usize) -> f64 {
        self.g[f * self.num_frames + n]
    }

    pub fn values(&self) -> &[f64] {
        &self.g
    }

    fn check_grid(&self, spec: &Spectrogram) -> Result<()> {
        if self.num_bins != spec.num_bins() || self.num_frames != spec.num_frames() {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} vs spectrogram {}x{}",
                self.num_bins,
                self.num_frames,
                spec.num_bins(),
                spec.num_frames()
            )));
        }
        Ok(())
    }
}

/// Mask-weighted spatial covariances of the desired and undesired signal,
/// one pair of `M x M` Hermitian matrices per subband.
#[derive(Clone, Debug)]
pub struct CovariancePair {
    pub phi_dd: Vec<CMatrix>,
    pub phi_uu: Vec<CMatrix>,
}

impl CovariancePair {
    pub fn num_bins(&self) -> usize {
        self.phi_dd.len()
    }

    pub fn num_channels(&self) -> usize {
        self.phi_dd.first().map_or(0, CMatrix::dim)
    }
}

/// Per-subband beamformer coefficients and the reference they reconstruct.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamWeights {
    pub w: Vec<Vec<Complex64>>,
    pub reference: usize,
}

impl BeamWeights {
    /// Weights that pass channel `r` through unchanged.
    pub fn selector(num_bins: usize, num_channels: usize, r: usize) -> Self {
        let mut e = vec![Complex64::new(0.0, 0.0); num_channels];
        e[r] = Complex64::new(1.0, 0.0);
        Self {
            w: vec![e; num_bins],
            reference: r,
        }
    }
}

/// Wiener-like mask `|d|^2 / (|d|^2 + |y - d|^2)` from the known desired
/// image `d` at channel `channel` of the mixture `y`.
pub fn oracle_mask(d: &Spectrogram, y: &Spectrogram, channel: usize) -> Result<TFMask> {
    if d.num_bins() != y.num_bins() || d.num_frames() != y.num_frames() {
        return Err(Error::ShapeMismatch(format!(
            "desired {}x{} vs mixture {}x{}",
            d.num_bins(),
            d.num_frames(),
            y.num_bins(),
            y.num_frames()
        )));
    }
    for s in [d, y] {
        if channel >= s.num_channels() {
            return Err(Error::InvalidChannel {
                index: channel,
                channels: s.num_channels(),
            });
        }
    }
    let (nf, nn) = (y.num_bins(), y.num_frames());
    let mut g = vec![0.0; nf * nn];
    for f in 0..nf {
        for n in 0..nn {
            let dv = d.get(f, n, channel);
            let uv = y.get(f, n, channel) - dv;
            let pd = dv.norm_sqr();
            g[f * nn + n] = (pd / (pd + uv.norm_sqr() + ORACLE_EPS)).clamp(0.0, 1.0);
        }
    }
    TFMask::new(g, nf, nn)
}

pub fn estimate_covariances(y: &Spectrogram, g: &TFMask) -> Result<CovariancePair> {
    g.check_grid(y)?;
    let (nf, nn, nm) = (y.num_bins(), y.num_frames(), y.num_channels());
    if nm == 0 {
        return Err(Error::NoChannels);
    }
    let threshold = MASK_SUM_FLOOR * nn as f64;
    let mut phi_dd = Vec::with_capacity(nf);
    let mut phi_uu = Vec::with_capacity(nf);
    let mut v = vec![Complex64::new(0.0, 0.0); nm];
    for f in 0..nf {
        let mut dd = CMatrix::zeros(nm);
        let mut uu = CMatrix::zeros(nm);
        let (mut sum_d, mut sum_u) = (0.0, 0.0);
        for n in 0..nn {
            let gd = g.get(f, n);
            let gu = 1.0 - gd;
            sum_d += gd;
            sum_u += gu;
            for (m, vm) in v.iter_mut().enumerate() {
                *vm = y.get(f, n, m);
            }
            // lower triangle only, mirrored by symmetrize below
            for i in 0..nm {
                for j in 0..=i {
                    let p = v[i] * v[j].conj();
                    dd[(i, j)] += p * gd;
                    uu[(i, j)] += p * gu;
                }
            }
        }
        for (which, sum) in [("desired", sum_d), ("undesired", sum_u)] {
            if sum.is_nan() || sum <= threshold {
                return Err(Error::DegenerateMask {
                    subband: f,
                    which,
                    sum,
                    threshold,
                });
            }
        }
        for i in 0..nm {
            for j in 0..i {
                dd[(j, i)] = dd[(i, j)].conj();
                uu[(j, i)] = uu[(i, j)].conj();
            }
        }
        dd.scale(1.0 / sum_d);
        uu.scale(1.0 / sum_u);
        dd.symmetrize();
        uu.symmetrize();
        phi_dd.push(dd);
        phi_uu.push(uu);
    }
    Ok(CovariancePair { phi_dd, phi_uu })
}

/// Trace-normalized `Phi_uu^-1 Phi_dd` for one subband. Column `r` is the
/// MVDR filter for reference `r`.
fn normalized_filter_matrix(dd: &CMatrix, uu: &CMatrix, subband: usize) -> Result<CMatrix> {
    let mut uu = uu.clone();
    let load = uu.trace().re * DIAGONAL_LOADING;
    uu.add_diag(load);
    let chol = Cholesky::new(&uu).ok_or(Error::SingularCovariance { subband })?;
    let mut x = chol.solve(dd);
    let tr = x.trace();
    if tr.norm().is_nan() || tr.norm() < MIN_TRACE {
        return Err(Error::NoDesiredSignal {
            subband,
            trace: tr.norm(),
        });
    }
    let n = x.dim();
    for i in 0..n {
        for j in 0..n {
            x[(i, j)] /= tr;
        }
    }
    Ok(x)
}

fn filter_matrices(c: &CovariancePair) -> Result<Vec<CMatrix>> {
    c.phi_dd
        .iter()
        .zip(&c.phi_uu)
        .enumerate()
        .map(|(f, (dd, uu))| normalized_filter_matrix(dd, uu, f))
        .collect()
}

pub fn mvdr_weights(c: &CovariancePair, reference: usize) -> Result<BeamWeights> {
    let nm = c.num_channels();
    if reference >= nm {
        return Err(Error::InvalidChannel {
            index: reference,
            channels: nm,
        });
    }
    let w = filter_matrices(c)?.iter().map(|x| x.column(reference)).collect();
    Ok(BeamWeights { w, reference })
}

/// Output SNR of the MVDR filter for every candidate reference; `None` for
/// candidates whose undesired output power is not positive.
pub fn reference_snrs(c: &CovariancePair) -> Result<Vec<Option<f64>>> {
    let filters = filter_matrices(c)?;
    let nm = c.num_channels();
    let snrs = (0..nm)
        .map(|m| {
            let (mut num, mut den) = (0.0, 0.0);
            for (x, (dd, uu)) in filters.iter().zip(c.phi_dd.iter().zip(&c.phi_uu)) {
                let w = x.column(m);
                num += dd.quad_form(&w);
                den += uu.quad_form(&w);
            }
            let snr = num / den;
            (den > 0.0 && snr.is_finite()).then_some(snr)
        })
        .collect();
    Ok(snrs)
}

/// Reference channel with the highest MVDR output SNR; ties go to the lower
/// index.
pub fn select_reference(c: &CovariancePair) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (m, snr) in reference_snrs(c)?.into_iter().enumerate() {
        if let Some(s) = snr {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((m, s));
            }
        }
    }
    best.map(|(m, _)| m).ok_or(Error::NoReferenceCandidate)
}

/// `d(f, n) = w(f)^H y(f, n)`, single-channel output.
pub fn apply_beamformer(y: &Spectrogram, w: &BeamWeights) -> Result<Spectrogram> {
    let (nf, nn, nm) = (y.num_bins(), y.num_frames(), y.num_channels());
    if w.w.len() != nf || w.w.iter().any(|v| v.len() != nm) {
        return Err(Error::ShapeMismatch(format!(
            "weights for {} subbands vs spectrogram {nf} bins x {nm} channels",
            w.w.len()
        )));
    }
    let mut out = Spectrogram::zeros_like(y, 1);
    for n in 0..nn {
        for (f, wf) in w.w.iter().enumerate() {
            let v: Complex64 = wf.iter().enumerate().map(|(m, wm)| wm.conj() * y.get(f, n, m)).sum();
            out.set(f, n, 0, v);
        }
    }
    Ok(out)
}

/// Multiplies every bin by `max(g, 10^(g_min_db / 20))`. A floor of 0 dB
/// leaves the input untouched.
pub fn apply_mask_floor(d: &Spectrogram, g: &TFMask, g_min_db: f64) -> Result<Spectrogram> {
    g.check_grid(d)?;
    if g_min_db > 0.0 || g_min_db.is_nan() {
        return Err(Error::InvalidConfig(format!(
            "mask floor {g_min_db} dB must not be positive"
        )));
    }
    let floor = 10f64.powf(g_min_db / 20.0);
    let mut out = d.clone();
    if floor >= 1.0 {
        return Ok(out);
    }
    for m in 0..d.num_channels() {
        for n in 0..d.num_frames() {
            for f in 0..d.num_bins() {
                out.set(f, n, m, d.get(f, n, m) * g.get(f, n).max(floor));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_spec(rng: &mut ChaCha8Rng, nf: usize, nn: usize, nm: usize) -> Spectrogram {
        let data = (0..nf * nn * nm)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        Spectrogram::from_data(data, nf, nn, nm, 0, 0).unwrap()
    }

    #[test]
    fn oracle_mask_cases() {
        let mut d = Spectrogram::zeros(3, 1, 1, 4, 2);
        let mut y = Spectrogram::zeros(3, 1, 1, 4, 2);
        // noiseless
        d.set(0, 0, 0, c(1.0, 1.0));
        y.set(0, 0, 0, c(1.0, 1.0));
        // speech-free
        y.set(1, 0, 0, c(0.5, 0.0));
        // equal energies
        d.set(2, 0, 0, c(2.0, 0.0));
        y.set(2, 0, 0, c(2.0, 2.0));
        let g = oracle_mask(&d, &y, 0).unwrap();
        assert!((g.get(0, 0) - 1.0).abs() < 1e-11);
        assert_eq!(g.get(1, 0), 0.0);
        assert!((g.get(2, 0) - 0.5).abs() < 1e-12);

        let bad = Spectrogram::zeros(3, 2, 1, 4, 2);
        assert!(matches!(oracle_mask(&bad, &y, 0), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn all_ones_mask_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = random_spec(&mut rng, 2, 10, 2);
        let g = TFMask::constant(1.0, 2, 10).unwrap();
        match estimate_covariances(&y, &g) {
            Err(Error::DegenerateMask { subband: 0, which, .. }) => assert_eq!(which, "undesired"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn half_mask_single_frame_gives_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = random_spec(&mut rng, 1, 1, 3);
        let g = TFMask::constant(0.5, 1, 1).unwrap();
        let cov = estimate_covariances(&y, &g).unwrap();
        let v: Vec<Complex64> = (0..3).map(|m| y.get(0, 0, m)).collect();
        let expect = CMatrix::outer(&v);
        assert!(cov.phi_dd[0].max_abs_diff(&expect) < 1e-15);
        assert!(cov.phi_uu[0].max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn mono_mvdr_is_unity() {
        let dd = CMatrix::from_real_diag(&[3.7]);
        let uu = CMatrix::from_real_diag(&[0.2]);
        let cov = CovariancePair {
            phi_dd: vec![dd],
            phi_uu: vec![uu],
        };
        let w = mvdr_weights(&cov, 0).unwrap();
        assert_eq!(w.w[0][0], c(1.0, 0.0));
        assert_eq!(select_reference(&cov).unwrap(), 0);
    }

    #[test]
    fn rank_one_by_hand() {
        // Phi_uu = I, Phi_dd = a a^H with a = [1, i]: trace 2, w_1 = [1/2, i/2]
        let a = vec![c(1.0, 0.0), c(0.0, 1.0)];
        let cov = CovariancePair {
            phi_dd: vec![CMatrix::outer(&a)],
            phi_uu: vec![CMatrix::identity(2)],
        };
        let w = mvdr_weights(&cov, 0).unwrap();
        assert!((w.w[0][0] - c(0.5, 0.0)).norm() < 1e-12);
        assert!((w.w[0][1] - c(0.0, 0.5)).norm() < 1e-12);
        let resp: Complex64 = w.w[0].iter().zip(&a).map(|(wi, ai)| wi.conj() * ai).sum();
        assert!((resp - c(1.0, 0.0)).norm() < 1e-12);

        // applying to y = a x(n) recovers x(n) a_r
        let xs = [c(0.3, -0.1), c(-1.0, 2.0), c(0.0, 0.7)];
        let mut y = Spectrogram::zeros(1, 3, 2, 0, 0);
        for (n, x) in xs.iter().enumerate() {
            for m in 0..2 {
                y.set(0, n, m, a[m] * x);
            }
        }
        let out = apply_beamformer(&y, &w).unwrap();
        for (n, x) in xs.iter().enumerate() {
            assert!((out.get(0, n, 0) - x * a[0]).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_noise_covariance_fails() {
        let cov = CovariancePair {
            phi_dd: vec![CMatrix::identity(2)],
            phi_uu: vec![CMatrix::zeros(2)],
        };
        assert!(matches!(
            mvdr_weights(&cov, 0),
            Err(Error::SingularCovariance { subband: 0 })
        ));
        assert!(select_reference(&cov).is_err());
    }

    #[test]
    fn zero_speech_covariance_fails() {
        let cov = CovariancePair {
            phi_dd: vec![CMatrix::zeros(2)],
            phi_uu: vec![CMatrix::identity(2)],
        };
        assert!(matches!(
            mvdr_weights(&cov, 1),
            Err(Error::NoDesiredSignal { subband: 0, .. })
        ));
    }

    #[test]
    fn reference_by_hand() {
        // Phi_dd = diag(4, 1), Phi_uu = I: SNR_1 = 4, SNR_2 = 1
        let cov = CovariancePair {
            phi_dd: vec![CMatrix::from_real_diag(&[4.0, 1.0])],
            phi_uu: vec![CMatrix::identity(2)],
        };
        let w0 = mvdr_weights(&cov, 0).unwrap();
        assert!((w0.w[0][0] - c(0.8, 0.0)).norm() < 1e-9);
        assert!(w0.w[0][1].norm() < 1e-12);
        let w1 = mvdr_weights(&cov, 1).unwrap();
        assert!((w1.w[0][1] - c(0.2, 0.0)).norm() < 1e-9);
        let snrs = reference_snrs(&cov).unwrap();
        assert!((snrs[0].unwrap() - 4.0).abs() < 1e-9);
        assert!((snrs[1].unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(select_reference(&cov).unwrap(), 0);
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let cov = CovariancePair {
            phi_dd: vec![CMatrix::from_real_diag(&[1.0, 2.0, 2.0])],
            phi_uu: vec![CMatrix::identity(3)],
        };
        assert_eq!(select_reference(&cov).unwrap(), 1);
    }

    #[test]
    fn selector_weights_pass_channel_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = random_spec(&mut rng, 4, 5, 3);
        let out = apply_beamformer(&y, &BeamWeights::selector(4, 3, 2)).unwrap();
        for f in 0..4 {
            for n in 0..5 {
                assert_eq!(out.get(f, n, 0), y.get(f, n, 2));
            }
        }
        assert!(apply_beamformer(&y, &BeamWeights::selector(3, 3, 0)).is_err());
    }

    #[test]
    fn mask_floor_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = random_spec(&mut rng, 2, 3, 1);
        let zeros = TFMask::constant(0.0, 2, 3).unwrap();
        assert_eq!(apply_mask_floor(&d, &zeros, 0.0).unwrap(), d);
        let out = apply_mask_floor(&d, &zeros, -6.0).unwrap();
        let k = 10f64.powf(-6.0 / 20.0);
        assert!((k - 0.501187).abs() < 1e-6);
        for (a, b) in out.data().iter().zip(d.data()) {
            assert!((a - b * k).norm() < 1e-15);
        }
        let ones = TFMask::constant(1.0, 2, 3).unwrap();
        assert_eq!(apply_mask_floor(&d, &ones, -20.0).unwrap(), d);
        assert!(apply_mask_floor(&d, &ones, 3.0).is_err());
    }

    #[test]
    fn mask_rejects_out_of_range() {
        assert!(TFMask::new(vec![1.5], 1, 1).is_err());
        assert!(TFMask::new(vec![0.5, 0.5], 1, 1).is_err());
    }
}
