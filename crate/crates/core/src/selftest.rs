//! Reduced-size invariant checks for every module, runnable from the
//! command line.

use num_complex::Complex64;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::beamform::{apply_mask_floor, mvdr_weights, select_reference, CovariancePair, TFMask};
use crate::error::Result;
use crate::features::{extract_features, normalize_features};
use crate::linalg::CMatrix;
use crate::metrics::{ci_sdr, CISDRConfig};
use crate::net::{ChannelBlockKind, MaskNet, NetConfig, ReductionKind, WeightStore};
use crate::seed::keyed_rng;
use crate::signal::{filter, istft, stft, Waveform};
use crate::simulate::{
    diffuse_noise, render_scene, sample_scene, spherical_coherence, wall_distance, ArrayKind, MixConfig, WALL_MARGIN,
};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub module: &'static str,
    pub property: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// One line per check, `module property PASS|FAIL detail`.
    pub fn lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| {
                let status = if c.passed { "PASS" } else { "FAIL" };
                format!("{} {} {status} {}", c.module, c.property, c.detail)
            })
            .collect()
    }

    /// SHA-256 over all report lines; identical for identical runs.
    pub fn summary_hash(&self) -> String {
        let mut h = Sha256::new();
        for line in self.lines() {
            h.update(line.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn push(&mut self, module: &'static str, property: &'static str, result: Result<(bool, String)>) {
        let (passed, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
        self.checks.push(Check {
            module,
            property,
            passed,
            detail,
        });
    }
}

fn random_waveform(channels: usize, len: usize, seed: u64, label: &str) -> Waveform {
    let mut rng = keyed_rng(seed, label);
    let data = (0..channels)
        .map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    Waveform::new(data, 16000).expect("finite samples")
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn stft_round_trip(seed: u64) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for k in 0..10 {
        let x = random_waveform(1, 4000 + 37 * k, seed, &format!("stft.{k}"));
        let y = istft(&stft(&x, 512, 256)?)?;
        worst = worst.max(max_abs(x.channel(0), y.channel(0)));
    }
    Ok((worst < 1e-6, format!("max_err={worst:.3e}")))
}

fn feature_equivariance(seed: u64) -> Result<(bool, String)> {
    let x = random_waveform(3, 4000, seed, "features");
    let z = normalize_features(&extract_features(&stft(&x, 512, 256)?)?)?;
    let zp = normalize_features(&extract_features(&stft(&x.select_channels(&[2, 0, 1])?, 512, 256)?)?)?;
    let mut worst = 0.0f64;
    for (i, &src) in [2usize, 0, 1].iter().enumerate() {
        worst = worst.max(max_abs(zp.channel(i), z.channel(src)));
    }
    Ok((worst < 1e-9, format!("max_dev={worst:.3e}")))
}

fn random_features(m: usize, seed: u64) -> Result<crate::features::FeatureTensor> {
    let x = random_waveform(m, 2048, seed, "net.features");
    normalize_features(&extract_features(&stft(&x, 64, 32)?)?)
}

fn net_permutation(seed: u64) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for (kind, red) in [
        (ChannelBlockKind::Attend, ReductionKind::Attend),
        (ChannelBlockKind::Tac, ReductionKind::Mean),
    ] {
        let cfg = NetConfig {
            channel_block_kind: kind,
            reduction_kind: red,
            ..NetConfig::tiny(33)
        };
        let net = MaskNet::new(&cfg, &WeightStore::init(&cfg, seed)?)?;
        let z = random_features(3, seed)?;
        let g = net.forward(&z)?;
        for p in [[0, 2, 1], [1, 0, 2], [2, 1, 0]] {
            let gp = net.forward(&z.select_channels(&p)?)?;
            worst = worst.max(max_abs(g.values(), gp.values()));
        }
    }
    Ok((worst < 1e-5, format!("max_dev={worst:.3e}")))
}

fn net_flexible(seed: u64) -> Result<(bool, String)> {
    let cfg = NetConfig::tiny(33);
    let net = MaskNet::new(&cfg, &WeightStore::init(&cfg, seed)?)?;
    let mut ok = true;
    for m in 1..=4 {
        let z = random_features(m, seed + m as u64)?;
        let g = net.forward(&z)?;
        ok &= g.num_bins() == 33 && g.num_frames() == z.num_frames();
        ok &= g.values().iter().all(|&v| v > 0.0 && v < 1.0);
    }
    Ok((ok, "channels=1..4".into()))
}

fn random_hpd<R: Rng>(rng: &mut R, m: usize) -> CMatrix {
    let rows: Vec<Vec<Complex64>> = (0..m)
        .map(|_| {
            (0..m)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect()
        })
        .collect();
    let a = CMatrix::from_rows(&rows);
    let mut p = a.matmul(&a.conj_transpose());
    p.add_diag(0.1);
    p
}

fn mvdr_distortionless(seed: u64) -> Result<(bool, String)> {
    let mut rng = keyed_rng(seed, "mvdr");
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = rng.random_range(1..=6);
        let a: Vec<Complex64> = (0..m)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let c = CovariancePair {
            phi_dd: vec![CMatrix::outer(&a)],
            phi_uu: vec![random_hpd(&mut rng, m)],
        };
        let r = rng.random_range(0..m);
        let w = mvdr_weights(&c, r)?;
        let resp: Complex64 = w.w[0].iter().zip(&a).map(|(wi, ai)| wi.conj() * ai).sum();
        worst = worst.max((resp - a[r]).norm());
    }
    Ok((worst < 1e-8, format!("max_dev={worst:.3e}")))
}

fn reference_single_channel() -> Result<(bool, String)> {
    let c = CovariancePair {
        phi_dd: vec![CMatrix::from_real_diag(&[2.0])],
        phi_uu: vec![CMatrix::from_real_diag(&[1.0])],
    };
    let r = select_reference(&c)?;
    Ok((r == 0, format!("reference={r}")))
}

fn mask_floor_identity(seed: u64) -> Result<(bool, String)> {
    let x = random_waveform(1, 3000, seed, "floor");
    let d = stft(&x, 512, 256)?;
    let mut rng = keyed_rng(seed, "floor.mask");
    let g = TFMask::new(
        (0..d.num_bins() * d.num_frames())
            .map(|_| rng.random_range(0.0..1.0))
            .collect(),
        d.num_bins(),
        d.num_frames(),
    )?;
    let same = apply_mask_floor(&d, &g, 0.0)? == d;
    Ok((same, "g_min_db=0".into()))
}

fn ci_sdr_ceiling(seed: u64) -> Result<(bool, String)> {
    let mut rng = keyed_rng(seed, "cisdr");
    let mut s: Vec<f64> = (0..4000).map(|_| rng.random_range(-1.0..1.0)).collect();
    s.extend(std::iter::repeat_n(0.0, 64));
    let q: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
    let d = filter(&s, &q);
    let cfg = CISDRConfig {
        filter_len: 64,
        ..CISDRConfig::default()
    };
    let v = ci_sdr(&s, &d, &cfg)?;
    Ok(((v - cfg.sdr_max_db).abs() < 1e-3, format!("ci_sdr={v:.6}")))
}

fn scene_constraints(seed: u64) -> Result<(bool, String)> {
    let mut ok = true;
    for k in 0..100 {
        let kind = [ArrayKind::Circular7, ArrayKind::Rectangular6, ArrayKind::Random][k % 3];
        let s = sample_scene(kind, seed.wrapping_add(k as u64))?;
        ok &= s
            .mic_positions
            .iter()
            .chain([&s.source_pos])
            .all(|p| wall_distance(p, &s.room_dims) >= WALL_MARGIN);
        ok &= (0.1..=0.5).contains(&s.t60);
    }
    Ok((ok, "scenes=100".into()))
}

fn rsnr_exact(seed: u64) -> Result<(bool, String)> {
    let mut scene = sample_scene(ArrayKind::Circular7, seed)?;
    scene.t60 = scene.t60.min(0.2);
    let mix = render_scene(
        &scene,
        &MixConfig {
            duration_s: 0.5,
            ..MixConfig::default()
        },
    )?;
    let es: f64 = mix.reverberant.channel(0).iter().map(|v| v * v).sum();
    let targets: Vec<f64> = scene
        .noise_plan
        .diffuse_rsnr_db
        .into_iter()
        .chain(scene.noise_plan.directional.iter().map(|d| d.rsnr_db))
        .collect();
    let mut worst = 0.0f64;
    for (c, t) in mix.components.iter().zip(&targets) {
        let en: f64 = c.channel(0).iter().map(|v| v * v).sum();
        worst = worst.max((10.0 * (es / en).log10() - t).abs());
    }
    Ok((worst < 0.01, format!("max_dev_db={worst:.3e}")))
}

fn diffuse_coherence(seed: u64) -> Result<(bool, String)> {
    // zero-lag correlation of a broadband field integrates the sinc target
    let d = 0.05;
    let n = diffuse_noise(&[[1.0, 1.0, 1.0], [1.0 + d, 1.0, 1.0]], 4 * 16000, 16000, seed)?;
    let num: f64 = n[0].iter().zip(&n[1]).map(|(a, b)| a * b).sum();
    let den = (n[0].iter().map(|a| a * a).sum::<f64>() * n[1].iter().map(|b| b * b).sum::<f64>()).sqrt();
    let bins = 4096;
    let expect = (0..bins)
        .map(|k| spherical_coherence((k as f64 + 0.5) * 8000.0 / bins as f64, d))
        .sum::<f64>()
        / bins as f64;
    let dev = (num / den - expect).abs();
    Ok((dev < 0.05, format!("corr_dev={dev:.3e}")))
}

/// Runs every check with RNG streams derived from `seed`. When `weights` is
/// given it must match `net` exactly.
pub fn run(seed: u64, weights: Option<(&WeightStore, &NetConfig)>) -> Report {
    let mut r = Report::default();
    r.push("signal", "stft_round_trip", stft_round_trip(seed));
    r.push("features", "permutation_equivariance", feature_equivariance(seed));
    r.push("mask_net", "permutation_invariance", net_permutation(seed));
    r.push("mask_net", "any_channel_count", net_flexible(seed));
    if let Some((w, cfg)) = weights {
        r.push(
            "mask_net",
            "weight_manifest",
            w.validate(cfg).map(|_| (true, format!("tensors={}", w.len()))),
        );
    }
    r.push("beamform", "distortionless_response", mvdr_distortionless(seed));
    r.push("beamform", "single_channel_reference", reference_single_channel());
    r.push("beamform", "zero_db_floor_identity", mask_floor_identity(seed));
    r.push("metrics", "ci_sdr_filter_ceiling", ci_sdr_ceiling(seed));
    r.push("simulate", "geometry_constraints", scene_constraints(seed));
    r.push("simulate", "rsnr_exact", rsnr_exact(seed));
    r.push("simulate", "diffuse_correlation", diffuse_coherence(seed));
    r
}
