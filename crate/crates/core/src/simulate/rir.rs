//! Image-method room impulse responses for a shoebox room.

use std::f64::consts::PI;

use super::{distance, Absorption, Point, RoomScene, SPEED_OF_SOUND};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RirConfig {
    pub sample_rate: u32,
    /// Response length in samples; defaults to `t60 * fs` rounded up.
    pub length: Option<usize>,
    /// Early window after the direct-path arrival.
    pub early_ms: f64,
    /// Length of the windowed-sinc fractional delay filter.
    pub fd_taps: usize,
}

impl Default for RirConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            length: None,
            early_ms: 50.0,
            fd_taps: 64,
        }
    }
}

/// Uniform wall reflection coefficient giving reverberation time `t60`
/// under Sabine's formula. Absorption is clamped to `[0, 1]`.
pub fn sabine_reflection(dims: &Point, t60: f64) -> f64 {
    let [w, l, h] = *dims;
    let volume = w * l * h;
    let surface = 2.0 * (w * l + w * h + l * h);
    let k = 24.0 * std::f64::consts::LN_10 / SPEED_OF_SOUND;
    let alpha = (k * volume / (surface * t60)).clamp(0.0, 1.0);
    (1.0 - alpha).sqrt()
}

/// Directions on the unit sphere, roughly uniform (Fibonacci lattice).
fn sphere_directions(n: usize) -> Vec<Point> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Uniform reflection coefficient for which the image-method energy decay
/// itself falls by 60 dB at `t60`.
///
/// An image at distance `r` in direction `u` has undergone about
/// `r * sum_i |u_i| / L_i` reflections, so the energy arriving at time `t`
/// averages `exp(-x t a(u) / t60)` over directions, with `a(u)` that sum and
/// `x` fixed by the reflection coefficient. The backward integral of that
/// decay is matched to -60 dB at `t60` by bisection on `x`.
pub fn matched_reflection(dims: &Point, t60: f64) -> f64 {
    let a: Vec<f64> = sphere_directions(2048)
        .iter()
        .map(|u| (0..3).map(|i| u[i].abs() / dims[i]).sum())
        .collect();
    let norm: f64 = a.iter().map(|v| 1.0 / v).sum();
    let edc = |x: f64| a.iter().map(|v| (-x * v).exp() / v).sum::<f64>() / norm;
    let (mut lo, mut hi) = (0.0, 1.0);
    while edc(hi) > 1e-6 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if edc(mid) > 1e-6 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // per unit a(u) the energy falls as beta^(2 c t a) = exp(-x t a / t60)
    let x = 0.5 * (lo + hi);
    (-x / (2.0 * SPEED_OF_SOUND * t60)).exp()
}

/// Per-microphone responses for one source.
#[derive(Clone, Debug, PartialEq)]
pub struct RirSet {
    pub rirs: Vec<Vec<f64>>,
    /// Direct-path delay in samples, fractional.
    pub direct_delay: Vec<f64>,
    /// First sample of the late part.
    pub early_split: Vec<usize>,
}

impl RirSet {
    pub fn num_mics(&self) -> usize {
        self.rirs.len()
    }

    pub fn early(&self, m: usize) -> &[f64] {
        let h = &self.rirs[m];
        &h[..self.early_split[m].min(h.len())]
    }

    /// Late part, zero over the early window so that it adds back to the
    /// full response.
    pub fn late(&self, m: usize) -> Vec<f64> {
        let mut h = self.rirs[m].clone();
        let split = self.early_split[m].min(h.len());
        h[..split].iter_mut().for_each(|v| *v = 0.0);
        h
    }
}

struct AxisImage {
    offset: f64,
    reflections: i32,
}

fn axis_images(src: f64, mic: f64, len: f64, reach: f64) -> Vec<AxisImage> {
    let n_max = (reach / (2.0 * len)).ceil() as i64 + 1;
    let mut v = Vec::new();
    for n in -n_max..=n_max {
        for q in 0..2i64 {
            let pos = (1 - 2 * q) as f64 * src + 2.0 * n as f64 * len;
            let offset = pos - mic;
            if offset.abs() <= reach {
                v.push(AxisImage {
                    offset,
                    reflections: ((n - q).abs() + n.abs()) as i32,
                });
            }
        }
    }
    v
}

/// Adds `amp * sinc(t - tau)` under a Hann window of `taps` samples.
fn add_fractional_impulse(h: &mut [f64], tau: f64, amp: f64, taps: usize) {
    let half = taps as f64 / 2.0;
    let start = (tau - half).ceil().max(0.0) as usize;
    let end = ((tau + half).floor() as usize + 1).min(h.len());
    // tau = base + r with |r| <= 1/2 keeps sin(pi r) accurate near integers
    let base = tau.round();
    let r = tau - base;
    let s = (PI * r).sin();
    for (n, slot) in h.iter_mut().enumerate().take(end).skip(start) {
        let x = n as f64 - tau;
        let sinc = if x == 0.0 {
            1.0
        } else {
            // sin(pi (n - tau)) without losing precision for large n
            let sign = if (n as i64 - base as i64) % 2 == 0 { -1.0 } else { 1.0 };
            sign * s / (PI * x)
        };
        let w = 0.5 * (1.0 + (PI * x / half).cos());
        *slot += amp * w * sinc;
    }
}

/// Response from `src` to `mic` in a room of size `dims` with uniform wall
/// reflection coefficient `beta`, `len` samples at `fs`.
pub fn shoebox_rir(
    dims: &Point,
    beta: f64,
    src: &Point,
    mic: &Point,
    fs: f64,
    len: usize,
    taps: usize,
) -> Result<Vec<f64>> {
    if distance(src, mic) < 1e-6 {
        return Err(Error::Scene("source and microphone coincide".into()));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::Scene(format!("reflection coefficient {beta} outside [0, 1)")));
    }
    let reach = (len as f64 + taps as f64) / fs * SPEED_OF_SOUND;
    let xs = axis_images(src[0], mic[0], dims[0], reach);
    let ys = axis_images(src[1], mic[1], dims[1], reach);
    let zs = axis_images(src[2], mic[2], dims[2], reach);
    let reach2 = reach * reach;
    let scale = fs / SPEED_OF_SOUND;
    let mut h = vec![0.0; len];
    for x in &xs {
        let dx2 = x.offset * x.offset;
        for y in &ys {
            let dxy2 = dx2 + y.offset * y.offset;
            if dxy2 > reach2 {
                continue;
            }
            for z in &zs {
                let d2 = dxy2 + z.offset * z.offset;
                if d2 > reach2 {
                    continue;
                }
                let refl = x.reflections + y.reflections + z.reflections;
                let g = beta.powi(refl);
                if g == 0.0 {
                    continue;
                }
                let d = d2.sqrt();
                add_fractional_impulse(&mut h, d * scale, g / (4.0 * PI * d), taps);
            }
        }
    }
    Ok(h)
}

fn reflection_for(scene: &RoomScene) -> f64 {
    scene.reflection.unwrap_or_else(|| match scene.absorption {
        Absorption::MatchedDecay => matched_reflection(&scene.room_dims, scene.t60),
        Absorption::Sabine => sabine_reflection(&scene.room_dims, scene.t60),
    })
}

fn rir_length(scene: &RoomScene, cfg: &RirConfig) -> usize {
    cfg.length
        .unwrap_or_else(|| (scene.t60 * cfg.sample_rate as f64).ceil() as usize)
        .max(1)
}

/// Response from the scene's speech source to microphone `mic`.
pub fn image_method_rir(scene: &RoomScene, mic: usize, cfg: &RirConfig) -> Result<Vec<f64>> {
    let m = scene.mic_positions.get(mic).ok_or(Error::InvalidChannel {
        index: mic,
        channels: scene.num_mics(),
    })?;
    shoebox_rir(
        &scene.room_dims,
        reflection_for(scene),
        &scene.source_pos,
        m,
        cfg.sample_rate as f64,
        rir_length(scene, cfg),
        cfg.fd_taps,
    )
}

/// Responses from `source` to every microphone of the scene.
pub fn room_rirs(scene: &RoomScene, source: &Point, cfg: &RirConfig) -> Result<RirSet> {
    let fs = cfg.sample_rate as f64;
    let beta = reflection_for(scene);
    let len = rir_length(scene, cfg);
    let early = (cfg.early_ms * fs / 1000.0).round() as usize;
    let mut set = RirSet {
        rirs: Vec::new(),
        direct_delay: Vec::new(),
        early_split: Vec::new(),
    };
    for m in &scene.mic_positions {
        set.rirs
            .push(shoebox_rir(&scene.room_dims, beta, source, m, fs, len, cfg.fd_taps)?);
        let tau = distance(source, m) / SPEED_OF_SOUND * fs;
        set.direct_delay.push(tau);
        set.early_split.push(tau.floor() as usize + early);
    }
    Ok(set)
}

/// Backward-integrated energy decay in dB relative to the total energy.
pub fn schroeder_curve(h: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut e: Vec<f64> = h
        .iter()
        .rev()
        .map(|v| {
            acc += v * v;
            acc
        })
        .collect();
    e.reverse();
    let total = e.first().copied().unwrap_or(0.0);
    e.iter().map(|v| 10.0 * (v / total).log10()).collect()
}
