//! Speech-like test signal: voiced segments with formant-shaped harmonics,
//! fricative noise bursts and short pauses.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::seed::keyed_rng;

/// First three formants of a handful of vowels, Hz.
const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [300.0, 870.0, 2240.0],
    [570.0, 840.0, 2410.0],
    [660.0, 1720.0, 2410.0],
];

const TARGET_RMS: f64 = 0.1;

fn formant_gain(f: f64, formants: &[f64; 3]) -> f64 {
    formants
        .iter()
        .enumerate()
        .map(|(i, &fc)| {
            let bw = 80.0 + 40.0 * i as f64;
            let amp = 1.0 / (1.0 + i as f64);
            amp / (1.0 + ((f - fc) / bw).powi(2))
        })
        .sum::<f64>()
        + 0.02
}

fn fade(seg: &mut [f64], fs: f64) {
    let n = ((0.01 * fs) as usize).min(seg.len() / 2);
    for i in 0..n {
        let w = 0.5 * (1.0 - (PI * i as f64 / n as f64).cos());
        seg[i] *= w;
        let j = seg.len() - 1 - i;
        seg[j] *= w;
    }
}

/// `len` samples of deterministic pseudo-speech at `fs`, scaled to an RMS
/// of 0.1.
pub fn synthetic_speech(len: usize, fs: u32, seed: u64) -> Vec<f64> {
    let fs_f = fs as f64;
    let mut rng = keyed_rng(seed, "speech");
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let kind: f64 = rng.random();
        let seg_len = if kind < 0.6 {
            (rng.random_range(0.1..0.3) * fs_f) as usize
        } else if kind < 0.8 {
            (rng.random_range(0.05..0.15) * fs_f) as usize
        } else {
            (rng.random_range(0.05..0.3) * fs_f) as usize
        };
        let mut seg = vec![0.0; seg_len.max(1)];
        if kind < 0.6 {
            let formants = VOWELS[rng.random_range(0..VOWELS.len())];
            let f0_start = rng.random_range(90.0..250.0);
            let f0_end = f0_start * rng.random_range(0.8..1.25);
            let mut phase = 0.0;
            let harmonics: Vec<(f64, f64)> = (1..=40)
                .map(|k| (k as f64, formant_gain(k as f64 * f0_start, &formants)))
                .collect();
            for (i, v) in seg.iter_mut().enumerate() {
                let t = i as f64 / seg_len as f64;
                let f0 = f0_start + (f0_end - f0_start) * t;
                phase += 2.0 * PI * f0 / fs_f;
                *v = harmonics
                    .iter()
                    .filter(|(k, _)| k * f0 < 0.45 * fs_f)
                    .map(|(k, g)| g * (k * phase).sin())
                    .sum();
            }
        } else if kind < 0.8 {
            // first-difference of white noise tilts the spectrum upwards
            let mut prev = 0.0;
            for v in seg.iter_mut() {
                let x: f64 = rng.sample(StandardNormal);
                *v = 0.3 * (x - prev);
                prev = x;
            }
        } else {
            for v in seg.iter_mut() {
                let x: f64 = rng.sample(StandardNormal);
                *v = 1e-3 * x;
            }
        }
        fade(&mut seg, fs_f);
        out.extend_from_slice(&seg);
    }
    out.truncate(len);
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v *= TARGET_RMS / rms);
    }
    out
}
