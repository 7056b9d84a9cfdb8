//! Reverberant speech plus scaled noise components.

use rand::Rng;
use rand_distr::StandardNormal;

use super::diffuse::diffuse_noise_with;
use super::rir::{room_rirs, RirConfig, RirSet};
use super::speech::synthetic_speech;
use super::RoomScene;
use crate::error::{Error, Result};
use crate::seed::keyed_rng;
use crate::signal::{convolve, Waveform};

/// Microphone at which every RSNR is measured.
pub const RSNR_MIC: usize = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct MixConfig {
    pub duration_s: f64,
    pub rir: RirConfig,
    /// Source signals for directional noise, used in turn. White Gaussian
    /// noise when empty.
    pub noise_signals: Vec<Vec<f64>>,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            duration_s: 4.0,
            rir: RirConfig::default(),
            noise_signals: Vec::new(),
        }
    }
}

impl MixConfig {
    pub fn sample_rate(&self) -> u32 {
        self.rir.sample_rate
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate() as f64).round() as usize
    }
}

/// All parts of a simulated recording. `mixture = early + late + noise`.
#[derive(Clone, Debug)]
pub struct SceneMix {
    pub clean: Waveform,
    pub mixture: Waveform,
    /// Clean speech through the direct path and early reflections.
    pub early: Waveform,
    pub late: Waveform,
    pub reverberant: Waveform,
    pub noise: Waveform,
    /// Each noise component after scaling, in plan order: diffuse first.
    pub components: Vec<Waveform>,
    pub rirs: RirSet,
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn convolve_to(x: &[f64], h: &[f64], len: usize) -> Vec<f64> {
    if h.is_empty() {
        return vec![0.0; len];
    }
    let mut y = convolve(x, h);
    y.resize(len, 0.0);
    y
}

/// Convolves `clean` with every response in `rirs` and adds each noise
/// component scaled to its RSNR target at the first microphone.
pub fn mix_scene(clean: &Waveform, rirs: &RirSet, noise: &[Vec<Vec<f64>>], rsnr_db: &[f64]) -> Result<SceneMix> {
    if clean.num_channels() != 1 {
        return Err(Error::InvalidWaveform(format!(
            "clean speech must be mono, got {} channels",
            clean.num_channels()
        )));
    }
    if noise.len() != rsnr_db.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} noise components for {} RSNR targets",
            noise.len(),
            rsnr_db.len()
        )));
    }
    let s = clean.channel(0);
    let len = s.len();
    let fs = clean.sample_rate();
    if energy(s) == 0.0 {
        return Err(Error::EmptySignal);
    }
    let m = rirs.num_mics();
    let mut early = Vec::with_capacity(m);
    let mut late = Vec::with_capacity(m);
    let mut reverberant = Vec::with_capacity(m);
    for i in 0..m {
        let e = convolve_to(s, rirs.early(i), len);
        let l = convolve_to(s, &rirs.late(i), len);
        reverberant.push(e.iter().zip(&l).map(|(a, b)| a + b).collect::<Vec<_>>());
        early.push(e);
        late.push(l);
    }
    let speech_energy = energy(&reverberant[RSNR_MIC]);

    let mut total = vec![vec![0.0; len]; m];
    let mut components = Vec::with_capacity(noise.len());
    for (v, &target) in noise.iter().zip(rsnr_db) {
        if v.len() != m || v.iter().any(|c| c.len() != len) {
            return Err(Error::ShapeMismatch(format!(
                "noise component must be {m} x {len} samples"
            )));
        }
        let ev = energy(&v[RSNR_MIC]);
        if ev == 0.0 {
            return Err(Error::ZeroNoise);
        }
        let gain = (speech_energy / (ev * 10f64.powf(target / 10.0))).sqrt();
        let scaled: Vec<Vec<f64>> = v.iter().map(|c| c.iter().map(|x| x * gain).collect()).collect();
        for (t, c) in total.iter_mut().zip(&scaled) {
            t.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        }
        components.push(Waveform::new(scaled, fs)?);
    }
    let mixture: Vec<Vec<f64>> = reverberant
        .iter()
        .zip(&total)
        .map(|(x, v)| x.iter().zip(v).map(|(a, b)| a + b).collect())
        .collect();

    Ok(SceneMix {
        clean: clean.clone(),
        mixture: Waveform::new(mixture, fs)?,
        early: Waveform::new(early, fs)?,
        late: Waveform::new(late, fs)?,
        reverberant: Waveform::new(reverberant, fs)?,
        noise: Waveform::new(total, fs)?,
        components,
        rirs: rirs.clone(),
    })
}

/// Full simulation of a scene: pseudo-speech from the scene seed, room
/// responses, diffuse and directional noise, mixing.
pub fn render_scene(scene: &RoomScene, cfg: &MixConfig) -> Result<SceneMix> {
    scene.validate()?;
    let fs = cfg.sample_rate();
    let len = cfg.num_samples();
    if len == 0 {
        return Err(Error::EmptySignal);
    }
    let clean = Waveform::mono(synthetic_speech(len, fs, scene.seed), fs)?;
    let rirs = room_rirs(scene, &scene.source_pos, &cfg.rir)?;

    let mut components = Vec::new();
    let mut targets = Vec::new();
    if let Some(r) = scene.noise_plan.diffuse_rsnr_db {
        let mut rng = keyed_rng(scene.seed, "diffuse");
        components.push(diffuse_noise_with(&scene.mic_positions, len, fs, &mut rng)?);
        targets.push(r);
    }
    for (k, src) in scene.noise_plan.directional.iter().enumerate() {
        let signal: Vec<f64> = if cfg.noise_signals.is_empty() {
            let mut rng = keyed_rng(scene.seed, &format!("directional.{k}"));
            (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        } else {
            let src = &cfg.noise_signals[k % cfg.noise_signals.len()];
            if src.is_empty() {
                return Err(Error::ZeroNoise);
            }
            src.iter().cycle().take(len).copied().collect()
        };
        let set = room_rirs(scene, &src.position, &cfg.rir)?;
        components.push(set.rirs.iter().map(|h| convolve_to(&signal, h, len)).collect());
        targets.push(src.rsnr_db);
    }
    mix_scene(&clean, &rirs, &components, &targets)
}
