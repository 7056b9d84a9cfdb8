//! Room-acoustics scene simulation: geometry sampling, image-method room
//! impulse responses, diffuse and directional noise, and RSNR mixing.

mod diffuse;
mod mix;
mod rir;
mod speech;

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::keyed_rng;

pub use diffuse::{diffuse_noise, diffuse_noise_with, spherical_coherence};
pub use mix::{mix_scene, render_scene, MixConfig, SceneMix, RSNR_MIC};
pub use rir::{
    image_method_rir, matched_reflection, room_rirs, sabine_reflection, schroeder_curve, shoebox_rir, RirConfig, RirSet,
};
pub use speech::synthetic_speech;

pub const SPEED_OF_SOUND: f64 = 343.0;
pub const WALL_MARGIN: f64 = 0.5;
/// Minimum source to microphone distance accepted by the sampler.
pub const MIN_SOURCE_DISTANCE: f64 = 0.2;
const MAX_ATTEMPTS: usize = 1000;

pub type Point = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayKind {
    /// Six microphones on a 7 cm diameter circle plus one in the centre.
    Circular7,
    /// Two rows of three, 20 cm wide and 19 cm deep.
    Rectangular6,
    /// Six microphones anywhere in the room.
    Random,
    /// Positions given by the user.
    Explicit,
}

impl ArrayKind {
    pub fn num_mics(self) -> Option<usize> {
        match self {
            Self::Circular7 => Some(7),
            Self::Rectangular6 | Self::Random => Some(6),
            Self::Explicit => None,
        }
    }
}

impl std::str::FromStr for ArrayKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circular7" => Ok(Self::Circular7),
            "rectangular6" => Ok(Self::Rectangular6),
            "random" => Ok(Self::Random),
            "explicit" => Ok(Self::Explicit),
            _ => Err(Error::InvalidConfig(format!("unknown array kind {s:?}"))),
        }
    }
}

/// How the uniform wall reflection coefficient follows from `t60`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Absorption {
    /// Chosen so that the image-method response decays by 60 dB in `t60`.
    #[default]
    MatchedDecay,
    /// Sabine's diffuse-field formula. Image-method responses then decay
    /// more slowly than `t60`, and short `t60` in large rooms saturates to
    /// full absorption.
    Sabine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalSource {
    pub position: Point,
    pub rsnr_db: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoisePlan {
    /// `None` disables diffuse noise.
    pub diffuse_rsnr_db: Option<f64>,
    #[serde(default)]
    pub directional: Vec<DirectionalSource>,
}

impl NoisePlan {
    pub fn is_noiseless(&self) -> bool {
        self.diffuse_rsnr_db.is_none() && self.directional.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomScene {
    pub seed: u64,
    /// Width, length, height in metres.
    pub room_dims: Point,
    pub t60: f64,
    #[serde(default)]
    pub absorption: Absorption,
    /// Overrides the wall reflection coefficient derived from `t60`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection: Option<f64>,
    pub source_pos: Point,
    pub array_kind: ArrayKind,
    pub mic_positions: Vec<Point>,
    pub noise_plan: NoisePlan,
}

/// Ranges the sampler draws from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub width: [f64; 2],
    pub length: [f64; 2],
    pub height: [f64; 2],
    pub t60: [f64; 2],
    pub source_height: [f64; 2],
    pub array_height: [f64; 2],
    pub rsnr_db: [f64; 2],
    /// Probability that a scene gets one to three directional sources on
    /// top of the diffuse noise.
    pub directional_probability: f64,
    pub max_directional: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            width: [3.0, 7.0],
            length: [3.0, 9.0],
            height: [2.3, 3.5],
            t60: [0.1, 0.5],
            source_height: [1.4, 1.8],
            array_height: [1.0, 1.5],
            rsnr_db: [-5.0, 20.0],
            directional_probability: 0.5,
            max_directional: 3,
        }
    }
}

impl SamplerConfig {
    /// Diffuse noise only.
    pub fn diffuse_only() -> Self {
        Self {
            directional_probability: 0.0,
            ..Self::default()
        }
    }
}

pub fn distance(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Smallest distance from `p` to any wall of a room anchored at the origin.
pub fn wall_distance(p: &Point, dims: &Point) -> f64 {
    (0..3).map(|i| p[i].min(dims[i] - p[i])).fold(f64::INFINITY, f64::min)
}

/// Array layout relative to its centre, before rotation.
pub fn array_layout(kind: ArrayKind) -> Vec<Point> {
    match kind {
        ArrayKind::Circular7 => {
            let r = 0.035;
            let mut v: Vec<Point> = (0..6)
                .map(|i| {
                    let a = i as f64 * PI / 3.0;
                    [r * a.cos(), r * a.sin(), 0.0]
                })
                .collect();
            v.push([0.0, 0.0, 0.0]);
            v
        }
        ArrayKind::Rectangular6 => {
            let mut v = Vec::new();
            for y in [-0.095, 0.095] {
                for x in [-0.1, 0.0, 0.1] {
                    v.push([x, y, 0.0]);
                }
            }
            v
        }
        ArrayKind::Random | ArrayKind::Explicit => Vec::new(),
    }
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn point_in<R: Rng>(rng: &mut R, dims: &Point, height: [f64; 2]) -> Point {
    [
        rng.random_range(WALL_MARGIN..dims[0] - WALL_MARGIN),
        rng.random_range(WALL_MARGIN..dims[1] - WALL_MARGIN),
        uniform(rng, height),
    ]
}

pub fn sample_scene(kind: ArrayKind, seed: u64) -> Result<RoomScene> {
    sample_scene_with(kind, seed, &SamplerConfig::default())
}

/// Draws a room, array, source and noise plan. Placement is retried up to
/// a fixed bound; every accepted position keeps the wall margin.
pub fn sample_scene_with(kind: ArrayKind, seed: u64, cfg: &SamplerConfig) -> Result<RoomScene> {
    if kind == ArrayKind::Explicit {
        return Err(Error::Scene("explicit arrays cannot be sampled".into()));
    }
    let mut rng = keyed_rng(seed, "scene");
    let dims = [
        uniform(&mut rng, cfg.width),
        uniform(&mut rng, cfg.length),
        uniform(&mut rng, cfg.height),
    ];
    if dims.iter().any(|&d| d <= 2.0 * WALL_MARGIN) {
        return Err(Error::Scene(format!("room {dims:?} too small for the wall margin")));
    }
    let t60 = uniform(&mut rng, cfg.t60);

    let fits = |p: &Point| wall_distance(p, &dims) >= WALL_MARGIN;
    let mics = (0..MAX_ATTEMPTS)
        .find_map(|_| {
            let mics = match kind {
                ArrayKind::Random => (0..6).map(|_| point_in(&mut rng, &dims, cfg.array_height)).collect(),
                _ => {
                    let centre = point_in(&mut rng, &dims, cfg.array_height);
                    let phi = rng.random_range(0.0..2.0 * PI);
                    let (s, c) = phi.sin_cos();
                    array_layout(kind)
                        .iter()
                        .map(|p| {
                            [
                                centre[0] + c * p[0] - s * p[1],
                                centre[1] + s * p[0] + c * p[1],
                                centre[2] + p[2],
                            ]
                        })
                        .collect::<Vec<Point>>()
                }
            };
            let separated = mics
                .iter()
                .enumerate()
                .all(|(i, a)| mics[i + 1..].iter().all(|b| distance(a, b) > 0.01));
            (mics.iter().all(fits) && separated).then_some(mics)
        })
        .ok_or_else(|| Error::Scene("could not place the array".into()))?;

    let place_source = |rng: &mut rand_chacha::ChaCha8Rng, height: [f64; 2]| {
        (0..MAX_ATTEMPTS)
            .map(|_| point_in(rng, &dims, height))
            .find(|p| mics.iter().all(|m| distance(p, m) >= MIN_SOURCE_DISTANCE))
            .ok_or_else(|| Error::Scene("could not place a source".into()))
    };
    let source_pos = place_source(&mut rng, cfg.source_height)?;

    let diffuse = uniform(&mut rng, cfg.rsnr_db);
    let mut directional = Vec::new();
    if cfg.max_directional > 0 && rng.random::<f64>() < cfg.directional_probability {
        let count = rng.random_range(1..=cfg.max_directional);
        for _ in 0..count {
            let position = place_source(&mut rng, [WALL_MARGIN, dims[2] - WALL_MARGIN])?;
            directional.push(DirectionalSource {
                position,
                rsnr_db: uniform(&mut rng, cfg.rsnr_db),
            });
        }
    }

    Ok(RoomScene {
        seed,
        room_dims: dims,
        t60,
        absorption: Absorption::default(),
        reflection: None,
        source_pos,
        array_kind: kind,
        mic_positions: mics,
        noise_plan: NoisePlan {
            diffuse_rsnr_db: Some(diffuse),
            directional,
        },
    })
}

impl RoomScene {
    pub fn num_mics(&self) -> usize {
        self.mic_positions.len()
    }

    /// Index of the microphone nearest the speech source; ties go to the
    /// lowest index.
    pub fn closest_mic(&self) -> usize {
        let mut best = 0;
        for (i, m) in self.mic_positions.iter().enumerate() {
            if distance(m, &self.source_pos) < distance(&self.mic_positions[best], &self.source_pos) {
                best = i;
            }
        }
        best
    }

    /// Keeps only the listed microphones, in the given order.
    pub fn select_mics(&self, indices: &[usize]) -> Result<Self> {
        let mut out = self.clone();
        out.mic_positions = indices
            .iter()
            .map(|&i| {
                self.mic_positions.get(i).copied().ok_or(Error::InvalidChannel {
                    index: i,
                    channels: self.num_mics(),
                })
            })
            .collect::<Result<_>>()?;
        out.array_kind = ArrayKind::Explicit;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Scene(m));
        let finite = |p: &Point| p.iter().all(|v| v.is_finite());
        if !finite(&self.room_dims) || self.room_dims.iter().any(|&d| d <= 0.0 || d > 1e3) {
            return fail(format!("invalid room dimensions {:?}", self.room_dims));
        }
        if !(self.t60.is_finite() && self.t60 > 0.0 && self.t60 <= 10.0) {
            return fail(format!("t60 {} outside (0, 10] s", self.t60));
        }
        if let Some(b) = self.reflection {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("reflection coefficient {b} outside [0, 1)"));
            }
        }
        let inside = |p: &Point| finite(p) && wall_distance(p, &self.room_dims) >= 0.0;
        if !inside(&self.source_pos) {
            return fail(format!("source {:?} outside the room", self.source_pos));
        }
        if self.mic_positions.is_empty() {
            return fail("scene has no microphones".into());
        }
        if let Some(m) = self.array_kind.num_mics() {
            if m != self.mic_positions.len() {
                return fail(format!(
                    "{:?} array with {} microphones",
                    self.array_kind,
                    self.mic_positions.len()
                ));
            }
        }
        for p in &self.mic_positions {
            if !inside(p) {
                return fail(format!("microphone {p:?} outside the room"));
            }
            if distance(p, &self.source_pos) < 1e-6 {
                return fail("source coincides with a microphone".into());
            }
        }
        if let Some(r) = self.noise_plan.diffuse_rsnr_db {
            if !r.is_finite() {
                return fail("non-finite diffuse RSNR".into());
            }
        }
        for d in &self.noise_plan.directional {
            if !inside(&d.position) || !d.rsnr_db.is_finite() {
                return fail(format!("invalid directional source {d:?}"));
            }
            if self.mic_positions.iter().any(|m| distance(m, &d.position) < 1e-6) {
                return fail("noise source coincides with a microphone".into());
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let scene: Self = toml::from_str(text).map_err(|e| Error::Scene(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circular_layout() {
        let p = array_layout(ArrayKind::Circular7);
        assert_eq!(p.len(), 7);
        for i in 0..3 {
            assert!((distance(&p[i], &p[i + 3]) - 0.07).abs() < 1e-9);
        }
        // mic 7 sits at the centre
        assert!(p[..6].iter().all(|q| (distance(q, &p[6]) - 0.035).abs() < 1e-12));
    }

    #[test]
    fn rectangular_layout() {
        let p = array_layout(ArrayKind::Rectangular6);
        assert!((distance(&p[0], &p[3]) - 0.19).abs() < 1e-12);
        assert!((distance(&p[0], &p[2]) - 0.20).abs() < 1e-12);
        let s = sample_scene(ArrayKind::Rectangular6, 3).unwrap();
        let m = &s.mic_positions;
        // rotation keeps the geometry
        assert!((distance(&m[0], &m[3]) - 0.19).abs() < 1e-9);
        assert!((distance(&m[0], &m[2]) - 0.20).abs() < 1e-9);
        assert!((distance(&m[4], &m[5]) - 0.10).abs() < 1e-9);
    }

    #[test]
    fn sampled_scenes_respect_constraints() {
        let cfg = SamplerConfig::default();
        for seed in 0..1000u64 {
            let kind = [ArrayKind::Circular7, ArrayKind::Rectangular6, ArrayKind::Random][seed as usize % 3];
            let s = sample_scene(kind, seed).unwrap();
            s.validate().unwrap();
            let d = s.room_dims;
            assert!((3.0..=7.0).contains(&d[0]) && (3.0..=9.0).contains(&d[1]) && (2.3..=3.5).contains(&d[2]));
            assert!((0.1..=0.5).contains(&s.t60));
            let mut pts = s.mic_positions.clone();
            pts.push(s.source_pos);
            pts.extend(s.noise_plan.directional.iter().map(|n| n.position));
            assert!(pts.iter().all(|p| wall_distance(p, &d) >= WALL_MARGIN - 1e-12), "{s:?}");
            assert!((cfg.source_height[0]..=cfg.source_height[1]).contains(&s.source_pos[2]));
            assert!(s.mic_positions.iter().all(|m| (1.0..=1.5).contains(&m[2])));
            assert!(s.noise_plan.directional.len() <= 3);
            let r = s.noise_plan.diffuse_rsnr_db.unwrap();
            assert!((-5.0..=20.0).contains(&r));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        assert_eq!(
            sample_scene(ArrayKind::Random, 5).unwrap(),
            sample_scene(ArrayKind::Random, 5).unwrap()
        );
        assert_ne!(
            sample_scene(ArrayKind::Random, 5).unwrap(),
            sample_scene(ArrayKind::Random, 6).unwrap()
        );
    }

    #[test]
    fn directional_mix_of_plans() {
        let with = (0..200)
            .filter(|&s| {
                !sample_scene(ArrayKind::Circular7, s)
                    .unwrap()
                    .noise_plan
                    .directional
                    .is_empty()
            })
            .count();
        assert!(with > 60 && with < 140, "{with}");
        let s = sample_scene_with(ArrayKind::Circular7, 1, &SamplerConfig::diffuse_only()).unwrap();
        assert!(s.noise_plan.directional.is_empty());
    }

    #[test]
    fn toml_round_trip() {
        let s = sample_scene(ArrayKind::Circular7, 11).unwrap();
        let back = RoomScene::from_toml(&s.to_toml()).unwrap();
        assert_eq!(s, back);
        assert!(RoomScene::from_toml("seed = 1").is_err());
        let mut bad = s.clone();
        bad.source_pos = [-1.0, 1.0, 1.0];
        assert!(RoomScene::from_toml(&bad.to_toml()).is_err());
    }

    #[test]
    fn subset_and_closest() {
        let s = sample_scene(ArrayKind::Circular7, 2).unwrap();
        let sub = s.select_mics(&[0, 6, 3]).unwrap();
        assert_eq!(
            sub.mic_positions,
            vec![s.mic_positions[0], s.mic_positions[6], s.mic_positions[3]]
        );
        assert!(s.select_mics(&[7]).is_err());
        let c = s.closest_mic();
        let dc = distance(&s.mic_positions[c], &s.source_pos);
        assert!(s.mic_positions.iter().all(|m| distance(m, &s.source_pos) >= dc));
    }
}
