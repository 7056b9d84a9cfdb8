//! End-to-end enhancement: STFT, mask, MVDR, optional post-masking, iSTFT.

use crate::beamform::{
    apply_beamformer, apply_mask_floor, estimate_covariances, mvdr_weights, oracle_mask, select_reference, BeamWeights,
    CovariancePair, TFMask, MASK_SUM_FLOOR,
};
use crate::error::{Error, Result};
use crate::features::{extract_features, normalize_features};
use crate::linalg::CMatrix;
use crate::metrics::{ci_sdr, CISDRConfig};
use crate::net::MaskNet;
use crate::signal::{istft, stft, Waveform, DEFAULT_FRAME_SIZE, DEFAULT_HOP};
use crate::simulate::RoomScene;

/// Where the time-frequency mask comes from.
#[derive(Clone, Copy, Debug)]
pub enum MaskSource<'a> {
    /// Computed from the known early speech image.
    Oracle {
        early: &'a Waveform,
        /// Channel of `early` the mask is built on; the one with the most
        /// energy when `None`.
        channel: Option<usize>,
    },
    Net(&'a MaskNet),
    Given(&'a TFMask),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ReferenceMode {
    #[default]
    Auto,
    Fixed(usize),
}

impl std::str::FromStr for ReferenceMode {
    type Err = Error;

    /// `auto`, or a zero-based channel index optionally written `fixed:N`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        s.strip_prefix("fixed:")
            .unwrap_or(s)
            .parse()
            .map(Self::Fixed)
            .map_err(|_| Error::InvalidConfig(format!("reference {s:?} is neither auto nor an index")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnhanceConfig {
    pub frame_size: usize,
    pub hop: usize,
    /// Post-mask floor in dB; `None` skips post-masking.
    pub g_min_db: Option<f64>,
    pub reference: ReferenceMode,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            frame_size: DEFAULT_FRAME_SIZE,
            hop: DEFAULT_HOP,
            g_min_db: None,
            reference: ReferenceMode::Auto,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Enhanced {
    pub output: Waveform,
    pub reference: usize,
    pub mask: TFMask,
}

/// Subbands whose desired and undesired mask sums both clear the
/// covariance-estimation floor. The others are passed through from the
/// reference channel instead of beamformed.
fn usable_subbands(g: &TFMask) -> Vec<bool> {
    let nn = g.num_frames();
    let threshold = MASK_SUM_FLOOR * nn as f64;
    g.values()
        .chunks(nn.max(1))
        .map(|row| {
            let d: f64 = row.iter().sum();
            d > threshold && nn as f64 - d > threshold
        })
        .collect()
}

fn keep(m: &[CMatrix], usable: &[bool]) -> Vec<CMatrix> {
    m.iter()
        .zip(usable)
        .filter(|(_, u)| **u)
        .map(|(x, _)| x.clone())
        .collect()
}

/// Channel with the largest energy, lowest index on ties.
pub fn loudest_channel(w: &Waveform) -> usize {
    (0..w.num_channels()).fold(0, |best, m| if w.energy(m) > w.energy(best) { m } else { best })
}

pub fn enhance(mixture: &Waveform, mask: MaskSource<'_>, cfg: &EnhanceConfig) -> Result<Enhanced> {
    let y = stft(mixture, cfg.frame_size, cfg.hop)?;
    let g = match mask {
        MaskSource::Oracle { early, channel } => {
            if early.num_channels() != mixture.num_channels() || early.len() != mixture.len() {
                return Err(Error::ShapeMismatch(format!(
                    "early image {}x{} vs mixture {}x{}",
                    early.num_channels(),
                    early.len(),
                    mixture.num_channels(),
                    mixture.len()
                )));
            }
            let d = stft(early, cfg.frame_size, cfg.hop)?;
            oracle_mask(&d, &y, channel.unwrap_or_else(|| loudest_channel(early)))?
        }
        MaskSource::Net(net) => net.forward(&normalize_features(&extract_features(&y)?)?)?,
        MaskSource::Given(g) => g.clone(),
    };
    let usable = usable_subbands(&g);
    if !usable.iter().any(|&u| u) {
        // reports the first offending subband
        estimate_covariances(&y, &g)?;
    }
    let cov = if usable.iter().all(|&u| u) {
        estimate_covariances(&y, &g)?
    } else {
        let mut patched = g.values().to_vec();
        let nn = g.num_frames();
        for (f, _) in usable.iter().enumerate().filter(|(_, u)| !**u) {
            patched[f * nn..(f + 1) * nn].fill(0.5);
        }
        estimate_covariances(&y, &TFMask::new(patched, g.num_bins(), nn)?)?
    };
    let reference = match cfg.reference {
        ReferenceMode::Auto => select_reference(&CovariancePair {
            phi_dd: keep(&cov.phi_dd, &usable),
            phi_uu: keep(&cov.phi_uu, &usable),
        })?,
        ReferenceMode::Fixed(r) if r < y.num_channels() => r,
        ReferenceMode::Fixed(r) => {
            return Err(Error::InvalidChannel {
                index: r,
                channels: y.num_channels(),
            })
        }
    };
    let mut w = mvdr_weights(&cov, reference)?;
    let pass = BeamWeights::selector(1, y.num_channels(), reference).w.remove(0);
    for (wf, _) in w.w.iter_mut().zip(&usable).filter(|(_, u)| !**u) {
        wf.clone_from(&pass);
    }
    let mut d = apply_beamformer(&y, &w)?;
    if let Some(floor) = cfg.g_min_db {
        d = apply_mask_floor(&d, &g, floor)?;
    }
    Ok(Enhanced {
        output: istft(&d)?,
        reference,
        mask: g,
    })
}

/// Evaluation target: the early image at the microphone closest to the
/// source, or at the loudest channel without geometry.
pub fn evaluation_channel(early: &Waveform, scene: Option<&RoomScene>) -> usize {
    match scene {
        Some(s) if s.num_mics() == early.num_channels() => s.closest_mic(),
        _ => loudest_channel(early),
    }
}

/// CI-SDR of the unprocessed closest microphone and of the enhanced output,
/// both against the early image at that microphone.
pub fn improvement(
    mixture: &Waveform,
    early: &Waveform,
    enhanced: &Waveform,
    scene: Option<&RoomScene>,
    cfg: &CISDRConfig,
) -> Result<(f64, f64)> {
    let c = evaluation_channel(early, scene);
    let s = early.channel(c);
    Ok((
        ci_sdr(s, mixture.channel(c), cfg)?,
        ci_sdr(s, enhanced.channel(0), cfg)?,
    ))
}
