//! Multichannel waveform and spectrogram containers and the STFT pair that
//! moves between them.
//!
//! The transform uses a periodic Hann window for both analysis and synthesis
//! at 50% overlap. The signal is zero-padded by half a frame on both sides so
//! every input sample is covered by exactly two frames; the inverse divides
//! the overlap-added output by the summed squared window, which makes the
//! round trip exact wherever that sum is nonzero (everywhere inside the
//! original signal).

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
/// 32 ms at 16 kHz.
pub const DEFAULT_FRAME_SIZE: usize = 512;
/// 16 ms at 16 kHz.
pub const DEFAULT_HOP: usize = 256;

/// Real-valued multichannel signal. All channels have the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::NoChannels);
        }
        if sample_rate == 0 {
            return Err(Error::InvalidWaveform("sample rate must be positive".into()));
        }
        let len = channels[0].len();
        if let Some(m) = channels.iter().position(|c| c.len() != len) {
            return Err(Error::InvalidWaveform(format!(
                "channel {m} has {} samples, channel 0 has {len}",
                channels[m].len()
            )));
        }
        if channels.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidWaveform("non-finite sample".into()));
        }
        Ok(Self { channels, sample_rate })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn zeros(num_channels: usize, len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![vec![0.0; len]; num_channels], sample_rate)
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, m: usize) -> &[f64] {
        &self.channels[m]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Keeps the listed channels, in the listed order.
    pub fn select_channels(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::NoChannels);
        }
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            let c = self.channels.get(i).ok_or(Error::InvalidChannel {
                index: i,
                channels: self.num_channels(),
            })?;
            out.push(c.clone());
        }
        Ok(Self {
            channels: out,
            sample_rate: self.sample_rate,
        })
    }

    pub fn energy(&self, m: usize) -> f64 {
        self.channels[m].iter().map(|x| x * x).sum()
    }
}

/// Complex STFT of a multichannel signal, one-sided in frequency.
///
/// Storage is channel-major, then frame, then bin, so a single frame of a
/// single channel is a contiguous slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    data: Vec<Complex64>,
    num_bins: usize,
    num_frames: usize,
    num_channels: usize,
    frame_size: usize,
    hop: usize,
    signal_len: Option<usize>,
    sample_rate: u32,
}

impl Spectrogram {
    pub fn zeros(num_bins: usize, num_frames: usize, num_channels: usize, frame_size: usize, hop: usize) -> Self {
        Self {
            data: vec![Complex64::new(0.0, 0.0); num_bins * num_frames * num_channels],
            num_bins,
            num_frames,
            num_channels,
            frame_size,
            hop,
            signal_len: None,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }

    /// Zero spectrogram on the same grid as `other` with `num_channels` channels.
    pub fn zeros_like(other: &Spectrogram, num_channels: usize) -> Self {
        Self {
            data: vec![Complex64::new(0.0, 0.0); other.num_bins * other.num_frames * num_channels],
            num_channels,
            ..other.clone_meta()
        }
    }

    /// Builds a spectrogram from `(channel, frame, bin)`-ordered data.
    pub fn from_data(
        data: Vec<Complex64>,
        num_bins: usize,
        num_frames: usize,
        num_channels: usize,
        frame_size: usize,
        hop: usize,
    ) -> Result<Self> {
        if data.len() != num_bins * num_frames * num_channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {num_bins} bins x {num_frames} frames x {num_channels} channels",
                data.len()
            )));
        }
        Ok(Self {
            data,
            num_bins,
            num_frames,
            num_channels,
            frame_size,
            hop,
            signal_len: None,
            sample_rate: DEFAULT_SAMPLE_RATE,
        })
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn frame_size(&self) -> usize {
        self.frame_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn signal_len(&self) -> Option<usize> {
        self.signal_len
    }

    pub fn set_signal_len(&mut self, len: Option<usize>) {
        self.signal_len = len;
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn set_sample_rate(&mut self, sample_rate: u32) {
        self.sample_rate = sample_rate;
    }

    #[inline]
    fn index(&self, f: usize, n: usize, m: usize) -> usize {
        (m * self.num_frames + n) * self.num_bins + f
    }

    #[inline]
    pub fn get(&self, f: usize, n: usize, m: usize) -> Complex64 {
        self.data[self.index(f, n, m)]
    }

    #[inline]
    pub fn set(&mut self, f: usize, n: usize, m: usize, value: Complex64) {
        let i = self.index(f, n, m);
        self.data[i] = value;
    }

    pub fn frame(&self, n: usize, m: usize) -> &[Complex64] {
        let start = self.index(0, n, m);
        &self.data[start..start + self.num_bins]
    }

    pub fn frame_mut(&mut self, n: usize, m: usize) -> &mut [Complex64] {
        let start = self.index(0, n, m);
        &mut self.data[start..start + self.num_bins]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    /// True when both spectrograms index the same grid.
    pub fn same_shape(&self, other: &Spectrogram) -> bool {
        self.num_bins == other.num_bins
            && self.num_frames == other.num_frames
            && self.num_channels == other.num_channels
    }

    pub fn select_channels(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::NoChannels);
        }
        let per_channel = self.num_bins * self.num_frames;
        let mut data = Vec::with_capacity(per_channel * indices.len());
        for &m in indices {
            if m >= self.num_channels {
                return Err(Error::InvalidChannel {
                    index: m,
                    channels: self.num_channels,
                });
            }
            data.extend_from_slice(&self.data[m * per_channel..(m + 1) * per_channel]);
        }
        Ok(Self {
            data,
            num_channels: indices.len(),
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> Self {
        Self {
            data: Vec::new(),
            ..*self
        }
    }
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

fn check_frame(frame_size: usize, hop: usize) -> Result<()> {
    if frame_size < 2 || !frame_size.is_multiple_of(2) {
        return Err(Error::UnsupportedStft(format!(
            "frame size {frame_size} must be even and at least 2"
        )));
    }
    if hop * 2 != frame_size {
        return Err(Error::UnsupportedStft(format!(
            "hop {hop} must be half the frame size {frame_size}"
        )));
    }
    Ok(())
}

/// Number of frames produced for a signal of `len` samples.
pub fn num_frames_for(len: usize, hop: usize) -> usize {
    len.div_ceil(hop) + 1
}

pub fn stft(x: &Waveform, frame_size: usize, hop: usize) -> Result<Spectrogram> {
    check_frame(frame_size, hop)?;
    if x.is_empty() {
        return Err(Error::EmptySignal);
    }
    let len = x.len();
    let num_bins = frame_size / 2 + 1;
    let num_frames = num_frames_for(len, hop);
    let pad = frame_size / 2;
    let window = hann(frame_size);
    let fft = FftPlanner::new().plan_fft_forward(frame_size);

    let mut spec = Spectrogram::zeros(num_bins, num_frames, x.num_channels(), frame_size, hop);
    spec.signal_len = Some(len);
    spec.sample_rate = x.sample_rate();
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_size];
    for m in 0..x.num_channels() {
        let samples = x.channel(m);
        for n in 0..num_frames {
            for (i, b) in buf.iter_mut().enumerate() {
                // Position in the unpadded signal.
                let t = (n * hop + i).wrapping_sub(pad);
                let v = if t < len { samples[t] * window[i] } else { 0.0 };
                *b = Complex64::new(v, 0.0);
            }
            fft.process(&mut buf);
            let frame = spec.frame_mut(n, m);
            frame.copy_from_slice(&buf[..num_bins]);
            frame[0].im = 0.0;
            frame[num_bins - 1].im = 0.0;
        }
    }
    Ok(spec)
}

/// Inverse DFT of one one-sided frame, multiplied by the synthesis window.
///
/// This is the per-frame contribution before overlap-add normalization.
pub fn synthesize_frame(bins: &[Complex64], frame_size: usize) -> Result<Vec<f64>> {
    if frame_size < 2 || !frame_size.is_multiple_of(2) || bins.len() != frame_size / 2 + 1 {
        return Err(Error::ShapeMismatch(format!(
            "{} bins for frame size {frame_size}",
            bins.len()
        )));
    }
    let ifft = FftPlanner::new().plan_fft_inverse(frame_size);
    let window = hann(frame_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_size];
    inverse_frame(bins, &mut buf, ifft.as_ref());
    Ok(buf
        .iter()
        .zip(&window)
        .map(|(c, w)| c.re / frame_size as f64 * w)
        .collect())
}

fn inverse_frame(bins: &[Complex64], buf: &mut [Complex64], ifft: &dyn rustfft::Fft<f64>) {
    let size = buf.len();
    let half = size / 2;
    buf[0] = Complex64::new(bins[0].re, 0.0);
    buf[half] = Complex64::new(bins[half].re, 0.0);
    for k in 1..half {
        buf[k] = bins[k];
        buf[size - k] = bins[k].conj();
    }
    ifft.process(buf);
}

pub fn istft(spec: &Spectrogram) -> Result<Waveform> {
    let frame_size = spec.frame_size;
    check_frame(frame_size, spec.hop)?;
    if spec.num_bins != frame_size / 2 + 1 {
        return Err(Error::ShapeMismatch(format!(
            "{} bins for frame size {frame_size}",
            spec.num_bins
        )));
    }
    if spec.num_channels == 0 {
        return Err(Error::NoChannels);
    }
    if spec.num_frames == 0 {
        return Err(Error::EmptySignal);
    }
    let hop = spec.hop;
    let pad = frame_size / 2;
    let full_len = (spec.num_frames - 1) * hop + frame_size;
    let out_len = spec
        .signal_len
        .unwrap_or((spec.num_frames - 1) * hop)
        .min(full_len - pad);

    let window = hann(frame_size);
    let mut envelope = vec![0.0; full_len];
    for n in 0..spec.num_frames {
        for (i, w) in window.iter().enumerate() {
            envelope[n * hop + i] += w * w;
        }
    }

    let ifft = FftPlanner::new().plan_fft_inverse(frame_size);
    let scale = 1.0 / frame_size as f64;
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_size];
    let mut channels = Vec::with_capacity(spec.num_channels);
    for m in 0..spec.num_channels {
        let mut acc = vec![0.0; full_len];
        for n in 0..spec.num_frames {
            inverse_frame(spec.frame(n, m), &mut buf, ifft.as_ref());
            let dst = &mut acc[n * hop..n * hop + frame_size];
            for ((d, b), w) in dst.iter_mut().zip(&buf).zip(&window) {
                *d += b.re * scale * w;
            }
        }
        let samples = acc[pad..pad + out_len]
            .iter()
            .zip(&envelope[pad..pad + out_len])
            .map(|(a, e)| if *e > 1e-10 { a / e } else { 0.0 })
            .collect();
        channels.push(samples);
    }
    Waveform::new(channels, spec.sample_rate)
}

/// Full linear convolution, `a.len() + b.len() - 1` samples.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= 32 {
        let mut out = vec![0.0; out_len];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        return out;
    }
    let size = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let lift = |x: &[f64]| {
        let mut v: Vec<Complex64> = x.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        v.resize(size, Complex64::new(0.0, 0.0));
        v
    };
    let mut fa = lift(a);
    let mut fb = lift(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / size as f64;
    fa[..out_len].iter().map(|c| c.re * scale).collect()
}

/// Convolution truncated to the length of `signal` (causal filtering).
pub fn filter(signal: &[f64], taps: &[f64]) -> Vec<f64> {
    let mut out = convolve(signal, taps);
    out.truncate(signal.len());
    out
}
