//! RIFF/WAVE input and output: 16-bit PCM and 32-bit float, any channel count.

use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat as HoundFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::signal::Waveform;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SampleFormat {
    Pcm16,
    #[default]
    Float32,
}

/// Decodes a complete WAV file held in memory.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let reader = WavReader::new(Cursor::new(bytes))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Wav("zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (HoundFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (HoundFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Wav(format!(
                "unsupported sample format {fmt:?} with {bits} bits"
            )))
        }
    };
    if !interleaved.len().is_multiple_of(channels) {
        return Err(Error::Wav(format!(
            "{} samples do not divide into {channels} channels",
            interleaved.len()
        )));
    }
    let frames = interleaved.len() / channels;
    let mut out = vec![Vec::with_capacity(frames); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (c, v) in out.iter_mut().zip(frame) {
            c.push(*v);
        }
    }
    Waveform::new(out, spec.sample_rate)
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes).map_err(|e| match e {
        Error::Wav(msg) => Error::Wav(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Reads a WAV file and rejects it unless it is at `sample_rate`.
pub fn read_wav_at(path: impl AsRef<Path>, sample_rate: u32) -> Result<Waveform> {
    let w = read_wav(path)?;
    if w.sample_rate() != sample_rate {
        return Err(Error::SampleRateMismatch {
            expected: sample_rate,
            got: w.sample_rate(),
        });
    }
    Ok(w)
}

pub fn encode_wav(w: &Waveform, format: SampleFormat) -> Result<Vec<u8>> {
    let channels = u16::try_from(w.num_channels()).map_err(|_| Error::Wav(format!("{} channels", w.num_channels())))?;
    let spec = match format {
        SampleFormat::Pcm16 => WavSpec {
            channels,
            sample_rate: w.sample_rate(),
            bits_per_sample: 16,
            sample_format: HoundFormat::Int,
        },
        SampleFormat::Float32 => WavSpec {
            channels,
            sample_rate: w.sample_rate(),
            bits_per_sample: 32,
            sample_format: HoundFormat::Float,
        },
    };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut writer = WavWriter::new(&mut buf, spec)?;
        for t in 0..w.len() {
            for m in 0..w.num_channels() {
                let v = w.channel(m)[t];
                match format {
                    SampleFormat::Pcm16 => writer.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?,
                    SampleFormat::Float32 => writer.write_sample(v as f32)?,
                }
            }
        }
        writer.finalize()?;
    }
    Ok(buf.into_inner())
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform, format: SampleFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav(w, format)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(channels: usize, len: usize) -> Waveform {
        Waveform::new(
            (0..channels)
                .map(|m| (0..len).map(|t| ((t * (m + 1)) % 200) as f64 / 400.0 - 0.25).collect())
                .collect(),
            16000,
        )
        .unwrap()
    }

    #[test]
    fn float32_round_trip_is_exact_for_f32_values() {
        let w = ramp(7, 1000);
        let back = decode_wav(&encode_wav(&w, SampleFormat::Float32).unwrap()).unwrap();
        assert_eq!(back.num_channels(), 7);
        assert_eq!(back.len(), 1000);
        for m in 0..7 {
            for (a, b) in w.channel(m).iter().zip(back.channel(m)) {
                assert_eq!(*a as f32 as f64, *b);
            }
        }
    }

    #[test]
    fn pcm16_round_trip_within_quantization() {
        let w = ramp(2, 500);
        let back = decode_wav(&encode_wav(&w, SampleFormat::Pcm16).unwrap()).unwrap();
        for m in 0..2 {
            for (a, b) in w.channel(m).iter().zip(back.channel(m)) {
                assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-12);
            }
        }
    }

    #[test]
    fn pcm16_clips() {
        let w = Waveform::mono(vec![2.0, -2.0], 16000).unwrap();
        let back = decode_wav(&encode_wav(&w, SampleFormat::Pcm16).unwrap()).unwrap();
        assert_eq!(back.channel(0), &[32767.0 / 32768.0, -1.0]);
    }

    #[test]
    fn rejects_garbage_and_rate_mismatch() {
        assert!(decode_wav(b"RIFF\x00\x00").is_err());
        let dir = std::env::temp_dir().join(format!("mcse-wav-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.wav");
        let w = Waveform::mono(vec![0.0; 10], 8000).unwrap();
        write_wav(&path, &w, SampleFormat::Float32).unwrap();
        assert!(matches!(
            read_wav_at(&path, 16000),
            Err(Error::SampleRateMismatch {
                expected: 16000,
                got: 8000
            })
        ));
        assert!(read_wav_at(&path, 8000).is_ok());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_unsupported_bit_depth() {
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 24,
            sample_format: HoundFormat::Int,
        };
        let mut buf = Cursor::new(Vec::new());
        {
            let mut w = WavWriter::new(&mut buf, spec).unwrap();
            w.write_sample(5i32).unwrap();
            w.finalize().unwrap();
        }
        assert!(matches!(decode_wav(buf.get_ref()), Err(Error::Wav(_))));
    }
}
