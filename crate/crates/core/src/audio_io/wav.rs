use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioBuffer;
use crate::error::{Error, Result};

fn map_hound(err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::Io(e),
        other => Error::UnsupportedFormat(other.to_string()),
    }
}

/// Reads a PCM (8/16/24/32-bit integer) or 32-bit float WAV file.
///
/// Multi-channel files are folded to mono by averaging the channels of each
/// frame. Integer samples are scaled by `2^(bits-1)` so full scale maps to
/// `[-1, 1)`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let reader = WavReader::open(path).map_err(map_hound)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::UnsupportedFormat("zero channels".into()));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(map_hound)?
        }
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (format, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{bits}-bit {format:?} samples"
            )))
        }
    };

    if interleaved.is_empty() {
        return Err(Error::UnsupportedFormat("data chunk is empty".into()));
    }

    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Quantizes one sample to 16-bit PCM, clamping to full scale first.
pub(crate) fn quantize_i16(sample: f64) -> i16 {
    let clamped = if sample.is_nan() {
        0.0
    } else {
        sample.clamp(-1.0, 1.0)
    };
    (clamped * 32768.0)
        .round()
        .clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// The buffer as it reads back after [`write_wav`].
pub fn quantize_16bit(buf: &AudioBuffer) -> AudioBuffer {
    AudioBuffer {
        samples: buf
            .samples
            .iter()
            .map(|&s| quantize_i16(s) as f64 / 32768.0)
            .collect(),
        sample_rate_hz: buf.sample_rate_hz,
    }
}

/// Writes `buf` as a 16-bit little-endian mono PCM WAV file.
pub fn write_wav(buf: &AudioBuffer, path: impl AsRef<Path>) -> Result<()> {
    if buf.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path.as_ref(), spec).map_err(map_hound)?;
    {
        let mut samples = writer.get_i16_writer(buf.samples.len() as u32);
        for &s in &buf.samples {
            samples.write_sample(quantize_i16(s));
        }
        samples.flush().map_err(map_hound)?;
    }
    writer.finalize().map_err(map_hound)
}
