//! Short-time Fourier transform with a weighted overlap-add inverse.
//!
//! Frame `f` covers samples `[f·hop, f·hop + window_len)`; the tail of the
//! buffer is zero-padded so that every input sample lies in some frame. Only
//! the non-negative frequency bins are stored, so a spectrogram has
//! `fft_len / 2 + 1` rows and one column per frame.

use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio_io::AudioBuffer;
use crate::error::{Error, Result};

/// Summed squared window values below this are clamped during overlap-add.
/// Only the first and last `window_len - hop` output samples are affected.
const WOLA_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowKind {
    #[default]
    Hann,
}

impl WindowKind {
    /// Periodic window of length `len`.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..len)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftParams {
    pub window_len: usize,
    pub hop: usize,
    pub fft_len: usize,
    pub window: WindowKind,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            window_len: 1024,
            hop: 512,
            fft_len: 1024,
            window: WindowKind::Hann,
        }
    }
}

impl StftParams {
    pub fn new(window_len: usize, hop: usize, fft_len: usize) -> Result<Self> {
        let p = Self {
            window_len,
            hop,
            fft_len,
            window: WindowKind::Hann,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.hop == 0 {
            return Err(Error::InvalidParams(
                "window length and hop must be positive".into(),
            ));
        }
        if self.hop > self.window_len {
            return Err(Error::InvalidParams(format!(
                "hop {} exceeds window length {}",
                self.hop, self.window_len
            )));
        }
        if !self.fft_len.is_power_of_two() || self.fft_len < self.window_len {
            return Err(Error::InvalidParams(format!(
                "fft length {} must be a power of two no smaller than the window",
                self.fft_len
            )));
        }
        Ok(())
    }

    /// Hann overlap-add reconstructs exactly for hops of a half or a quarter window.
    pub fn check_reconstructible(&self) -> Result<()> {
        self.validate()?;
        let ok = match self.window {
            WindowKind::Hann => {
                (self.window_len.is_multiple_of(2) && self.hop == self.window_len / 2)
                    || (self.window_len.is_multiple_of(4) && self.hop == self.window_len / 4)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "hop {} does not give perfect reconstruction for a {}-sample Hann window",
                self.hop, self.window_len
            )))
        }
    }

    pub fn bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    /// Number of frames needed to cover `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len <= self.window_len {
            1
        } else {
            1 + (len - self.window_len).div_ceil(self.hop)
        }
    }

    /// Length of the overlap-add output for `frames` frames.
    pub fn output_len(&self, frames: usize) -> usize {
        frames.saturating_sub(1) * self.hop + self.window_len
    }
}

/// Magnitudes and phases of an STFT, bins × frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitudes: Array2<f64>,
    pub phases: Array2<f64>,
    pub params: StftParams,
    pub sample_rate_hz: u32,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.magnitudes.nrows()
    }

    pub fn frames(&self) -> usize {
        self.magnitudes.ncols()
    }
}

pub fn stft(buf: &AudioBuffer, params: &StftParams) -> Result<Spectrogram> {
    params.validate()?;
    let len = buf.len();
    if len < params.window_len {
        return Err(Error::BufferTooShort {
            len,
            window: params.window_len,
        });
    }
    let frames = params.frame_count(len);
    let bins = params.bins();
    let window = params.window.coefficients(params.window_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(params.fft_len);

    let mut magnitudes = Array2::<f64>::zeros((bins, frames));
    let mut phases = Array2::<f64>::zeros((bins, frames));
    let mut frame = vec![Complex64::new(0.0, 0.0); params.fft_len];
    for f in 0..frames {
        let start = f * params.hop;
        frame.fill(Complex64::new(0.0, 0.0));
        for (i, w) in window.iter().enumerate() {
            if let Some(&s) = buf.samples.get(start + i) {
                frame[i].re = s * w;
            }
        }
        fft.process(&mut frame);
        for b in 0..bins {
            let c = frame[b];
            magnitudes[[b, f]] = c.norm();
            let phi = c.arg();
            phases[[b, f]] = if phi <= -PI { PI } else { phi };
        }
    }
    debug_assert!(magnitudes.iter().all(|&m| m >= 0.0));

    Ok(Spectrogram {
        magnitudes,
        phases,
        params: *params,
        sample_rate_hz: buf.sample_rate_hz,
    })
}

/// Inverse STFT by windowed overlap-add, normalized by the summed squared
/// window. Output length is `(frames - 1)·hop + window_len`.
pub fn istft(spec: &Spectrogram) -> Result<AudioBuffer> {
    let params = &spec.params;
    params.check_reconstructible()?;
    if spec.magnitudes.dim() != spec.phases.dim() {
        return Err(Error::DimensionMismatch(format!(
            "magnitudes {:?} vs phases {:?}",
            spec.magnitudes.dim(),
            spec.phases.dim()
        )));
    }
    if spec.bins() != params.bins() {
        return Err(Error::DimensionMismatch(format!(
            "{} bins, expected {} for fft length {}",
            spec.bins(),
            params.bins(),
            params.fft_len
        )));
    }

    let n = params.fft_len;
    let frames = spec.frames();
    let out_len = params.output_len(frames);
    let window = params.window.coefficients(params.window_len);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);

    let mut acc = vec![0.0; out_len];
    let mut norm = vec![0.0; out_len];
    let mut frame = vec![Complex64::new(0.0, 0.0); n];
    for f in 0..frames {
        for b in 0..=n / 2 {
            frame[b] = Complex64::from_polar(spec.magnitudes[[b, f]], spec.phases[[b, f]]);
        }
        frame[0].im = 0.0;
        frame[n / 2].im = 0.0;
        for b in n / 2 + 1..n {
            frame[b] = frame[n - b].conj();
        }
        ifft.process(&mut frame);
        let start = f * params.hop;
        for (i, w) in window.iter().enumerate() {
            acc[start + i] += frame[i].re / n as f64 * w;
            norm[start + i] += w * w;
        }
    }
    let samples = acc
        .iter()
        .zip(&norm)
        .map(|(a, w2)| a / w2.max(WOLA_FLOOR))
        .collect();
    AudioBuffer::new(samples, spec.sample_rate_hz)
}

/// Inverse transform of `mags` combined with the phases of `reference`.
pub fn rebuild_with_phases(mags: &Array2<f64>, reference: &Spectrogram) -> Result<AudioBuffer> {
    if mags.dim() != reference.magnitudes.dim() {
        return Err(Error::DimensionMismatch(format!(
            "magnitudes {:?} vs reference {:?}",
            mags.dim(),
            reference.magnitudes.dim()
        )));
    }
    let spec = Spectrogram {
        magnitudes: mags.clone(),
        phases: reference.phases.clone(),
        params: reference.params,
        sample_rate_hz: reference.sample_rate_hz,
    };
    istft(&spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buffer(samples: Vec<f64>) -> AudioBuffer {
        AudioBuffer::new(samples, 16_000).unwrap()
    }

    fn small() -> StftParams {
        StftParams::new(256, 128, 256).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(StftParams::new(256, 300, 256).is_err());
        assert!(StftParams::new(256, 64, 300).is_err());
        assert!(StftParams::new(256, 64, 128).is_err());
        assert!(StftParams::new(256, 64, 512).is_ok());
        assert!(StftParams::new(256, 100, 256)
            .unwrap()
            .check_reconstructible()
            .is_err());
        assert!(StftParams::new(256, 64, 256)
            .unwrap()
            .check_reconstructible()
            .is_ok());
    }

    #[test]
    fn frame_count_covers_tail() {
        let p = small();
        assert_eq!(p.frame_count(256), 1);
        assert_eq!(p.frame_count(257), 2);
        assert_eq!(p.frame_count(384), 2);
        assert_eq!(p.frame_count(385), 3);
        for len in 256..1200 {
            let n = p.frame_count(len);
            assert!(p.output_len(n) >= len);
            assert!(p.output_len(n - 1) < len || n == 1);
        }
    }

    #[test]
    fn too_short_buffer() {
        let err = stft(&buffer(vec![0.0; 100]), &small()).unwrap_err();
        assert!(matches!(
            err,
            Error::BufferTooShort {
                len: 100,
                window: 256
            }
        ));
    }

    #[test]
    fn zero_buffer_gives_zero_magnitudes() {
        let s = stft(&buffer(vec![0.0; 1000]), &small()).unwrap();
        assert_eq!(s.bins(), 129);
        assert!(s.magnitudes.iter().all(|&m| m == 0.0));
        assert!(istft(&s).unwrap().samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bin_centred_sine_stays_in_main_lobe() {
        let p = small();
        let b = 10;
        let freq = b as f64 * 16_000.0 / p.fft_len as f64;
        let x: Vec<f64> = (0..2048)
            .map(|i| (2.0 * PI * freq * i as f64 / 16_000.0).sin())
            .collect();
        let s = stft(&buffer(x), &p).unwrap();
        // interior frames only: the last frame is zero-padded
        for f in 0..s.frames() - 1 {
            let col = s.magnitudes.column(f);
            let total: f64 = col.iter().map(|m| m * m).sum();
            let lobe: f64 = (b - 1..=b + 1).map(|k| col[k] * col[k]).sum();
            assert!(lobe >= 0.99 * total);
            // Hann main lobe is (1/4, 1/2, 1/4) in amplitude
            assert!((col[b] * col[b] / total - 2.0 / 3.0).abs() < 1e-9);
            let argmax = (0..col.len())
                .max_by(|&i, &j| col[i].total_cmp(&col[j]))
                .unwrap();
            assert_eq!(argmax, b);
        }
    }

    #[test]
    fn magnitudes_ignore_global_phase() {
        let p = small();
        let freq = 17.0 * 16_000.0 / p.fft_len as f64;
        let make = |phase: f64| {
            let x = (0..2048)
                .map(|i| (2.0 * PI * freq * i as f64 / 16_000.0 + phase).sin())
                .collect();
            stft(&buffer(x), &p).unwrap()
        };
        let a = make(0.0);
        let b = make(1.234);
        for f in 0..a.frames() - 1 {
            for k in 0..a.bins() {
                assert!((a.magnitudes[[k, f]] - b.magnitudes[[k, f]]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn parseval_per_frame() {
        let p = StftParams::new(200, 100, 256).unwrap();
        let x: Vec<f64> = (0..1500)
            .map(|i| ((i * 7919) % 113) as f64 / 113.0 - 0.5)
            .collect();
        let window = p.window.coefficients(p.window_len);
        let s = stft(&buffer(x.clone()), &p).unwrap();
        for f in 0..s.frames() {
            let time: f64 = (0..p.window_len)
                .map(|i| x.get(f * p.hop + i).copied().unwrap_or(0.0) * window[i])
                .map(|v| v * v)
                .sum();
            let col = s.magnitudes.column(f);
            let last = col.len() - 1;
            let freq: f64 = col
                .iter()
                .enumerate()
                .map(|(k, m)| {
                    if k == 0 || k == last {
                        m * m
                    } else {
                        2.0 * m * m
                    }
                })
                .sum::<f64>()
                / p.fft_len as f64;
            assert!((time - freq).abs() <= 1e-9 * time.max(1e-300));
        }
    }

    #[test]
    fn phases_in_half_open_interval() {
        let x: Vec<f64> = (0..2000).map(|i| ((i * 31) % 17) as f64 - 8.0).collect();
        let s = stft(&buffer(x), &small()).unwrap();
        assert!(s.phases.iter().all(|&p| p > -PI && p <= PI));
    }

    #[test]
    fn round_trip_interior_both_hops() {
        let x: Vec<f64> = (0..3000)
            .map(|i| (i as f64 * 0.013).sin() + 0.3 * (i as f64 * 0.71).cos())
            .collect();
        for hop in [128, 64] {
            let p = StftParams::new(256, hop, 256).unwrap();
            let y = istft(&stft(&buffer(x.clone()), &p).unwrap()).unwrap();
            assert_eq!(y.len(), p.output_len(p.frame_count(x.len())));
            let edge = p.window_len - p.hop;
            for i in edge..x.len() - edge {
                assert!((x[i] - y.samples[i]).abs() <= 1e-9, "hop {hop} sample {i}");
            }
        }
    }

    #[test]
    fn istft_rejects_bad_hop() {
        let p = StftParams::new(256, 96, 256).unwrap();
        let s = stft(&buffer(vec![0.1; 1000]), &p).unwrap();
        assert!(matches!(istft(&s), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn istft_is_linear_in_magnitude() {
        let x: Vec<f64> = (0..2000).map(|i| (i as f64 * 0.05).sin()).collect();
        let s = stft(&buffer(x), &small()).unwrap();
        let y1 = istft(&s).unwrap();
        let doubled = s.magnitudes.mapv(|m| 2.0 * m);
        let y2 = rebuild_with_phases(&doubled, &s).unwrap();
        for i in 128..1800 {
            assert!((2.0 * y1.samples[i] - y2.samples[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn rebuild_identity_and_zero() {
        let x: Vec<f64> = (0..1500).map(|i| (i as f64 * 0.3).cos()).collect();
        let s = stft(&buffer(x), &small()).unwrap();
        assert_eq!(
            rebuild_with_phases(&s.magnitudes, &s).unwrap(),
            istft(&s).unwrap()
        );
        let zeros = Array2::zeros(s.magnitudes.dim());
        assert!(rebuild_with_phases(&zeros, &s)
            .unwrap()
            .samples
            .iter()
            .all(|&v| v == 0.0));
        let wrong = Array2::zeros((3, 3));
        assert!(matches!(
            rebuild_with_phases(&wrong, &s),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn rebuild_recovers_band_limited_part() {
        // A low tone plus a high tone whose main lobes do not overlap. Keeping
        // only the low bins of the mixture magnitude, with mixture phases,
        // must reconstruct the low tone.
        let p = small();
        let sr = 16_000.0;
        let low_f = 8.0 * sr / 256.0;
        let high_f = 90.0 * sr / 256.0;
        let low: Vec<f64> = (0..4096)
            .map(|i| (2.0 * PI * low_f * i as f64 / sr).sin())
            .collect();
        let mix: Vec<f64> = low
            .iter()
            .enumerate()
            .map(|(i, v)| v + 0.7 * (2.0 * PI * high_f * i as f64 / sr + 0.4).sin())
            .collect();
        let mix_spec = stft(&buffer(mix), &p).unwrap();
        let mut mags = mix_spec.magnitudes.clone();
        for k in 40..mags.nrows() {
            mags.row_mut(k).fill(0.0);
        }
        let rebuilt = rebuild_with_phases(&mags, &mix_spec).unwrap();
        for i in 128..4096 - 256 {
            assert!((rebuilt.samples[i] - low[i]).abs() < 1e-9, "sample {i}");
        }
    }
}
