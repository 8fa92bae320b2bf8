use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::AudioBuffer;
use crate::error::{Error, Result};

/// Raised-cosine ramp applied at tone edges to avoid broadband clicks.
const FADE_S: f64 = 0.01;

/// A harmonic tone: `harmonics` partials at integer multiples of `freq_hz`,
/// partial `h` having amplitude `amplitude / h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tone {
    pub freq_hz: f64,
    pub amplitude: f64,
    pub start_s: f64,
    pub duration_s: f64,
    pub harmonics: usize,
}

impl Tone {
    pub fn sine(freq_hz: f64, amplitude: f64, duration_s: f64) -> Self {
        Self {
            freq_hz,
            amplitude,
            start_s: 0.0,
            duration_s,
            harmonics: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    WhiteGaussian {
        std: f64,
    },
    /// A recorded noise, looped or truncated to the clean duration.
    Recording(AudioBuffer),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub tones: Vec<Tone>,
    pub noise: NoiseKind,
    /// Mixture SNR in dB; `f64::INFINITY` yields a noiseless mixture.
    pub snr_db: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub clean: AudioBuffer,
    pub noise: AudioBuffer,
    pub mixture: AudioBuffer,
}

fn render_tones(tones: &[Tone], len: usize, sample_rate_hz: u32) -> Vec<f64> {
    let sr = sample_rate_hz as f64;
    let nyquist = sr / 2.0;
    let mut out = vec![0.0; len];
    let fade = (FADE_S * sr).round() as usize;
    for tone in tones {
        let start = (tone.start_s * sr).round().max(0.0) as usize;
        let end = (((tone.start_s + tone.duration_s) * sr).round() as usize).min(len);
        if start >= end {
            continue;
        }
        let span = end - start;
        for (i, slot) in out[start..end].iter_mut().enumerate() {
            let t = i as f64 / sr;
            let mut v = 0.0;
            for h in 1..=tone.harmonics.max(1) {
                let f = tone.freq_hz * h as f64;
                if f >= nyquist {
                    break;
                }
                v += (tone.amplitude / h as f64) * (2.0 * PI * f * t).sin();
            }
            let edge = i.min(span - 1 - i);
            let gain = if fade > 0 && edge < fade {
                0.5 - 0.5 * (PI * edge as f64 / fade as f64).cos()
            } else {
                1.0
            };
            *slot += v * gain;
        }
    }
    out
}

fn white_noise(len: usize, std: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let normal =
        Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(format!("noise std {std}: {e}")))?;
    Ok((0..len).map(|_| normal.sample(rng)).collect())
}

fn mean_power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Renders the clean tone set, draws or loops the noise, and scales the noise
/// so that `10·log10(P_clean / P_noise)` equals `cfg.snr_db`.
///
/// `mixture[i] == clean[i] + noise[i]` holds exactly.
pub fn synth_mixture(cfg: &SynthConfig) -> Result<Mixture> {
    if !(cfg.duration_s > 0.0) || !cfg.duration_s.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "duration must be positive, got {}",
            cfg.duration_s
        )));
    }
    if cfg.snr_db.is_nan() || cfg.snr_db == f64::NEG_INFINITY {
        return Err(Error::InvalidConfig(format!("invalid SNR {}", cfg.snr_db)));
    }
    if cfg.sample_rate_hz == 0 {
        return Err(Error::InvalidConfig("sample rate must be positive".into()));
    }
    let len = (cfg.duration_s * cfg.sample_rate_hz as f64).round() as usize;
    if len == 0 {
        return Err(Error::InvalidConfig(
            "duration rounds to zero samples".into(),
        ));
    }

    let clean = render_tones(&cfg.tones, len, cfg.sample_rate_hz);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let raw_noise = match &cfg.noise {
        NoiseKind::WhiteGaussian { std } => white_noise(len, *std, &mut rng)?,
        NoiseKind::Recording(rec) => {
            if rec.is_empty() {
                return Err(Error::InvalidConfig("noise recording is empty".into()));
            }
            rec.samples.iter().copied().cycle().take(len).collect()
        }
    };

    let gain = if cfg.snr_db == f64::INFINITY {
        0.0
    } else {
        let p_clean = mean_power(&clean);
        let p_noise = mean_power(&raw_noise);
        if p_clean == 0.0 || p_noise == 0.0 {
            return Err(Error::InvalidConfig(
                "a finite SNR needs non-silent clean and noise signals".into(),
            ));
        }
        (p_clean / (p_noise * 10f64.powf(cfg.snr_db / 10.0))).sqrt()
    };
    let noise: Vec<f64> = raw_noise.iter().map(|v| v * gain).collect();
    let mixture: Vec<f64> = clean.iter().zip(&noise).map(|(c, n)| c + n).collect();

    let sr = cfg.sample_rate_hz;
    Ok(Mixture {
        clean: AudioBuffer::new(clean, sr)?,
        noise: AudioBuffer::new(noise, sr)?,
        mixture: AudioBuffer::new(mixture, sr)?,
    })
}

/// Synthetic stand-in for a speech-plus-noise experiment: random three-note
/// harmonic chords drawn from a fixed scale, plus white Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ChordFixture {
    pub sample_rate_hz: u32,
    pub prior_s: f64,
    pub test_s: f64,
    pub chord_s: f64,
    pub snr_db: f64,
    /// RMS of the clean signals.
    pub clean_rms: f64,
    pub harmonics: usize,
    pub seed: u64,
}

impl Default for ChordFixture {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            prior_s: 10.0,
            test_s: 5.0,
            chord_s: 0.5,
            snr_db: 5.0,
            clean_rms: 0.2,
            harmonics: 4,
            seed: 0,
        }
    }
}

/// Everything a denoising experiment needs: training priors plus a test
/// mixture with its ground-truth parts.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSet {
    pub clean_prior: AudioBuffer,
    pub noise_prior: AudioBuffer,
    pub clean: AudioBuffer,
    pub noise: AudioBuffer,
    pub mixture: AudioBuffer,
}

/// A-minor pentatonic over two octaves starting at A3.
const SCALE_SEMITONES: [i32; 10] = [0, 3, 5, 7, 10, 12, 15, 17, 19, 22];
const BASE_HZ: f64 = 220.0;

fn random_chords(
    duration_s: f64,
    chord_s: f64,
    harmonics: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Tone> {
    let count = (duration_s / chord_s).ceil() as usize;
    let mut tones = Vec::with_capacity(3 * count);
    for c in 0..count {
        let mut picked: Vec<usize> = Vec::with_capacity(3);
        while picked.len() < 3 {
            let idx = rng.random_range(0..SCALE_SEMITONES.len());
            if !picked.contains(&idx) {
                picked.push(idx);
            }
        }
        for idx in picked {
            let freq = BASE_HZ * 2f64.powf(SCALE_SEMITONES[idx] as f64 / 12.0);
            tones.push(Tone {
                freq_hz: freq,
                amplitude: 1.0,
                start_s: c as f64 * chord_s,
                duration_s: chord_s,
                harmonics,
            });
        }
    }
    tones
}

fn scale_tones_to_rms(tones: &mut [Tone], duration_s: f64, sample_rate_hz: u32, rms: f64) {
    let len = (duration_s * sample_rate_hz as f64).round() as usize;
    let current = mean_power(&render_tones(tones, len, sample_rate_hz)).sqrt();
    if current > 0.0 {
        for t in tones.iter_mut() {
            t.amplitude *= rms / current;
        }
    }
}

/// Builds the prior recordings and the test mixture for a [`ChordFixture`].
///
/// Priors and test share the note vocabulary but use independent chord
/// sequences and independent noise draws with identical statistics.
pub fn chord_fixture(fx: &ChordFixture) -> Result<FixtureSet> {
    if !(fx.chord_s > 0.0) || !(fx.clean_rms > 0.0) {
        return Err(Error::InvalidConfig(
            "chord length and clean RMS must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(fx.seed);
    let mut prior_tones = random_chords(fx.prior_s, fx.chord_s, fx.harmonics, &mut rng);
    let mut test_tones = random_chords(fx.test_s, fx.chord_s, fx.harmonics, &mut rng);
    scale_tones_to_rms(
        &mut prior_tones,
        fx.prior_s,
        fx.sample_rate_hz,
        fx.clean_rms,
    );
    scale_tones_to_rms(&mut test_tones, fx.test_s, fx.sample_rate_hz, fx.clean_rms);

    let test = synth_mixture(&SynthConfig {
        duration_s: fx.test_s,
        sample_rate_hz: fx.sample_rate_hz,
        tones: test_tones,
        noise: NoiseKind::WhiteGaussian { std: 1.0 },
        snr_db: fx.snr_db,
        seed: rng.random(),
    })?;
    let noise_std = test.noise.rms();

    let clean_prior = synth_mixture(&SynthConfig {
        duration_s: fx.prior_s,
        sample_rate_hz: fx.sample_rate_hz,
        tones: prior_tones,
        noise: NoiseKind::WhiteGaussian { std: 1.0 },
        snr_db: f64::INFINITY,
        seed: 0,
    })?
    .clean;
    let prior_len = clean_prior.len();
    let noise_prior = AudioBuffer::new(
        white_noise(prior_len, noise_std.max(f64::MIN_POSITIVE), &mut rng)?,
        fx.sample_rate_hz,
    )?;

    Ok(FixtureSet {
        clean_prior,
        noise_prior,
        clean: test.clean,
        noise: test.noise,
        mixture: test.mixture,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine_config(snr_db: f64, seed: u64) -> SynthConfig {
        // amplitude sqrt(2) gives a unit-RMS sine
        SynthConfig {
            duration_s: 1.0,
            sample_rate_hz: 16_000,
            tones: vec![Tone::sine(440.0, 2f64.sqrt(), 1.0)],
            noise: NoiseKind::WhiteGaussian { std: 0.3 },
            snr_db,
            seed,
        }
    }

    #[test]
    fn zero_db_gives_equal_power() {
        let m = synth_mixture(&sine_config(0.0, 3)).unwrap();
        let snr = 10.0 * (m.clean.power() / m.noise.power()).log10();
        assert!(snr.abs() <= 0.1, "snr {snr}");
        assert!((m.noise.rms() - m.clean.rms()).abs() < 1e-9);
    }

    #[test]
    fn requested_snr_is_hit() {
        for snr in [-5.0, 5.0, 20.0] {
            let m = synth_mixture(&sine_config(snr, 1)).unwrap();
            let got = 10.0 * (m.clean.power() / m.noise.power()).log10();
            assert!((got - snr).abs() <= 0.1);
        }
    }

    #[test]
    fn infinite_snr_is_clean() {
        let m = synth_mixture(&sine_config(f64::INFINITY, 9)).unwrap();
        assert_eq!(m.mixture, m.clean);
        assert!(m.noise.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mixture_is_exact_sum() {
        let m = synth_mixture(&sine_config(3.0, 4)).unwrap();
        for i in 0..m.mixture.len() {
            assert_eq!(
                m.mixture.samples[i],
                m.clean.samples[i] + m.noise.samples[i]
            );
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = synth_mixture(&sine_config(5.0, 42)).unwrap();
        let b = synth_mixture(&sine_config(5.0, 42)).unwrap();
        assert_eq!(a, b);
        let c = synth_mixture(&sine_config(5.0, 43)).unwrap();
        assert_ne!(a.noise, c.noise);
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = sine_config(5.0, 0);
        cfg.duration_s = 0.0;
        assert!(matches!(synth_mixture(&cfg), Err(Error::InvalidConfig(_))));
        let cfg = sine_config(f64::NAN, 0);
        assert!(matches!(synth_mixture(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn recorded_noise_is_looped() {
        let rec = AudioBuffer::new(vec![1.0, -1.0, 0.5], 16_000).unwrap();
        let mut cfg = sine_config(0.0, 0);
        cfg.noise = NoiseKind::Recording(rec);
        let m = synth_mixture(&cfg).unwrap();
        let s = &m.noise.samples;
        assert_eq!(s[0], s[3]);
        assert_eq!(s[1], s[4]);
    }

    #[test]
    fn fixture_shapes_and_levels() {
        let fx = ChordFixture {
            prior_s: 2.0,
            test_s: 1.0,
            seed: 5,
            ..ChordFixture::default()
        };
        let set = chord_fixture(&fx).unwrap();
        assert_eq!(set.clean_prior.len(), 32_000);
        assert_eq!(set.noise_prior.len(), 32_000);
        assert_eq!(set.mixture.len(), 16_000);
        assert!((set.clean.rms() - 0.2).abs() < 1e-9);
        let snr = 10.0 * (set.clean.power() / set.noise.power()).log10();
        assert!((snr - 5.0).abs() < 0.1);
        assert!((set.noise_prior.rms() - set.noise.rms()).abs() / set.noise.rms() < 0.05);
        assert_eq!(set, chord_fixture(&fx).unwrap());
    }
}
