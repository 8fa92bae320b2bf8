//! Dictionary training and mask-based denoising.

use std::io::Write;

use ndarray::{s, Array2, ArrayView2, Zip};
use serde::Serialize;

use crate::audio_io::AudioBuffer;
use crate::error::{Error, Result};
use crate::nmf::{fit_nmf, CodeMatrix, Dictionary, NmfConfig, DEFAULT_EPSILON};
use crate::onmf::{
    fit_onmf, sparse_code_with, write_log_jsonl, CodingOptions, OnmfConfig, SamplerConfig, StepLog,
};
use crate::stft::{rebuild_with_phases, stft, Spectrogram, StftParams};

/// Mixed into the base seed for the noise dictionary so the two trainings
/// draw from unrelated streams.
pub const NOISE_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainer {
    BatchNmf,
    OnlineNmf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseConfig {
    pub trainer: Trainer,
    pub k_signal: usize,
    pub k_noise: usize,
    /// L1 weight while learning dictionaries.
    pub train_alpha: f64,
    /// L1 weight when coding the noisy input.
    pub code_alpha: f64,
    pub stft: StftParams,
    /// Batch layout for the online trainer. Its `seed` is ignored in favour
    /// of [`DenoiseConfig::seed`].
    pub sampler: SamplerConfig,
    pub nmf_max_iters: usize,
    pub nmf_rel_tol: f64,
    pub coding: CodingOptions,
    pub mask_epsilon: f64,
    pub seed: u64,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            trainer: Trainer::OnlineNmf,
            k_signal: 50,
            k_noise: 10,
            train_alpha: 0.0,
            code_alpha: 100.0,
            stft: StftParams::default(),
            sampler: SamplerConfig::default(),
            nmf_max_iters: 500,
            nmf_rel_tol: 1e-4,
            coding: CodingOptions::default(),
            mask_epsilon: 1e-12,
            seed: 0,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_signal == 0 || self.k_noise == 0 {
            return Err(Error::InvalidConfig(
                "signal and noise dictionaries need at least one atom".into(),
            ));
        }
        for (name, v) in [
            ("train alpha", self.train_alpha),
            ("code alpha", self.code_alpha),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} {v} must be ≥ 0")));
            }
        }
        if !(self.mask_epsilon > 0.0) {
            return Err(Error::InvalidConfig("mask epsilon must be positive".into()));
        }
        self.stft.check_reconstructible()
    }

    pub fn noise_seed(&self) -> u64 {
        self.seed ^ NOISE_SEED_SALT
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainLog {
    /// Loss after initialization and after each iteration.
    Batch(Vec<f64>),
    Online(Vec<StepLog>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub dictionary: Dictionary,
    /// Final loss for batch training; for online training, the average
    /// batch fit error of the last step.
    pub final_objective: f64,
    pub log: TrainLog,
}

#[derive(Serialize)]
struct IterationLog {
    iteration: usize,
    loss: f64,
}

/// Writes the training log as JSON lines: `{"iteration", "loss"}` per batch
/// iteration, or one [`StepLog`] per online step.
pub fn write_train_log(log: &TrainLog, mut out: impl Write) -> Result<()> {
    match log {
        TrainLog::Batch(trace) => {
            for (iteration, &loss) in trace.iter().enumerate() {
                serde_json::to_writer(&mut out, &IterationLog { iteration, loss })
                    .map_err(std::io::Error::from)?;
                out.write_all(b"\n")?;
            }
            Ok(())
        }
        TrainLog::Online(steps) => write_log_jsonl(steps, out),
    }
}

/// Learns a `k`-atom dictionary from the columns of `mags`.
pub fn train_dictionary(
    mags: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
    cfg: &DenoiseConfig,
) -> Result<TrainOutcome> {
    if mags.is_empty() {
        return Err(Error::EmptyInput);
    }
    match cfg.trainer {
        Trainer::BatchNmf => {
            let fit = fit_nmf(
                mags,
                &NmfConfig {
                    k,
                    alpha: cfg.train_alpha,
                    max_iters: cfg.nmf_max_iters,
                    rel_tol: cfg.nmf_rel_tol,
                    seed,
                    epsilon: DEFAULT_EPSILON,
                },
            )?;
            Ok(TrainOutcome {
                final_objective: fit.final_loss(),
                dictionary: fit.dictionary,
                log: TrainLog::Batch(fit.trace),
            })
        }
        Trainer::OnlineNmf => {
            let fit = fit_onmf(
                &mags,
                &OnmfConfig {
                    k,
                    alpha: cfg.train_alpha,
                    sampler: SamplerConfig {
                        seed,
                        ..cfg.sampler
                    },
                    coding: cfg.coding,
                },
            )?;
            Ok(TrainOutcome {
                final_objective: fit.log.last().map_or(0.0, |l| l.batch_loss),
                dictionary: fit.dictionary,
                log: TrainLog::Online(fit.log),
            })
        }
    }
}

/// Trains the signal and noise dictionaries concurrently.
pub fn train_dictionaries(
    clean_prior: &Spectrogram,
    noise_prior: &Spectrogram,
    cfg: &DenoiseConfig,
) -> Result<(TrainOutcome, TrainOutcome)> {
    cfg.validate()?;
    if clean_prior.bins() != noise_prior.bins() {
        return Err(Error::DimensionMismatch(format!(
            "clean prior has {} bins, noise prior {}",
            clean_prior.bins(),
            noise_prior.bins()
        )));
    }
    let (signal, noise) = rayon::join(
        || train_dictionary(clean_prior.magnitudes.view(), cfg.k_signal, cfg.seed, cfg),
        || {
            train_dictionary(
                noise_prior.magnitudes.view(),
                cfg.k_noise,
                cfg.noise_seed(),
                cfg,
            )
        },
    );
    Ok((signal?, noise?))
}

/// Unmasked signal and noise estimates of a magnitude spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    pub s_est: Array2<f64>,
    pub n_est: Array2<f64>,
    pub h_signal: CodeMatrix,
    pub h_noise: CodeMatrix,
}

/// Codes `x` against `(W_S, W_N)` and splits the codes at `W_S.k()`.
pub fn separate(
    x: ArrayView2<'_, f64>,
    signal: &Dictionary,
    noise: &Dictionary,
    code_alpha: f64,
    coding: &CodingOptions,
) -> Result<Separation> {
    let w = signal.concat(noise)?;
    let h = sparse_code_with(x, w.atoms().view(), code_alpha, coding)?.into_codes();
    let ks = signal.k();
    let h_signal = h.slice(s![..ks, ..]).to_owned();
    let h_noise = h.slice(s![ks.., ..]).to_owned();
    Ok(Separation {
        s_est: signal.atoms().dot(&h_signal),
        n_est: noise.atoms().dot(&h_noise),
        h_signal: CodeMatrix::new_unchecked(h_signal),
        h_noise: CodeMatrix::new_unchecked(h_noise),
    })
}

/// Ratio mask `S·X/(S+N)` and its complement `X − S̃`.
///
/// Cells where `S + N < epsilon` are split evenly, so the two parts always
/// add back to `X`.
pub fn apply_mask(
    x: ArrayView2<'_, f64>,
    s_est: ArrayView2<'_, f64>,
    n_est: ArrayView2<'_, f64>,
    epsilon: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if s_est.dim() != x.dim() || n_est.dim() != x.dim() {
        return Err(Error::DimensionMismatch(format!(
            "X {:?}, S {:?}, N {:?}",
            x.dim(),
            s_est.dim(),
            n_est.dim()
        )));
    }
    let mut s_masked = Array2::zeros(x.dim());
    let mut n_masked = Array2::zeros(x.dim());
    Zip::from(&mut s_masked)
        .and(&mut n_masked)
        .and(x)
        .and(s_est)
        .and(n_est)
        .for_each(|sm, nm, &xv, &sv, &nv| {
            let total = sv + nv;
            *sm = if total < epsilon {
                0.5 * xv
            } else {
                (sv / total).clamp(0.0, 1.0) * xv
            };
            *nm = xv - *sm;
        });
    if s_masked
        .iter()
        .chain(n_masked.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("mask".into()));
    }
    Ok((s_masked, n_masked))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationResult {
    pub mixture: Spectrogram,
    pub s_est: Array2<f64>,
    pub n_est: Array2<f64>,
    pub s_masked: Array2<f64>,
    pub n_masked: Array2<f64>,
    pub h_signal: CodeMatrix,
    pub h_noise: CodeMatrix,
    pub denoised: AudioBuffer,
}

impl SeparationResult {
    /// The noise part rendered with the mixture phases, trimmed to the
    /// denoised length.
    pub fn noise_render(&self) -> Result<AudioBuffer> {
        let mut buf = rebuild_with_phases(&self.n_masked, &self.mixture)?;
        buf.samples.truncate(self.denoised.len());
        Ok(buf)
    }
}

/// Denoises `x` with fixed dictionaries.
pub fn denoise(
    x: &AudioBuffer,
    signal: &Dictionary,
    noise: &Dictionary,
    cfg: &DenoiseConfig,
) -> Result<SeparationResult> {
    cfg.validate()?;
    let mixture = stft(x, &cfg.stft)?;
    if signal.dim() != mixture.bins() {
        return Err(Error::DimensionMismatch(format!(
            "dictionaries have {} rows, spectrogram has {} bins",
            signal.dim(),
            mixture.bins()
        )));
    }
    let sep = separate(
        mixture.magnitudes.view(),
        signal,
        noise,
        cfg.code_alpha,
        &cfg.coding,
    )?;
    let (s_masked, n_masked) = apply_mask(
        mixture.magnitudes.view(),
        sep.s_est.view(),
        sep.n_est.view(),
        cfg.mask_epsilon,
    )?;
    let mut denoised = rebuild_with_phases(&s_masked, &mixture)?;
    denoised.samples.truncate(x.len());
    Ok(SeparationResult {
        mixture,
        s_est: sep.s_est,
        n_est: sep.n_est,
        s_masked,
        n_masked,
        h_signal: sep.h_signal,
        h_noise: sep.h_noise,
        denoised,
    })
}
