//! The subcommands, callable without going through argument parsing.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use onmf_core::audio_io::{chord_fixture, quantize_16bit, read_wav, write_wav, ChordFixture};
use onmf_core::formats::{read_dictionary, write_dictionary, write_matrix_csv, write_pgm};
use onmf_core::metrics::{evaluate, write_keyed_metrics_csv, write_metrics_csv, EvalReport};
use onmf_core::onmf::SamplerConfig;
use onmf_core::pipeline::{self, train_dictionaries, write_train_log, DenoiseConfig};
use onmf_core::stft::stft;

use crate::{CliError, DenoiseArgs, EvalArgs, SpectrogramArgs, SweepArgs, SynthArgs, TrainArgs};

pub const SIGNAL_DICT_FILE: &str = "signal.onmfdict";
pub const NOISE_DICT_FILE: &str = "noise.onmfdict";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError {
        code: 1,
        message: format!("cannot create {}: {e}", dir.display()),
    })
}

fn create_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError {
            code: 1,
            message: format!("cannot write {}: {e}", path.display()),
        })
}

/// Runs `body` against the file at `path`, or stdout when `path` is `None`.
fn with_output(
    path: Option<&Path>,
    body: impl FnOnce(&mut dyn Write) -> onmf_core::Result<()>,
) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let mut w = create_file(p)?;
            body(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let fx = chord_fixture(&ChordFixture {
        sample_rate_hz: a.sample_rate,
        prior_s: a.prior_seconds,
        test_s: a.test_seconds,
        snr_db: a.snr_db,
        clean_rms: a.clean_rms,
        seed: a.seed,
        ..ChordFixture::default()
    })?;
    create_dir(&a.out_dir)?;
    for (name, buf) in [
        ("clean_prior.wav", &fx.clean_prior),
        ("noise_prior.wav", &fx.noise_prior),
        ("clean.wav", &fx.clean),
        ("noise.wav", &fx.noise),
        ("mixture.wav", &fx.mixture),
    ] {
        if buf.peak() > 1.0 {
            eprintln!(
                "warning: {name} peaks at {:.3} and will be clipped",
                buf.peak()
            );
        }
        write_wav(buf, a.out_dir.join(name))?;
    }
    println!(
        "wrote fixture to {} ({} test samples at {} Hz)",
        a.out_dir.display(),
        fx.mixture.len(),
        a.sample_rate
    );
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let params = a.stft.params()?;
    let signal = read_wav(&a.signal)?;
    let noise = read_wav(&a.noise)?;
    let cfg = DenoiseConfig {
        trainer: a.method.into(),
        k_signal: a.k_signal,
        k_noise: a.k_noise,
        train_alpha: a.train_alpha,
        stft: params,
        sampler: SamplerConfig {
            mode: a.sampling.into(),
            batch_cols: a.batch,
            steps: a.steps,
            seed: a.seed,
        },
        nmf_max_iters: a.max_iters,
        nmf_rel_tol: a.tol,
        seed: a.seed,
        ..DenoiseConfig::default()
    };
    let sp = stft(&signal, &params)?;
    let np = stft(&noise, &params)?;
    let (ws, wn) = train_dictionaries(&sp, &np, &cfg)?;

    create_dir(&a.out_dir)?;
    for (name, file, outcome) in [
        ("signal", SIGNAL_DICT_FILE, &ws),
        ("noise", NOISE_DICT_FILE, &wn),
    ] {
        let path = a.out_dir.join(file);
        write_dictionary(&outcome.dictionary, &path)?;
        println!(
            "{name} dictionary: {} atoms, final loss {:.6e} -> {}",
            outcome.dictionary.k(),
            outcome.final_objective,
            path.display()
        );
    }
    if let Some(dir) = &a.log_dir {
        create_dir(dir)?;
        for (file, outcome) in [("signal.jsonl", &ws), ("noise.jsonl", &wn)] {
            with_output(Some(&dir.join(file)), |w| write_train_log(&outcome.log, w))?;
        }
    }
    Ok(())
}

fn check_label(label: &str) -> Result<(), CliError> {
    let ok = !label.is_empty()
        && label
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.');
    if ok {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "label {label:?} may only use letters, digits, '-', '_' and '.'"
        )))
    }
}

pub fn denoise(a: &DenoiseArgs) -> Result<(), CliError> {
    check_label(&a.label)?;
    let params = a.stft.params()?;
    let ws = read_dictionary(&a.signal_dict)?;
    let wn = read_dictionary(&a.noise_dict)?;
    let input = read_wav(&a.input)?;
    let clean = a.clean.as_ref().map(read_wav).transpose()?;
    let cfg = DenoiseConfig {
        code_alpha: a.alpha,
        stft: params,
        ..DenoiseConfig::default()
    };
    let result = pipeline::denoise(&input, &ws, &wn, &cfg)?;
    write_wav(&result.denoised, &a.output)?;
    if let Some(path) = &a.noise_output {
        write_wav(&result.noise_render()?, path)?;
    }
    if let Some(dir) = &a.emit_spectrograms {
        create_dir(dir)?;
        write_pgm(&result.mixture.magnitudes, dir.join("noisy.pgm"))?;
        let out = stft(&result.denoised, &params)?;
        write_pgm(
            &out.magnitudes,
            dir.join(format!("denoised_{}.pgm", a.label)),
        )?;
        if let Some(clean) = &clean {
            write_pgm(&stft(clean, &params)?.magnitudes, dir.join("clean.pgm"))?;
        }
    }
    println!(
        "denoised {} samples with alpha {} -> {}",
        result.denoised.len(),
        a.alpha,
        a.output.display()
    );
    Ok(())
}

fn parse_estimate(spec: &str) -> Result<(String, PathBuf), CliError> {
    match spec.split_once('=') {
        Some((label, path)) if !label.is_empty() && !path.is_empty() && !label.contains(',') => {
            Ok((label.to_string(), PathBuf::from(path)))
        }
        _ => Err(CliError::usage(format!(
            "--estimate expects LABEL=PATH, got {spec:?}"
        ))),
    }
}

fn labelled(label: &str, e: onmf_core::Error) -> CliError {
    let mut err = CliError::from(e);
    err.message = format!("{label}: {}", err.message);
    err
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let estimates = a
        .estimate
        .iter()
        .map(|s| parse_estimate(s))
        .collect::<Result<Vec<_>, _>>()?;
    let clean = read_wav(&a.clean)?;
    let noise = read_wav(&a.noise)?;
    let mixture = read_wav(&a.mixture)?;

    let mut rows: Vec<(String, EvalReport)> = Vec::with_capacity(estimates.len() + 1);
    for (label, path) in &estimates {
        let est = read_wav(path)?;
        rows.push((
            label.clone(),
            evaluate(&est, &clean, &noise).map_err(|e| labelled(label, e))?,
        ));
    }
    rows.push((
        "ORIGINAL".into(),
        evaluate(&mixture, &clean, &noise).map_err(|e| labelled("ORIGINAL", e))?,
    ));
    with_output(a.output.as_deref(), |w| {
        write_metrics_csv(rows.iter().map(|(l, r)| (l.as_str(), r)), w)
    })
}

pub fn sweep(a: &SweepArgs) -> Result<(), CliError> {
    if a.alphas.is_empty() {
        return Err(CliError::usage(
            "--alphas must list at least one value".into(),
        ));
    }
    let params = a.stft.params()?;
    let ws = read_dictionary(&a.signal_dict)?;
    let wn = read_dictionary(&a.noise_dict)?;
    let input = read_wav(&a.input)?;
    let clean = read_wav(&a.clean)?;
    let noise = read_wav(&a.noise)?;

    let reports = a
        .alphas
        .par_iter()
        .enumerate()
        .map(|(i, &alpha)| {
            let cfg = DenoiseConfig {
                code_alpha: alpha,
                stft: params,
                seed: a.seed.wrapping_add(i as u64),
                ..DenoiseConfig::default()
            };
            let out = pipeline::denoise(&input, &ws, &wn, &cfg)?;
            // score what `denoise` would have written to disk
            evaluate(&quantize_16bit(&out.denoised), &clean, &noise)
        })
        .collect::<onmf_core::Result<Vec<_>>>()?;

    let labels: Vec<String> = a.alphas.iter().map(|x| x.to_string()).collect();
    with_output(a.output.as_deref(), |w| {
        write_keyed_metrics_csv("alpha", labels.iter().map(String::as_str).zip(&reports), w)
    })
}

pub fn spectrogram(a: &SpectrogramArgs) -> Result<(), CliError> {
    let params = a.stft.params()?;
    let buf = read_wav(&a.input)?;
    let spec = stft(&buf, &params)?;
    write_pgm(&spec.magnitudes, &a.output)?;
    if let Some(csv) = &a.csv {
        with_output(Some(csv), |w| write_matrix_csv(&spec.magnitudes, w))?;
    }
    println!(
        "{} bins x {} frames -> {}",
        spec.bins(),
        spec.frames(),
        a.output.display()
    );
    Ok(())
}
