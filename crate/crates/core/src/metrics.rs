//! SDR / SIR / SAR from an orthogonal decomposition of the estimate.
//!
//! The estimate is split into a target part (projection onto the clean
//! reference), an interference part (projection of the remainder onto the
//! noise reference after orthogonalizing it against the clean one) and an
//! artifact part (everything else). No distortion filters are fitted, so
//! the references are assumed time-aligned with the estimate.

use std::io::Write;

use crate::audio_io::AudioBuffer;
use crate::error::{Error, Result};

/// Ratios beyond this many dB are written as this value in CSV output.
pub const DB_CAP: f64 = 300.0;

/// Energy ratios with a denominator this far below the numerator count as
/// infinite; they are far past [`DB_CAP`] anyway.
const INFINITE_RATIO: f64 = 1e30;

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub target: Vec<f64>,
    pub interference: Vec<f64>,
    pub artifact: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub sdr_db: f64,
    pub sir_db: f64,
    pub sar_db: f64,
    pub target_energy: f64,
    pub interference_energy: f64,
    pub artifact_energy: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_pair(what: &str, buf: &AudioBuffer, reference: &AudioBuffer) -> Result<()> {
    if buf.len() != reference.len() {
        return Err(Error::LengthMismatch {
            what: what.to_string(),
            got: buf.len(),
            expected: reference.len(),
        });
    }
    if buf.sample_rate_hz != reference.sample_rate_hz {
        return Err(Error::InvalidConfig(format!(
            "{what} is sampled at {} Hz, reference at {} Hz",
            buf.sample_rate_hz, reference.sample_rate_hz
        )));
    }
    Ok(())
}

pub fn decompose(
    estimate: &AudioBuffer,
    clean: &AudioBuffer,
    noise: &AudioBuffer,
) -> Result<Decomposition> {
    check_pair("estimate", estimate, clean)?;
    check_pair("noise reference", noise, clean)?;
    let s = &clean.samples;
    let e = &estimate.samples;
    let ss = dot(s, s);
    if ss == 0.0 {
        return Err(Error::ZeroReference);
    }

    let gain = dot(e, s) / ss;
    let target: Vec<f64> = s.iter().map(|v| gain * v).collect();
    let residual: Vec<f64> = e.iter().zip(&target).map(|(a, b)| a - b).collect();

    // noise direction with its clean component removed
    let ns = dot(&noise.samples, s) / ss;
    let noise_perp: Vec<f64> = noise
        .samples
        .iter()
        .zip(s)
        .map(|(n, c)| n - ns * c)
        .collect();
    let pp = dot(&noise_perp, &noise_perp);
    let interference: Vec<f64> = if pp > 0.0 {
        let g = dot(&residual, &noise_perp) / pp;
        noise_perp.iter().map(|v| g * v).collect()
    } else {
        vec![0.0; e.len()]
    };
    let artifact = residual
        .iter()
        .zip(&interference)
        .map(|(r, i)| r - i)
        .collect();

    Ok(Decomposition {
        target,
        interference,
        artifact,
    })
}

/// `10·log10(num / den)` with `+∞` for a vanishing denominator and `−∞`
/// for a vanishing numerator.
pub fn ratio_db(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        f64::NEG_INFINITY
    } else if den <= num / INFINITE_RATIO {
        f64::INFINITY
    } else {
        10.0 * (num / den).log10()
    }
}

pub fn evaluate(
    estimate: &AudioBuffer,
    clean: &AudioBuffer,
    noise: &AudioBuffer,
) -> Result<EvalReport> {
    let dec = decompose(estimate, clean, noise)?;
    let energy = |v: &[f64]| dot(v, v);
    let t = energy(&dec.target);
    let i = energy(&dec.interference);
    let a = energy(&dec.artifact);
    let distortion: Vec<f64> = dec
        .interference
        .iter()
        .zip(&dec.artifact)
        .map(|(x, y)| x + y)
        .collect();
    let target_interf: Vec<f64> = dec
        .target
        .iter()
        .zip(&dec.interference)
        .map(|(x, y)| x + y)
        .collect();
    Ok(EvalReport {
        sdr_db: ratio_db(t, energy(&distortion)),
        sir_db: ratio_db(t, i),
        sar_db: ratio_db(energy(&target_interf), a),
        target_energy: t,
        interference_energy: i,
        artifact_energy: a,
    })
}

/// Clamps to `±DB_CAP` for tabular output.
pub fn capped(db: f64) -> f64 {
    if db.is_nan() {
        db
    } else {
        db.clamp(-DB_CAP, DB_CAP)
    }
}

/// Writes `method,sdr_db,sir_db,sar_db` rows in the given order.
pub fn write_metrics_csv<'a>(
    rows: impl IntoIterator<Item = (&'a str, &'a EvalReport)>,
    out: impl Write,
) -> Result<()> {
    write_keyed_metrics_csv("method", rows, out)
}

/// Like [`write_metrics_csv`] with a different name for the first column.
pub fn write_keyed_metrics_csv<'a>(
    key: &str,
    rows: impl IntoIterator<Item = (&'a str, &'a EvalReport)>,
    mut out: impl Write,
) -> Result<()> {
    writeln!(out, "{key},sdr_db,sir_db,sar_db")?;
    for (name, r) in rows {
        writeln!(
            out,
            "{name},{:.4},{:.4},{:.4}",
            capped(r.sdr_db),
            capped(r.sir_db),
            capped(r.sar_db)
        )?;
    }
    Ok(())
}
