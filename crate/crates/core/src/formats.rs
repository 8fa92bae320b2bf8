//! On-disk formats: binary dictionaries, CSV matrices and PGM spectrogram
//! images.
//!
//! Dictionary file layout (all integers and floats little-endian):
//!
//! ```text
//! "ONMFDICT"  8 bytes magic
//! version     u32 (currently 1)
//! d           u32 rows
//! k           u32 atoms
//! data        d·k f64, row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::nmf::Dictionary;

pub const DICT_MAGIC: &[u8; 8] = b"ONMFDICT";
pub const DICT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 3 * 4;

/// Floor of the PGM intensity scale, in dB below the spectrogram maximum.
pub const PGM_FLOOR_DB: f64 = -80.0;

pub fn dictionary_to_bytes(dict: &Dictionary) -> Vec<u8> {
    let atoms = dict.atoms();
    let (d, k) = atoms.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * d * k);
    out.extend_from_slice(DICT_MAGIC);
    out.extend_from_slice(&DICT_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    for row in atoms.rows() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn dictionary_from_bytes(bytes: &[u8]) -> Result<Dictionary> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != DICT_MAGIC {
        return Err(Error::BadDictionary("missing ONMFDICT header".into()));
    }
    let version = read_u32(bytes, 8);
    if version != DICT_VERSION {
        return Err(Error::BadDictionary(format!(
            "unsupported version {version}"
        )));
    }
    let d = read_u32(bytes, 12) as usize;
    let k = read_u32(bytes, 16) as usize;
    let expected = HEADER_LEN + 8 * d * k;
    if bytes.len() != expected {
        return Err(Error::BadDictionary(format!(
            "{d}×{k} dictionary needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let atoms = Array2::from_shape_vec((d, k), values).expect("length checked above");
    Dictionary::from_atoms(atoms).map_err(|e| Error::BadDictionary(e.to_string()))
}

pub fn write_dictionary(dict: &Dictionary, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, dictionary_to_bytes(dict))?;
    Ok(())
}

pub fn read_dictionary(path: impl AsRef<Path>) -> Result<Dictionary> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    dictionary_from_bytes(&fs::read(path)?)
}

/// One CSV line per matrix row, values in shortest round-trip form.
pub fn write_matrix_csv(m: &Array2<f64>, mut out: impl Write) -> Result<()> {
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

/// Binary PGM (P5) of a magnitude matrix: one pixel row per frequency bin
/// with the highest bin at the top, one pixel column per frame. Intensities
/// are `20·log10(m / max)` mapped linearly from [`PGM_FLOOR_DB`] (black) to
/// 0 dB (white).
pub fn magnitudes_to_pgm(mags: &Array2<f64>) -> Vec<u8> {
    let (rows, cols) = mags.dim();
    let max = mags.iter().cloned().fold(0.0, f64::max);
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.reserve(rows * cols);
    for r in (0..rows).rev() {
        for c in 0..cols {
            let m = mags[[r, c]];
            let px = if max > 0.0 && m > 0.0 {
                let db = (20.0 * (m / max).log10()).max(PGM_FLOOR_DB);
                (255.0 * (db - PGM_FLOOR_DB) / -PGM_FLOOR_DB).round() as u8
            } else {
                0
            };
            out.push(px);
        }
    }
    out
}

pub fn write_pgm(mags: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, magnitudes_to_pgm(mags))?;
    Ok(())
}
