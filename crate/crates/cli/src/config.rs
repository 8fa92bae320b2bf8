//! `key = value` config files merged under command-line flags.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use crate::CliError;

/// Parses config text into `(key, value)` pairs. Blank lines and lines
/// starting with `#` are skipped; keys may be written with or without `--`.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut pairs = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::usage(format!(
                "config line {}: expected key = value, got {line:?}",
                no + 1
            )));
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(CliError::usage(format!(
                "config line {}: empty key",
                no + 1
            )));
        }
        pairs.push((key, value.trim().to_string()));
    }
    Ok(pairs)
}

fn config_path(args: &[OsString]) -> Result<Option<PathBuf>, CliError> {
    let mut iter = args.iter();
    while let Some(arg) = iter.next() {
        let Some(s) = arg.to_str() else { continue };
        if s == "--" {
            break;
        }
        if s == "--config" {
            return match iter.next() {
                Some(v) => Ok(Some(PathBuf::from(v))),
                None => Err(CliError::usage("--config needs a file path".into())),
            };
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Ok(Some(PathBuf::from(v)));
        }
    }
    Ok(None)
}

fn given_on_command_line(args: &[OsString], key: &str) -> bool {
    let flag = format!("--{key}");
    let with_value = format!("--{key}=");
    args.iter()
        .filter_map(|a| a.to_str())
        .any(|a| a == flag || a.starts_with(&with_value))
}

/// Appends the settings from `--config FILE` that the command line does
/// not already set. `true` turns on a switch, `false` leaves it off.
pub fn expand_args(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&args)? else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::usage(format!("cannot read config file {}: {e}", path.display())))?;
    let mut extra = Vec::new();
    for (key, value) in parse_config(&text)? {
        if key == "config" || given_on_command_line(&args, &key) {
            continue;
        }
        match value.as_str() {
            "false" => {}
            "true" | "" => extra.push(OsString::from(format!("--{key}"))),
            _ => {
                extra.push(OsString::from(format!("--{key}")));
                extra.push(OsString::from(value));
            }
        }
    }
    let mut out = args;
    out.extend(extra);
    Ok(out)
}
