//! `key=value` config files, merged into the argument list ahead of the
//! user's flags so that flags win.

use std::ffi::OsString;
use std::path::Path;

use crate::args::SUBCOMMANDS;
use crate::CliError;

/// Parses a config file into `(key, value)` pairs in file order.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "config line {}: expected key=value, got '{}'",
                i + 1,
                raw.trim()
            )));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || k.starts_with('-') {
            return Err(CliError::Usage(format!("config line {}: bad key '{k}'", i + 1)));
        }
        if k == "config" {
            return Err(CliError::Usage(format!(
                "config line {}: config files cannot include other config files",
                i + 1
            )));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Value of `--config` in raw arguments, if any.
fn find_config(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(rest) = s.strip_prefix("--config=") {
            return Some(rest.into());
        }
    }
    None
}

/// Inserts the config file's flags right after the subcommand name.
pub fn merge(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = find_config(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", Path::new(&path).display())))?;
    let pairs = parse(&text)?;
    let Some(pos) = args
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
    else {
        return Ok(args);
    };
    let mut out: Vec<OsString> = args[..=pos].to_vec();
    for (k, v) in pairs {
        out.push(format!("--{k}={v}").into());
    }
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}
