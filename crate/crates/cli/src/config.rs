//! Argument parsing with `key = value` config files merged under the flags.
//!
//! Config entries are spliced in as `--key=value` right after the subcommand
//! name, ahead of the user's own flags; every argument overrides itself, so
//! anything given on the command line wins.

use std::ffi::OsString;
use std::fmt;
use std::path::Path;

use clap::{CommandFactory, FromArgMatches};

use crate::args::Cli;

#[derive(Debug)]
pub enum ParseError {
    Clap(clap::Error),
    Config(String),
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseError::Clap(e) => write!(f, "{e}"),
            ParseError::Config(m) => write!(f, "{m}"),
        }
    }
}

const GLOBAL_VALUED: [&str; 3] = ["--out-dir", "--threads", "--config"];

/// Reads `key = value` lines; blank lines and `#` comments are skipped.
pub fn read_config(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format!("config line {}: expected `key = value`, got `{line}`", no + 1));
        };
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        let value = v.trim().trim_matches('"').to_string();
        if key.is_empty() {
            return Err(format!("config line {}: empty key", no + 1));
        }
        if key == "config" {
            return Err(format!("config line {}: config files cannot include other files", no + 1));
        }
        out.push((key, value));
    }
    Ok(out)
}

fn config_path(raw: &[OsString]) -> Option<OsString> {
    let mut it = raw.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

fn subcommand_position(raw: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < raw.len() {
        let s = raw[i].to_string_lossy();
        if GLOBAL_VALUED.contains(&s.as_ref()) {
            i += 2;
        } else if s.starts_with('-') {
            i += 1;
        } else {
            return Some(i);
        }
    }
    None
}

pub fn parse(mut raw: Vec<OsString>) -> Result<Cli, ParseError> {
    if let Some(path) = config_path(&raw) {
        let path = Path::new(&path);
        let text = std::fs::read_to_string(path)
            .map_err(|e| ParseError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let entries = read_config(&text).map_err(ParseError::Config)?;
        let extra: Vec<OsString> = entries
            .into_iter()
            .filter_map(|(k, v)| match (k.as_str(), v.as_str()) {
                ("dry-run", "false") => None,
                ("dry-run", _) => Some("--dry-run".into()),
                _ => Some(format!("--{k}={v}").into()),
            })
            .collect();
        let at = subcommand_position(&raw).map_or(raw.len(), |i| i + 1);
        raw.splice(at..at, extra);
    }
    let cmd = Cli::command().mut_subcommands(|s| s.args_override_self(true));
    let matches = cmd.try_get_matches_from(raw).map_err(ParseError::Clap)?;
    Cli::from_arg_matches(&matches).map_err(ParseError::Clap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn config_lines_and_comments() {
        let e = read_config("# header\n jperp = 4.0  # strong\n\nmax_index=3\n").unwrap();
        assert_eq!(e, vec![("jperp".into(), "4.0".into()), ("max-index".into(), "3".into())]);
        assert!(read_config("jperp 4").is_err());
    }

    #[test]
    fn subcommand_found_after_global_values() {
        let raw = os(&["twistlab", "--out-dir", "x", "--dry-run", "bands", "--m", "2"]);
        assert_eq!(subcommand_position(&raw), Some(4));
    }
}
