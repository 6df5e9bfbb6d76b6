//! `key=value` config files: each line becomes a `--key=value` flag placed
//! before the command-line flags, so the command line wins.

use std::ffi::OsString;
use std::path::Path;

use crate::{CliError, CliResult};

pub const COMMANDS: [&str; 5] = ["gen-data", "pretrain-teacher", "distill", "eval", "ablate"];

/// Converts config text into flags. `true` enables a switch, `false` drops it;
/// blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> CliResult<Vec<String>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value, got {line:?}", i + 1)))?;
        let key = key.trim().trim_start_matches("--");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            return Err(CliError::Usage(format!("config line {}: invalid key {key:?}", i + 1)));
        }
        match value {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            _ => out.push(format!("--{key}={value}")),
        }
    }
    Ok(out)
}

fn config_path(argv: &[OsString]) -> CliResult<Option<OsString>> {
    let mut found = None;
    let mut iter = argv.iter().skip(1);
    while let Some(a) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            let v = iter.next().ok_or_else(|| CliError::Usage("--config needs a file path".into()))?;
            found = Some(v.clone());
        } else if let Some(v) = s.strip_prefix("--config=") {
            found = Some(OsString::from(v));
        }
    }
    Ok(found)
}

/// Splices the flags of the `--config` file (if any) directly after the
/// subcommand name.
pub fn merge_config(argv: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let Some(path) = config_path(&argv)? else {
        return Ok(argv);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Missing(format!("cannot read config file {}: {e}", path.display())))?;
    let extra = parse_config(&text)?;
    let Some(pos) = argv.iter().position(|a| COMMANDS.iter().any(|c| a == c)) else {
        return Ok(argv);
    };
    let mut out = argv[..=pos].to_vec();
    out.extend(extra.into_iter().map(OsString::from));
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}
