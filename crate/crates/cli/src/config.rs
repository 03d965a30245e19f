//! `key = value` config files merged ahead of command-line flags.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};

/// Parse a config file into `(key, value)` pairs. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_config(text: &str, origin: &Path) -> anyhow::Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected `key = value`", origin.display(), n + 1);
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key.starts_with('-') {
            bail!("{}:{}: invalid key", origin.display(), n + 1);
        }
        pairs.push((key, value.to_string()));
    }
    Ok(pairs)
}

/// Find `--config <path>` (or `--config=<path>`), remove it from `args` and
/// splice the file's settings in front of the remaining flags so that flags
/// given on the command line take precedence. `args[0]` is the program and
/// `args[1]` the subcommand.
pub fn expand_config(mut args: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let mut path = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy().into_owned();
        if a == "--config" {
            if i + 1 >= args.len() {
                bail!("--config needs a file path");
            }
            path = Some(args.remove(i + 1));
            args.remove(i);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(OsString::from(p));
            args.remove(i);
        } else {
            i += 1;
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let pairs = parse_config(&text, path)?;
    let at = args.len().min(2);
    let injected = pairs.into_iter().flat_map(|(k, v)| [OsString::from(format!("--{k}")), OsString::from(v)]);
    args.splice(at..at, injected);
    Ok(args)
}
