//! `key = value` run files merged under the command line.
//!
//! Each key is the long name of a flag of the chosen subcommand (`-` or `_`
//! both accepted). File values are spliced into argv right after the
//! subcommand name, ahead of the user's own flags; since every flag overrides
//! itself, flags given on the command line win.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::Path;

use clap::Command;

/// Parses `key = value` lines. Blank lines and `#` comments are ignored;
/// duplicate keys and lines without `=` are errors.
pub fn parse_run_file(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format!("line {}: expected `key = value`, got {raw:?}", n + 1));
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(format!("line {}: empty key", n + 1));
        }
        if out.iter().any(|(seen, _)| *seen == key) {
            return Err(format!("line {}: duplicate key {key:?}", n + 1));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Splices the run file named by `--config` into `args`.
pub fn expand_args(cmd: &Command, args: Vec<OsString>, sub: &str, path: &Path) -> Result<Vec<OsString>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let entries = parse_run_file(&text).map_err(|e| format!("{}: {e}", path.display()))?;

    let mut built = cmd.clone();
    built.build();
    let subcmd = built.find_subcommand(sub).ok_or_else(|| format!("unknown command {sub:?}"))?;
    let known: Vec<_> = subcmd
        .get_arguments()
        .filter(|a| matches!(a.get_long(), Some(l) if l != "help" && l != "version"))
        .collect();
    let names: BTreeSet<&str> = known.iter().filter_map(|a| a.get_long()).filter(|&l| l != "config").collect();

    let mut spliced = Vec::new();
    for (key, value) in entries {
        if key == "command" {
            if value != sub {
                return Err(format!("run file is for command {value:?}, not {sub:?}"));
            }
            continue;
        }
        if key == "config" {
            return Err("run files cannot include other run files".into());
        }
        let Some(arg) = known.iter().find(|a| a.get_long() == Some(key.as_str())) else {
            return Err(format!(
                "unknown key {key:?} for {sub}; known keys: {}",
                names.iter().copied().collect::<Vec<_>>().join(", ")
            ));
        };
        if arg.get_action().takes_values() {
            spliced.push(OsString::from(format!("--{key}")));
            spliced.push(OsString::from(value));
        } else {
            match value.as_str() {
                "true" => spliced.push(OsString::from(format!("--{key}"))),
                "false" => {}
                other => return Err(format!("key {key:?} expects true or false, got {other:?}")),
            }
        }
    }
    let at = args
        .iter()
        .position(|a| a.to_str() == Some(sub))
        .ok_or_else(|| format!("command {sub:?} not found in arguments"))?;
    let mut out = args[..=at].to_vec();
    out.extend(spliced);
    out.extend_from_slice(&args[at + 1..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_spacing() {
        let e = parse_run_file("# run\nber = 1e-3  # rate\n\nseed_value=7\n").unwrap();
        assert_eq!(e, vec![("ber".into(), "1e-3".into()), ("seed-value".into(), "7".into())]);
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_run_file("ber 1e-3").is_err());
        assert!(parse_run_file("a = 1\na = 2").is_err());
        assert!(parse_run_file(" = 2").is_err());
    }
}
