//! Flat `key = value` config files layered under command-line flags.
//!
//! Grammar: one `key = value` pair per line; `#` starts a comment line;
//! blank lines are ignored. Keys are the long flag names of the chosen
//! subcommand (without `--`). Boolean flags take `true` or `false`. The value
//! is the rest of the line after the first `=`, trimmed.
//!
//! File entries are spliced into the argument list right after the
//! subcommand name, so any flag given on the command line overrides them and
//! clap defaults fill the rest.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;

use clap::{ArgAction, ArgMatches, Command};

pub const CONFIG_FLAG: &str = "config";
const NOT_ECHOED: [&str; 3] = [CONFIG_FLAG, "help", "version"];

pub fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`, got {raw:?}", n + 1))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(format!("line {}: empty key", n + 1));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Value of `--config` in raw arguments, if any.
fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

/// Rewrites `args` so that entries from the `--config` file (when given)
/// precede the user's own subcommand flags.
pub fn splice(cmd: &Command, args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text =
        fs::read_to_string(&path).map_err(|e| format!("cannot read config file {}: {e}", path.to_string_lossy()))?;
    let entries = parse(&text).map_err(|e| format!("config file {}: {e}", path.to_string_lossy()))?;

    let Some(sub_pos) = args
        .iter()
        .position(|a| cmd.find_subcommand(a.to_string_lossy().as_ref()).is_some())
    else {
        // clap reports the missing subcommand
        return Ok(args);
    };
    let sub_name = args[sub_pos].to_string_lossy().into_owned();
    let sub = cmd.find_subcommand(&sub_name).expect("found above");

    let mut injected = Vec::new();
    for (key, value) in entries {
        let arg = sub
            .get_arguments()
            .chain(cmd.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()) && !NOT_ECHOED.contains(&key.as_str()))
            .ok_or_else(|| {
                format!(
                    "config file {}: unknown key {key:?} for {sub_name}",
                    path.to_string_lossy()
                )
            })?;
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" => injected.push(OsString::from(format!("--{key}"))),
                "false" => {}
                other => return Err(format!("config key {key:?} expects true or false, got {other:?}")),
            }
        } else {
            injected.push(OsString::from(format!("--{key}")));
            injected.push(OsString::from(value));
        }
    }
    let mut out = args[..=sub_pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[sub_pos + 1..]);
    Ok(out)
}

fn echo_args(cmd: &Command, matches: &ArgMatches, out: &mut String, seen: &mut Vec<String>) {
    for arg in cmd.get_arguments() {
        let Some(long) = arg.get_long() else { continue };
        if NOT_ECHOED.contains(&long) || seen.iter().any(|s| s == long) {
            continue;
        }
        let Ok(Some(raw)) = matches.try_get_raw(arg.get_id().as_str()) else {
            continue;
        };
        let values: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
        seen.push(long.to_string());
        let _ = writeln!(out, "{long} = {}", values.join(","));
    }
}

/// Renders every resolved flag of the invoked subcommand (and globals) as a
/// config file that reproduces the run.
pub fn echo(cmd: &Command, matches: &ArgMatches) -> String {
    let mut out = String::new();
    let mut seen = Vec::new();
    if let Some((name, sub_matches)) = matches.subcommand() {
        let _ = writeln!(out, "# effective config for `ieqa {name}`");
        if let Some(sub) = cmd.find_subcommand(name) {
            echo_args(sub, sub_matches, &mut out, &mut seen);
        }
        echo_args(cmd, sub_matches, &mut out, &mut seen);
    }
    out
}
