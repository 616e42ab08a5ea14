//! `key=value` config files. Keys are long flag names; `section.key` applies
//! only to that subcommand. Values from the file are inserted ahead of the
//! command-line flags, so explicit flags win.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, Command};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub section: Option<String>,
    pub key: String,
    pub value: String,
}

pub fn parse(text: &str) -> Result<Vec<Entry>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Schema(format!("config line {}: expected key=value", i + 1)));
        };
        let k = k.trim();
        let (section, key) = match k.split_once('.') {
            Some((s, k)) => (Some(s.trim().to_string()), k.trim()),
            None => (None, k),
        };
        if key.is_empty() {
            return Err(CliError::Schema(format!("config line {}: empty key", i + 1)));
        }
        out.push(Entry { line: i + 1, section, key: key.replace('_', "-"), value: v.trim().to_string() });
    }
    Ok(out)
}

fn find<'a>(cmd: &'a Command, key: &str) -> Option<&'a Arg> {
    cmd.get_arguments().find(|a| a.get_long() == Some(key))
}

fn flag_args(arg: &Arg, value: &str, line: usize) -> Result<Vec<OsString>, CliError> {
    let long = format!("--{}", arg.get_long().unwrap_or_default());
    if arg.get_action().takes_values() {
        return Ok(vec![long.into(), value.into()]);
    }
    match value {
        "true" | "1" | "yes" => Ok(vec![long.into()]),
        "false" | "0" | "no" => Ok(vec![]),
        _ => Err(CliError::Schema(format!("config line {line}: `{value}` is not a boolean"))),
    }
}

/// Pulls `--config PATH` out of `argv` and splices the file's entries in.
pub fn expand(cmd: &Command, argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut args: Vec<OsString> = Vec::with_capacity(argv.len());
    let mut path: Option<PathBuf> = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = it.next().map(PathBuf::from);
            if path.is_none() {
                return Err(CliError::Usage("--config needs a path".into()));
            }
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        } else {
            args.push(a);
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let entries = parse(&text)?;

    let sub_pos = args.iter().position(|a| cmd.find_subcommand(a.to_string_lossy().as_ref()).is_some());
    let sub = sub_pos.and_then(|p| cmd.find_subcommand(args[p].to_string_lossy().as_ref()));
    let mut global = Vec::new();
    let mut local = Vec::new();
    for e in &entries {
        if let Some(sec) = &e.section {
            if cmd.find_subcommand(sec).is_none() {
                return Err(CliError::Schema(format!("config line {}: unknown section `{sec}`", e.line)));
            }
            if sub.is_none_or(|s| s.get_name() != sec) {
                continue;
            }
        }
        if let Some(a) = find(cmd, &e.key) {
            global.extend(flag_args(a, &e.value, e.line)?);
        } else if let Some(a) = sub.and_then(|s| find(s, &e.key)) {
            local.extend(flag_args(a, &e.value, e.line)?);
        } else if e.section.is_some() || !cmd.get_subcommands().any(|s| find(s, &e.key).is_some()) {
            return Err(CliError::Schema(format!("config line {}: unknown key `{}`", e.line, e.key)));
        }
    }
    let bin = if args.is_empty() { OsString::from("bodyaffect-cli") } else { args.remove(0) };
    let mut out = vec![bin];
    out.extend(global);
    match sub_pos {
        Some(p) => {
            let p = p - 1;
            out.extend(args[..=p].iter().cloned());
            out.extend(local);
            out.extend(args[p + 1..].iter().cloned());
        }
        None => out.extend(args),
    }
    Ok(out)
}
