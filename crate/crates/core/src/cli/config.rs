// SPDX-License-Identifier: MIT OR Apache-2.0

//! Config files turned into command-line flags.
//!
//! A TOML file may hold top-level keys (applied to every command) and one
//! table per subcommand. Every key becomes `--key value`; arrays repeat the
//! flag and `true` booleans become a bare `--key`. A key is dropped when the
//! same flag already appears on the command line, so flags beat the file.

use std::ffi::OsString;
use std::path::Path;

use crate::error::{Error, Result};

/// Global options that take a value; their values are skipped when looking
/// for the subcommand token.
const VALUED_GLOBALS: [&str; 4] = ["--out", "--format", "--seed", "--config"];

pub(crate) fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut iter = args.iter().skip(1);
    while let Some(a) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return iter.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

fn subcommand_position(args: &[OsString], names: &[&str]) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let s = args[i].to_string_lossy();
        if VALUED_GLOBALS.contains(&s.as_ref()) {
            i += 2;
            continue;
        }
        if names.contains(&s.as_ref()) {
            return Some(i);
        }
        i += 1;
    }
    None
}

fn scalar(key: &str, v: &toml::Value) -> Result<Option<String>> {
    match v {
        toml::Value::String(s) => Ok(Some(s.clone())),
        toml::Value::Integer(i) => Ok(Some(i.to_string())),
        toml::Value::Float(f) => Ok(Some(f.to_string())),
        toml::Value::Datetime(d) => Ok(Some(d.to_string())),
        toml::Value::Boolean(_) => Ok(None),
        _ => Err(Error::Argument(format!(
            "config key {key} must be a scalar or a list of scalars"
        ))),
    }
}

fn flags_for(table: &toml::Table, given: &[String], out: &mut Vec<OsString>) -> Result<()> {
    for (key, value) in table {
        if value.is_table() {
            continue;
        }
        let flag = format!("--{key}");
        if given.iter().any(|g| *g == flag || g.starts_with(&format!("{flag}="))) {
            continue;
        }
        match value {
            toml::Value::Boolean(true) => out.push(flag.into()),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                for item in items {
                    let v = scalar(key, item)?
                        .ok_or_else(|| Error::Argument(format!("config key {key} holds a boolean list")))?;
                    out.push(flag.clone().into());
                    out.push(v.into());
                }
            }
            other => {
                out.push(flag.into());
                out.push(scalar(key, other)?.expect("non-boolean scalar").into());
            }
        }
    }
    Ok(())
}

/// Inserts flags from the config file right after the subcommand token.
pub(crate) fn inject(args: Vec<OsString>, path: &Path, subcommands: &[&str]) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::parse(&path.display().to_string(), 0, e.to_string()))?;
    let Some(pos) = subcommand_position(&args, subcommands) else {
        return Ok(args);
    };
    let given: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let sub = given[pos].clone();
    let mut extra = Vec::new();
    flags_for(&table, &given, &mut extra)?;
    if let Some(section) = table.get(&sub) {
        let section = section
            .as_table()
            .ok_or_else(|| Error::Argument(format!("config entry {sub} must be a table")))?;
        flags_for(section, &given, &mut extra)?;
    }
    let mut out = args[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}
