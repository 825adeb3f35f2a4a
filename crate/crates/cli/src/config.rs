//! `--config` files: TOML whose values override command-line flags.
//!
//! Top-level keys apply to every subcommand that has a field of that name;
//! keys inside a `[<subcommand>]` table apply to that subcommand only and
//! must name one of its fields.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

const SUBCOMMANDS: [&str; 7] = ["build", "densify", "sample", "train", "serve", "refresh", "bench"];

pub fn apply<T: Serialize + DeserializeOwned>(args: T, path: &Path, command: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    merge(args, table, command).with_context(|| format!("applying config {}", path.display()))
}

fn merge<T: Serialize + DeserializeOwned>(args: T, table: toml::Table, command: &str) -> Result<T> {
    let Value::Object(mut fields) = serde_json::to_value(&args)? else {
        bail!("arguments do not serialize to a table");
    };
    let mut section = None;
    for (key, value) in table {
        if SUBCOMMANDS.contains(&key.as_str()) {
            if key == command {
                section = Some(value);
            }
            continue;
        }
        if fields.contains_key(&key) {
            fields.insert(key, to_json(value)?);
        } else {
            log::debug!("config key `{key}` does not apply to `{command}`");
        }
    }
    if let Some(section) = section {
        let toml::Value::Table(section) = section else {
            bail!("`[{command}]` must be a table");
        };
        for (key, value) in section {
            if !fields.contains_key(&key) {
                bail!("unknown key `{key}` in [{command}]");
            }
            fields.insert(key, to_json(value)?);
        }
    }
    serde_json::from_value(Value::Object(Map::from_iter(fields))).context("invalid value in config")
}

fn to_json(v: toml::Value) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Args {
        k: usize,
        q: f64,
        out: Option<String>,
        list: Vec<u16>,
    }

    fn args() -> Args {
        Args { k: 5, q: 0.3, out: None, list: vec![] }
    }

    #[test]
    fn section_and_top_level_override_flags() {
        let t: toml::Table = toml::from_str("k = 7\nunrelated = 1\n[densify]\nq = 0.5\nlist = [1, 2]\n[train]\nepochs = 3").unwrap();
        let got = merge(args(), t, "densify").unwrap();
        assert_eq!(got, Args { k: 7, q: 0.5, out: None, list: vec![1, 2] });
    }

    #[test]
    fn unknown_section_keys_and_bad_types_are_errors() {
        let t: toml::Table = toml::from_str("[densify]\nkk = 1").unwrap();
        assert!(merge(args(), t, "densify").is_err());
        let t: toml::Table = toml::from_str("k = \"many\"").unwrap();
        assert!(merge(args(), t, "densify").is_err());
    }
}
