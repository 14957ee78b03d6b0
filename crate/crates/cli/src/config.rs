//! Flat `key = value` configuration files.
//!
//! One setting per line; `#` starts a comment. `include = other.cfg` splices
//! another file in at that point, resolved against the including file's
//! directory. Later assignments override earlier ones, so an included base
//! file can be specialized below its `include` line. Path-valued keys are
//! resolved against the directory of the file that sets them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use slu_core::Error;

use crate::error::CliResult;

/// Keys whose values are file-system paths.
pub const PATH_KEYS: [&str; 9] = [
    "data.train",
    "data.valid",
    "data.vocab",
    "data.intents",
    "init_encoder",
    "text_encoder",
    "corpus",
    "out",
    "metrics_out",
];

const PLAIN_KEYS: [&str; 3] = ["seed", "lambda", "policy"];
const PREFIXES: [&str; 4] = ["model.", "features.", "train.", "text."];

fn known(key: &str) -> bool {
    PATH_KEYS.contains(&key) || PLAIN_KEYS.contains(&key) || PREFIXES.iter().any(|p| key.starts_with(p))
}

/// Resolved settings, keyed by full dotted name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut c = Self::default();
        c.include(path, &mut BTreeSet::new())?;
        Ok(c)
    }

    fn include(&mut self, path: &Path, stack: &mut BTreeSet<PathBuf>) -> CliResult<()> {
        let canonical = path.canonicalize().map_err(|e| Error::io(path, e))?;
        if !stack.insert(canonical.clone()) {
            return Err(Error::Config(format!("include cycle through {}", path.display())).into());
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().unwrap_or(Path::new("")).to_path_buf();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| parse_err("expected `key = value`".into()))?;
            if key.is_empty() {
                return Err(parse_err("empty key".into()).into());
            }
            if key == "include" {
                self.include(&dir.join(value), stack)?;
            } else if !known(key) {
                return Err(parse_err(format!("unknown key `{key}`")).into());
            } else if PATH_KEYS.contains(&key) {
                self.values.insert(key.into(), dir.join(value).display().to_string());
            } else {
                self.values.insert(key.into(), value.into());
            }
        }
        stack.remove(&canonical);
        Ok(())
    }

    /// Command-line override. Paths are taken as given (relative to the
    /// working directory).
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> CliResult<()> {
        if !known(key) {
            return Err(Error::Config(format!("unknown key `{key}`")).into());
        }
        self.values.insert(key.into(), value.into());
        Ok(())
    }

    /// Apply a `key=value` override string.
    pub fn set_pair(&mut self, pair: &str) -> CliResult<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    /// Parse `key` if present.
    pub fn parse<V: std::str::FromStr>(&self, key: &str) -> CliResult<Option<V>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")).into()),
        }
    }

    pub fn parse_or<V: std::str::FromStr>(&self, key: &str, default: V) -> CliResult<V> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    /// Entries under `prefix`, with the prefix removed.
    pub fn section(&self, prefix: &str) -> BTreeMap<String, String> {
        self.values
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|k| (k.to_string(), v.clone())))
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Sorted `key = value` text, loadable by [`Config::load`].
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
