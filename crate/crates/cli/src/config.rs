//! `key = value` configuration files and flag/file/default resolution.

use std::collections::HashMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, CliResult};

/// Every key accepted in a config file. Dashes and underscores are
/// interchangeable.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "threads",
    "cache",
    "target_n",
    "k",
    "shot_bins",
    "shot_radius_fraction",
    "iterations",
    "lr",
    "batch_pairs",
    "mode",
    "precision",
    "ridge_scale",
    "depth",
    "width",
    "clip_norm",
    "checkpoint_every",
    "log_supervised",
    "pmf_iters",
    "irls_iters",
    "normalization",
    "curve_points",
    "curve_max",
];

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: HashMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|m| CliError::usage(format!("{}: {m}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut values = HashMap::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value", ln + 1))?;
            let k = normalize(k);
            if !KNOWN_KEYS.contains(&k.as_str()) {
                return Err(format!("line {}: unknown key {k:?}", ln + 1));
            }
            values.insert(k, v.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    /// Flag value if given, else file value, else `default`.
    pub fn resolve<T>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "{key}");
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(s) => s
                .parse()
                .map_err(|e| CliError::usage(format!("config key {key}: invalid value {s:?}: {e}"))),
            None => Ok(default),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let c = ConfigFile::parse("# run\nk = 60\nshot-bins=8 # inline\n").unwrap();
        assert_eq!(c.resolve(Some(30usize), "k", 120).unwrap(), 30);
        assert_eq!(c.resolve(None, "k", 120usize).unwrap(), 60);
        assert_eq!(c.resolve(None, "shot_bins", 10usize).unwrap(), 8);
        assert_eq!(c.resolve(None, "iterations", 3000usize).unwrap(), 3000);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ConfigFile::parse("kk=3").unwrap_err().contains("unknown key"));
        assert!(ConfigFile::parse("k 3").unwrap_err().contains("line 1"));
        let c = ConfigFile::parse("k=abc").unwrap();
        assert!(c.resolve(None, "k", 1usize).is_err());
    }
}
