//! Flat `key = value` run configuration. Keys are the long flag names with
//! dashes or underscores; a flag given on the command line wins.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

pub const KNOWN_KEYS: &[&str] = &[
    // shared
    "seed",
    "threads",
    "input",
    "output",
    "probs",
    "report",
    // infer
    "mode",
    "transitivity",
    "model",
    "dupfree_hints",
    "max_iterations",
    "convergence_flip_fraction",
    "prob_clamp_epsilon",
    "cv_folds",
    "smote_neighbors",
    "n_trees",
    "dupfree_c",
    "sim_repeats",
    // trans-data
    "count",
    "alpha",
    "steps",
    "cluster_fraction",
    "padded_fraction",
    "max_clusters",
    // trans-train
    "data",
    "epochs",
    "lr",
    "batch_matrices",
    "cells_per_matrix",
    "encoder",
    "head",
    // diag
    "what",
    "matches",
    "n_left",
    "n_right",
    "lfdeps_c",
    "max_rounds",
    // eval
    "pred",
    "truth",
    "partial",
    // synth
    "task",
    "n_pairs",
    "positive_rate",
    "cluster_sizes",
    "lf_accuracies",
    "abstain",
    "duplicates",
    "truth_output",
];

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|m| CliError::usage(format!("{}: {m}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(format!("line {}: expected `key = value`", n + 1));
            };
            let key = k.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(format!("line {}: unknown key `{}`", n + 1, k.trim()));
            }
            if values.insert(key, v.trim().to_owned()).is_some() {
                return Err(format!("line {}: key `{}` set twice", n + 1, k.trim()));
            }
        }
        Ok(ConfigFile { values })
    }

    /// The flag value, else the config value, else `None`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "unregistered key {key}");
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::usage(format!("config key `{key}`: {e}"))),
        }
    }

    pub fn or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    pub fn required<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.pick(flag, key)?
            .ok_or_else(|| CliError::usage(format!("missing required --{}", key.replace('_', "-"))))
    }
}

/// Comma-separated list of `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: std::fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<T>().map_err(|e| format!("`{}`: {e}", p.trim())))
            .collect::<Result<Vec<T>, String>>()
            .map(List)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigFile::parse("seed = 3\nbogus = 1\n").unwrap_err().contains("bogus"));
        assert!(ConfigFile::parse("seed = 3\nseed = 4\n").is_err());
        assert!(ConfigFile::parse("no equals sign").is_err());
    }

    #[test]
    fn flags_override_config() {
        let c = ConfigFile::parse("# comment\nmax-iterations = 4\nseed=9\n").unwrap();
        assert_eq!(c.pick::<u64>(None, "seed").unwrap(), Some(9));
        assert_eq!(c.pick(Some(1u64), "seed").unwrap(), Some(1));
        assert_eq!(c.or::<usize>(None, "max_iterations", 10).unwrap(), 4);
        assert_eq!(c.or::<usize>(None, "epochs", 7).unwrap(), 7);
        assert!(c.required::<f64>(None, "alpha").is_err());
    }

    #[test]
    fn lists_parse() {
        let l: List<f64> = "0.9, 0.8,0.7".parse().unwrap();
        assert_eq!(l.0, vec![0.9, 0.8, 0.7]);
        assert!("1,x".parse::<List<u32>>().is_err());
    }
}
