//! Flat `key = value` config files and flag/file/default resolution.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

pub const KEYS: &[&str] = &[
    // generate
    "n_features",
    "n_informative",
    "n_samples",
    "noise",
    "correlation",
    "missing_rate",
    // data
    "label_column",
    "split",
    // model
    "latent_dim",
    "embed_dim",
    "heads",
    "layers",
    "encoder_layers",
    "decoder_layers",
    "ff_dim",
    "head_hidden",
    // training
    "seed",
    "epochs",
    "batch_size",
    "learning_rate",
    "selection_learning_rate",
    "beta1",
    "beta2",
    "alpha",
    "align_mode",
    "tau0",
    "kp",
    "ki",
    "kd",
    "tau_min",
    "tau_max",
    // analysis
    "bins",
    "threshold",
];

#[derive(Debug, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("config line {}: expected key = value", i + 1)))?;
            let key = k.trim().replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                return Err(CliError::config(format!("config line {}: unknown key {key}", i + 1)));
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(Self { values })
    }

    /// `flag`, else the file value for `key`, else `default`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        debug_assert!(KEYS.contains(&key), "{key}");
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(s) => s.parse().map_err(|e| CliError::config(format!("config key {key}: {e}"))),
            None => Ok(default),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let c = FileConfig::parse("# comment\nepochs = 7\nlearning-rate=0.5  # inline\n\n").unwrap();
        assert_eq!(c.pick(None, "epochs", 50usize).unwrap(), 7);
        assert_eq!(c.pick(Some(3usize), "epochs", 50).unwrap(), 3);
        assert_eq!(c.pick(None, "learning_rate", 1.0f64).unwrap(), 0.5);
        assert_eq!(c.pick(None, "alpha", 0.25f64).unwrap(), 0.25);
    }

    #[test]
    fn rejects_bad_lines() {
        assert_eq!(FileConfig::parse("epochs 7").unwrap_err().code, 2);
        assert_eq!(FileConfig::parse("bogus = 1").unwrap_err().code, 2);
        let c = FileConfig::parse("epochs = many").unwrap();
        assert_eq!(c.pick(None, "epochs", 1usize).unwrap_err().code, 2);
    }
}
