//! Resolved `key=value` settings: built-in defaults, then the config file,
//! then command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use dxplain::baselines::SvmConfig;
use dxplain::corpus::SyntheticSpec;
use dxplain::model::{DecodeMode, ModelConfig};
use dxplain::training::TrainConfig;

/// A setting with its default in textual form.
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
}

const fn key(name: &'static str, default: &'static str) -> Key {
    Key { name, default }
}

pub const SEED: &[Key] = &[key("seed", "42")];

pub const DATA: &[Key] = &[
    key("n_records", "1000"),
    key("positive_fraction", "0.2"),
    key("length_mix", "0.4,0.4,0.2"),
    key("noise_rate", "0"),
];

pub const MODEL: &[Key] = &[
    key("min_freq", "1"),
    key("d_model", "64"),
    key("n_layers", "2"),
    key("n_heads", "4"),
    key("max_len", "128"),
    key("threshold", "0.5"),
];

pub const TRAIN: &[Key] = &[
    key("lr", "0.0003"),
    key("beta1", "0.9"),
    key("beta2", "0.999"),
    key("eps", "0.00000001"),
    key("epochs", "30"),
    key("batch_size", "8"),
    key("lambda", "0.5"),
    key("lambda_grid", ""),
    key("patience", "3"),
    key("clip_norm", "1"),
];

/// Settings that pick the evaluated split and name the report row.
pub const EVAL: &[Key] = &[key("split", "test"), key("lambda", "0.5")];

pub const EXPLAIN: &[Key] = &[
    key("split", "test"),
    key("max_new", "48"),
    key("decode", "greedy"),
    key("temperature", "1"),
];

pub const SVM: &[Key] = &[
    key("svm_min_df", "1"),
    key("svm_epochs", "20"),
    key("svm_reg_grid", "0.0001,0.001,0.01,0.1"),
];

const ALL: &[&[Key]] = &[SEED, DATA, MODEL, TRAIN, EVAL, EXPLAIN, SVM];

#[derive(Debug)]
pub struct SettingsError(pub String);

impl fmt::Display for SettingsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SettingsError {}

fn err(msg: impl Into<String>) -> SettingsError {
    SettingsError(msg.into())
}

fn is_known(name: &str) -> bool {
    ALL.iter().flat_map(|g| g.iter()).any(|k| k.name == name)
}

/// Parses a config file: one `key=value` per line, `#` comments and blank
/// lines ignored. Every key must be one the tool knows.
pub fn parse_config(content: &str) -> Result<BTreeMap<String, String>, SettingsError> {
    let mut out = BTreeMap::new();
    for (i, raw) in content.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("config line {}: expected key=value", i + 1)))?;
        let k = k.trim();
        if !is_known(k) {
            return Err(err(format!("config line {}: unknown key {k:?}", i + 1)));
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(err(format!("config line {}: duplicate key {k:?}", i + 1)));
        }
    }
    Ok(out)
}

/// The settings one command reads, with every default materialized.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Keys from `groups` take their default, then the config file value,
    /// then the flag value. Config keys outside `groups` are accepted and
    /// ignored so that one file can serve several commands.
    pub fn resolve(
        groups: &[&[Key]],
        config: Option<&Path>,
        flags: &[(&str, Option<String>)],
    ) -> Result<Self, SettingsError> {
        let mut values = BTreeMap::new();
        for k in groups.iter().flat_map(|g| g.iter()) {
            values.insert(k.name.to_string(), k.default.to_string());
        }
        if let Some(path) = config {
            let content = fs::read_to_string(path)
                .map_err(|e| err(format!("cannot read config {}: {e}", path.display())))?;
            for (k, v) in parse_config(&content)? {
                if let Some(slot) = values.get_mut(&k) {
                    *slot = v;
                }
            }
        }
        for (k, v) in flags {
            if let Some(v) = v {
                let slot = values
                    .get_mut(*k)
                    .unwrap_or_else(|| panic!("flag {k} is not among the command's settings"));
                *slot = v.clone();
            }
        }
        Ok(Settings { values })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("setting {key} was not resolved for this command"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, SettingsError> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| err(format!("invalid value for {key}: {raw:?}")))
    }

    /// Comma-separated list; empty means no entries.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, SettingsError> {
        let raw = self.raw(key);
        if raw.trim().is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|p| p.trim().parse().map_err(|_| err(format!("invalid value for {key}: {raw:?}"))))
            .collect()
    }

    pub fn map(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// `key=value` lines in key order; loadable with `--config`.
    pub fn to_config_string(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.to_string(), value);
    }

    pub fn seed(&self) -> Result<u64, SettingsError> {
        self.get("seed")
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticSpec, SettingsError> {
        let mut spec = SyntheticSpec {
            seed: self.seed()?,
            ..SyntheticSpec::default()
        };
        for k in DATA {
            spec.set(k.name, self.raw(k.name)).map_err(|e| err(e.to_string()))?;
        }
        spec.validate().map_err(|e| err(e.to_string()))?;
        Ok(spec)
    }

    pub fn train_config(&self) -> Result<TrainConfig, SettingsError> {
        let clip: f64 = self.get("clip_norm")?;
        let cfg = TrainConfig {
            lr: self.get("lr")?,
            beta1: self.get("beta1")?,
            beta2: self.get("beta2")?,
            eps: self.get("eps")?,
            epochs: self.get("epochs")?,
            batch_size: self.get("batch_size")?,
            lambda: self.get("lambda")?,
            seed: self.seed()?,
            patience: self.get("patience")?,
            // zero turns clipping off
            clip_norm: (clip != 0.0).then_some(clip),
        };
        cfg.validate().map_err(|e| err(e.to_string()))?;
        for l in self.lambda_grid()? {
            if !(0.0..=1.0).contains(&l) {
                return Err(err(format!("lambda_grid entries must lie in [0, 1], got {l}")));
            }
        }
        Ok(cfg)
    }

    pub fn lambda_grid(&self) -> Result<Vec<f64>, SettingsError> {
        self.list("lambda_grid")
    }

    pub fn min_freq(&self) -> Result<usize, SettingsError> {
        let v: usize = self.get("min_freq")?;
        if v == 0 {
            return Err(err("min_freq must be at least 1"));
        }
        Ok(v)
    }

    /// Model shape for a vocabulary of `vocab_size` entries.
    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig, SettingsError> {
        let cfg = ModelConfig {
            d_model: self.get("d_model")?,
            n_layers: self.get("n_layers")?,
            n_heads: self.get("n_heads")?,
            vocab_size,
            max_len: self.get("max_len")?,
            threshold: self.get("threshold")?,
        };
        cfg.validate().map_err(|e| err(e.to_string()))?;
        Ok(cfg)
    }

    /// Checks the model keys without a vocabulary at hand.
    pub fn check_model_keys(&self) -> Result<(), SettingsError> {
        self.min_freq()?;
        self.model_config(dxplain::tokenizer::SEP + 1).map(|_| ())
    }

    pub fn decode_mode(&self) -> Result<DecodeMode, SettingsError> {
        match self.raw("decode") {
            "greedy" => Ok(DecodeMode::Greedy),
            "sample" => {
                let temperature: f64 = self.get("temperature")?;
                if !(temperature > 0.0 && temperature.is_finite()) {
                    return Err(err("temperature must be positive"));
                }
                Ok(DecodeMode::Sampled {
                    temperature,
                    seed: self.seed()?,
                })
            }
            other => Err(err(format!("decode must be greedy or sample, got {other:?}"))),
        }
    }

    pub fn svm_config(&self) -> Result<SvmConfig, SettingsError> {
        let cfg = SvmConfig {
            min_df: self.get("svm_min_df")?,
            epochs: self.get("svm_epochs")?,
            reg_grid: self.list("svm_reg_grid")?,
            seed: self.seed()?,
        };
        if cfg.min_df == 0 {
            return Err(err("svm_min_df must be at least 1"));
        }
        if cfg.epochs == 0 {
            return Err(err("svm_epochs must be at least 1"));
        }
        if cfg.reg_grid.is_empty() || cfg.reg_grid.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(err("svm_reg_grid must list positive values"));
        }
        Ok(cfg)
    }
}
