//! Run settings from `key = value` files, with layered overrides and a
//! stable content hash.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

/// Prefix of environment variables that override file settings,
/// e.g. `TASKENT_SEED`.
pub const ENV_PREFIX: &str = "TASKENT_";

/// Every recognized key, in canonical order.
pub const KEYS: &[&str] = &[
    "activation",
    "alpha",
    "batch_size",
    "clip",
    "embed_dim",
    "epochs",
    "head_rows",
    "hidden_dim",
    "init_range",
    "lr",
    "max_vocab",
    "reverse_input",
    "seed",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// `None` uses the task family's default.
    pub reverse_input: Option<bool>,
    pub alpha: f64,
    pub max_vocab: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            reverse_input: None,
            alpha: 1.0,
            max_vocab: 50_000,
        }
    }
}

/// Raw `key -> value` settings from one layer.
pub type Layer = BTreeMap<String, String>;

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_layer(text: &str, origin: &str) -> Result<Layer> {
    let mut layer = Layer::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_owned(),
            line: i + 1,
            message,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key = value, found {line:?}")))?;
        let key = normalize_key(k.trim());
        if !KEYS.contains(&key.as_str()) {
            return Err(err(format!("unknown setting {:?}", k.trim())));
        }
        layer.insert(key, v.trim().to_owned());
    }
    Ok(layer)
}

pub fn read_layer(path: &Path) -> Result<Layer> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_layer(&text, &path.display().to_string())
}

/// Settings taken from `TASKENT_*` variables supplied by `lookup`.
pub fn env_layer(lookup: impl Fn(&str) -> Option<String>) -> Layer {
    KEYS.iter()
        .filter_map(|k| lookup(&format!("{ENV_PREFIX}{}", k.to_uppercase())).map(|v| (k.to_string(), v)))
        .collect()
}

fn normalize_key(k: &str) -> String {
    k.to_lowercase().replace('-', "_")
}

impl RunConfig {
    /// Applies layers from lowest to highest precedence, e.g.
    /// `[file, env, flags]`.
    pub fn resolve(layers: &[Layer]) -> Result<Self> {
        let mut merged = Layer::new();
        for layer in layers {
            for (k, v) in layer {
                merged.insert(normalize_key(k), v.clone());
            }
        }
        let mut cfg = Self::default();
        for (k, v) in &merged {
            cfg.set(k, v)?;
        }
        cfg.train.validate()?;
        if !(cfg.alpha > 0.0 && cfg.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", cfg.alpha)));
        }
        if cfg.max_vocab == 0 {
            return Err(Error::Config("max_vocab must be positive".into()));
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
        }
        let t = &mut self.train;
        match key {
            "activation" => t.activation = value.parse()?,
            "alpha" => self.alpha = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "clip" => t.clip = num(key, value)?,
            "embed_dim" => t.embed = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "head_rows" => t.head_rows = num(key, value)?,
            "hidden_dim" => t.hidden = num(key, value)?,
            "init_range" => t.init_scale = num(key, value)?,
            "lr" => t.learning_rate = num(key, value)?,
            "max_vocab" => self.max_vocab = num(key, value)?,
            "reverse_input" => self.reverse_input = Some(parse_bool(key, value)?),
            "seed" => t.seed = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    /// Canonical `key=value` lines, sorted by key.
    pub fn canonical(&self) -> String {
        let t = &self.train;
        let reverse = match self.reverse_input {
            Some(b) => b.to_string(),
            None => "family-default".into(),
        };
        let pairs = [
            ("activation", t.activation.name().to_string()),
            ("alpha", self.alpha.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("clip", t.clip.to_string()),
            ("embed_dim", t.embed.to_string()),
            ("epochs", t.epochs.to_string()),
            ("head_rows", t.head_rows().to_string()),
            ("hidden_dim", t.hidden.to_string()),
            ("init_range", t.init_scale.to_string()),
            ("lr", t.learning_rate.to_string()),
            ("max_vocab", self.max_vocab.to_string()),
            ("reverse_input", reverse),
            ("seed", t.seed.to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::canonical`].
    pub fn hash(&self) -> String {
        short_hash(self.canonical().as_bytes())
    }
}

pub fn short_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes)[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, found {value:?}"))),
    }
}
