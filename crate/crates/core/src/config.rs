//! Run configuration.
//!
//! A flat set of keys read from a TOML file, then overridden by environment
//! variables, then by explicit `key=value` overrides (command-line flags).
//! Switch keys accept `true`/`false` or `"on"`/`"off"`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::trace::digest_json;

pub const ENV_CONFIG: &str = "TAROT_CONFIG";
pub const ENV_GATEWAY: &str = "TAROT_GATEWAY_URL";
pub const ENV_OUT_DIR: &str = "TAROT_OUT_DIR";

/// Keys that only say where or how fast to run, never what is computed.
/// They are left out of [`Config::digest`] and of trace comparisons.
pub const NON_SEMANTIC_KEYS: &[&str] = &["out_dir", "workers"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {message}")]
    Invalid { key: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Scripted,
    Remote,
}

fn switch<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Bool(bool),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Bool(b) => Ok(b),
        Raw::Text(s) => match s.to_ascii_lowercase().as_str() {
            "on" | "true" | "yes" | "1" => Ok(true),
            "off" | "false" | "no" | "0" => Ok(false),
            other => Err(serde::de::Error::custom(format!("expected on/off, got {other:?}"))),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Text-candidate consistency threshold against grounded boxes.
    pub tau: f64,
    /// Negative-point similarity ceiling, as a fraction of the field maximum.
    pub s_neg: f64,
    pub anchors: usize,
    /// Smallest discriminative region, as a fraction of the image area.
    pub min_region_frac: f64,
    #[serde(deserialize_with = "switch")]
    pub rpo: bool,
    #[serde(deserialize_with = "switch")]
    pub text_aug: bool,
    #[serde(deserialize_with = "switch")]
    pub bbox_aug: bool,
    #[serde(deserialize_with = "switch")]
    pub ips: bool,
    #[serde(deserialize_with = "switch")]
    pub opm: bool,
    pub max_rounds: u32,
    /// Positive points closer than this fraction of the image diagonal are shifted, not added.
    pub shift_radius_frac: f64,
    /// Reject refined masks whose best box IoU drops below `tau / 2`.
    #[serde(deserialize_with = "switch")]
    pub guard: bool,
    /// Reject, rather than repair, contract violations in backend responses.
    #[serde(deserialize_with = "switch")]
    pub strict: bool,
    pub backend_mode: BackendMode,
    pub scenario: Option<PathBuf>,
    pub gateway: Option<String>,
    pub timeout_s: f64,
    pub retries: u32,
    pub max_inflight: usize,
    /// Benchmark worker threads; 0 picks the number of CPUs.
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            tau: 0.80,
            s_neg: 0.30,
            anchors: 5,
            min_region_frac: 0.001,
            rpo: true,
            text_aug: true,
            bbox_aug: true,
            ips: true,
            opm: true,
            max_rounds: 2,
            shift_radius_frac: 0.05,
            guard: true,
            strict: false,
            backend_mode: BackendMode::Scripted,
            scenario: None,
            gateway: None,
            timeout_s: 120.0,
            retries: 2,
            max_inflight: 8,
            workers: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Parses a raw override value: TOML scalars when they parse, bare strings otherwise.
fn parse_scalar(raw: &str) -> Value {
    let parsed = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .and_then(|v| serde_json::to_value(v).ok());
    parsed.unwrap_or_else(|| Value::String(raw.to_string()))
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::File { path: path.to_path_buf(), message: e.to_string() })?;
        Self::from_toml_str(&text).map_err(|message| ConfigError::File { path: path.to_path_buf(), message })
    }

    pub fn keys() -> Vec<String> {
        match serde_json::to_value(Config::default()) {
            Ok(Value::Object(m)) => m.keys().cloned().collect(),
            _ => unreachable!("Config serializes to an object"),
        }
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), ConfigError> {
        let key = key.replace('-', "_");
        let Value::Object(mut map) = serde_json::to_value(&*self).expect("Config serializes") else {
            unreachable!("Config serializes to an object")
        };
        if !map.contains_key(&key) {
            return Err(ConfigError::UnknownKey(key));
        }
        let value = match (key.as_str(), parse_scalar(raw)) {
            // Paths and URLs stay verbatim.
            ("scenario" | "gateway" | "out_dir", _) => Value::String(raw.to_string()),
            (_, v) => v,
        };
        map.insert(key.clone(), value);
        *self = serde_json::from_value(Value::Object(map))
            .map_err(|e| ConfigError::Invalid { key, message: e.to_string() })?;
        Ok(())
    }

    /// Defaults, then the config file, then environment, then `overrides`.
    ///
    /// The file is `config_path` if given, else `$TAROT_CONFIG` if set.
    pub fn resolve(
        config_path: Option<&Path>,
        env: impl Fn(&str) -> Option<String>,
        overrides: &[(String, String)],
    ) -> Result<Config, ConfigError> {
        let file = config_path.map(Path::to_path_buf).or_else(|| env(ENV_CONFIG).map(PathBuf::from));
        let mut config = match file {
            Some(p) => Config::load(&p)?,
            None => Config::default(),
        };
        if let Some(url) = env(ENV_GATEWAY) {
            config.set("gateway", &url)?;
        }
        if let Some(dir) = env(ENV_OUT_DIR) {
            config.set("out_dir", &dir)?;
        }
        for (k, v) in overrides {
            config.set(k, v)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_process_env(
        config_path: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<Config, ConfigError> {
        Self::resolve(config_path, |k| std::env::var(k).ok(), overrides)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: &str| Err(ConfigError::Invalid { key: key.into(), message: message.into() });
        if !self.tau.is_finite() || self.tau < 0.0 {
            return bad("tau", "must be a finite number >= 0");
        }
        if !self.s_neg.is_finite() || !(0.0..=1.0).contains(&self.s_neg) {
            return bad("s_neg", "must lie in [0, 1]");
        }
        if self.anchors == 0 {
            return bad("anchors", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.min_region_frac) {
            return bad("min_region_frac", "must lie in [0, 1]");
        }
        if !self.shift_radius_frac.is_finite() || self.shift_radius_frac < 0.0 {
            return bad("shift_radius_frac", "must be >= 0");
        }
        if !self.timeout_s.is_finite() || self.timeout_s <= 0.0 {
            return bad("timeout_s", "must be > 0");
        }
        if self.max_inflight == 0 {
            return bad("max_inflight", "must be at least 1");
        }
        Ok(())
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("Config serializes")
    }

    /// Digest of every key that can influence results.
    pub fn digest(&self) -> String {
        let mut v = self.to_value();
        if let Value::Object(m) = &mut v {
            for k in NON_SEMANTIC_KEYS {
                m.remove(*k);
            }
        }
        digest_json(&v)
    }

    /// Minimum discriminative-region area in pixels for a `width x height` image.
    pub fn min_region_area(&self, width: u32, height: u32) -> usize {
        ((self.min_region_frac * width as f64 * height as f64).ceil() as usize).max(1)
    }

    pub fn shift_radius(&self, width: u32, height: u32) -> f64 {
        self.shift_radius_frac * (width as f64).hypot(height as f64)
    }

    /// TOML rendering of the resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("Config serializes to TOML")
    }
}
