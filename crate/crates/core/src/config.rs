//! Run configuration: a flat `key = value` file format with typed accessors,
//! unknown-key rejection, a canonical dump, and a content hash, plus the run
//! manifest written next to every training artifact.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CplError, Result};
use crate::extractor::ExtractorConfig;
use crate::reasoner::ReasonerConfig;
use crate::trainer::TrainerConfig;

/// Parsed `key = value` pairs. Keys are unique; later duplicates are an
/// error rather than a silent override.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CplError::Config(format!(
                    "line {}: expected 'key = value', got '{}'",
                    lineno + 1,
                    line
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() || value.is_empty() {
                return Err(CplError::Config(format!(
                    "line {}: empty key or value",
                    lineno + 1
                )));
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(CplError::Config(format!(
                    "line {}: duplicate key '{}'",
                    lineno + 1,
                    key
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Canonical sorted dump; parsing it back yields an equal map.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// Hash of the canonical dump; used to bind checkpoints to the
    /// configuration that produced them.
    pub fn hash(&self) -> [u8; 32] {
        let digest = Sha256::digest(self.dump().as_bytes());
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }
}

/// Reads typed values out of a [`ConfigMap`], tracking which keys were
/// consumed so leftovers can be rejected as typos.
pub struct TypedReader<'a> {
    map: &'a ConfigMap,
    consumed: BTreeSet<String>,
}

impl<'a> TypedReader<'a> {
    pub fn new(map: &'a ConfigMap) -> Self {
        Self {
            map,
            consumed: BTreeSet::new(),
        }
    }

    fn raw(&mut self, key: &str) -> Option<&'a str> {
        let v = self.map.get(key);
        if v.is_some() {
            self.consumed.insert(key.to_string());
        }
        v
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(text) => text.parse().map_err(|_| {
                CplError::Config(format!(
                    "key '{}': cannot parse '{}' as {}",
                    key,
                    text,
                    std::any::type_name::<T>()
                ))
            }),
        }
    }

    pub fn usize(&mut self, key: &str, default: usize) -> Result<usize> {
        self.parse(key, default)
    }

    pub fn u64(&mut self, key: &str, default: u64) -> Result<u64> {
        self.parse(key, default)
    }

    pub fn f64(&mut self, key: &str, default: f64) -> Result<f64> {
        let v: f64 = self.parse(key, default)?;
        if !v.is_finite() {
            return Err(CplError::Config(format!("key '{key}': non-finite value")));
        }
        Ok(v)
    }

    pub fn bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(other) => Err(CplError::Config(format!(
                "key '{key}': expected true or false, got '{other}'"
            ))),
        }
    }

    pub fn opt_f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(text) => text
                .parse()
                .map(Some)
                .map_err(|_| CplError::Config(format!("key '{key}': cannot parse '{text}'"))),
        }
    }

    /// Error out on any key never consumed by a typed accessor.
    pub fn finish(self) -> Result<()> {
        let unknown: Vec<&str> = self
            .map
            .keys()
            .filter(|k| !self.consumed.contains(**&k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CplError::Config(format!(
                "unknown configuration keys: {}",
                unknown.join(", ")
            )))
        }
    }
}

/// Everything a run needs, resolved from one flat file.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub trainer: TrainerConfig,
    pub reasoner: ReasonerConfig,
    pub extractor: ExtractorConfig,
    pub pretrain_reasoner_epochs: usize,
    pub pretrain_extractor_epochs: usize,
    pub two_step_threshold: f64,
    pub max_sentence_len: usize,
}

pub fn resolve_settings(map: &ConfigMap) -> Result<RunSettings> {
    let mut r = TypedReader::new(map);
    let td = TrainerConfig::default();
    let trainer = TrainerConfig {
        reasoner_batches: r.usize("reasoner_batches", td.reasoner_batches)?,
        extractor_batches: r.usize("extractor_batches", td.extractor_batches)?,
        adaptive_epochs: r.usize("adaptive_epochs", td.adaptive_epochs)?,
        max_epochs: r.usize("max_epochs", td.max_epochs)?,
        learning_rate: r.f64("learning_rate", td.learning_rate)?,
        batch_size: r.usize("batch_size", td.batch_size)?,
        horizon: r.usize("horizon", td.horizon)?,
        rollouts_per_query: r.usize("rollouts_per_query", td.rollouts_per_query)?,
        gamma_reasoner: r.f64("gamma_reasoner", td.gamma_reasoner)?,
        gamma_extractor: r.f64("gamma_extractor", td.gamma_extractor)?,
        dropout_rate: r.f64("dropout_rate", td.dropout_rate)?,
        suggestions_per_step: r.usize("suggestions_per_step", td.suggestions_per_step)?,
        adaptive_boost: r.f64("adaptive_boost", td.adaptive_boost)?,
        replay_capacity_reasoner: r.usize("replay_capacity_reasoner", td.replay_capacity_reasoner)?,
        replay_capacity_extractor: r.usize("replay_capacity_extractor", td.replay_capacity_extractor)?,
        action_cap: r.usize("action_cap", td.action_cap)?,
        beam_width: r.usize("beam_width", td.beam_width)?,
        freeze_extractor: r.bool("freeze_extractor", td.freeze_extractor)?,
        use_baseline: r.bool("use_baseline", td.use_baseline)?,
        early_stop_hits1: r.opt_f64("early_stop_hits1")?,
    };
    trainer.validate()?;
    let rd = ReasonerConfig::default();
    let reasoner = ReasonerConfig {
        embed_dim: r.usize("embed_dim", rd.embed_dim)?,
        hidden_dim: r.usize("hidden_dim", rd.hidden_dim)?,
        ff_dim: r.usize("ff_dim", rd.ff_dim)?,
    };
    let ed = ExtractorConfig::default();
    let extractor = ExtractorConfig {
        word_dim: r.usize("word_dim", ed.word_dim)?,
        pos_dim: r.usize("pos_dim", ed.pos_dim)?,
        pos_window: r.usize("pos_window", ed.pos_window)?,
        n_filters: r.usize("n_filters", ed.n_filters)?,
        kernel_width: r.usize("kernel_width", ed.kernel_width)?,
        rel_dim: r.usize("rel_dim", ed.rel_dim)?,
    };
    let settings = RunSettings {
        trainer,
        reasoner,
        extractor,
        pretrain_reasoner_epochs: r.usize("pretrain_reasoner_epochs", 5)?,
        pretrain_extractor_epochs: r.usize("pretrain_extractor_epochs", 5)?,
        two_step_threshold: r.f64("two_step_threshold", 0.9)?,
        max_sentence_len: r.usize("max_sentence_len", 120)?,
    };
    r.finish()?;
    Ok(settings)
}

/// Written next to every run's outputs: enough to re-run or audit it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct RunManifest {
    pub created_unix: u64,
    pub seed: u64,
    /// The effective configuration, canonical form.
    pub config: BTreeMap<String, String>,
    pub config_hash_hex: String,
    /// Input path -> content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output role (checkpoint, metrics, ...) -> path.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(map: &ConfigMap, seed: u64) -> Self {
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            created_unix,
            seed,
            config: map
                .keys()
                .map(|k| (k.to_string(), map.get(k).unwrap().to_string()))
                .collect(),
            config_hash_hex: hex(&map.hash()),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    pub fn record_output(&mut self, role: &str, path: &Path) {
        self.outputs
            .insert(role.to_string(), path.display().to_string());
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CplError::Config(format!("manifest serialization: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CplError::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex(&Sha256::digest(&bytes)))
}
