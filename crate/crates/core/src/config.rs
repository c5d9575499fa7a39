//! Plain-text `key = value` configuration covering every training field and
//! ablation flag, plus the run manifest written next to every artifact.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::{FeatureMode, HeadingMode};
use crate::model::{FeedForwardKind, ModelConfig, TemporalEncoderMode};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub val_every: usize,
    pub clip_norm: Option<f64>,
    /// Random-rotation augmentation during training.
    pub augment: bool,
    pub train_path: Option<PathBuf>,
    pub val_path: Option<PathBuf>,
    pub stride_train: usize,
    pub stride_eval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            warmup_steps: 5000,
            batch_size: 8,
            max_steps: 2000,
            seed: 42,
            checkpoint_every: 500,
            val_every: 100,
            clip_norm: None,
            augment: true,
            train_path: None,
            val_path: None,
            stride_train: 1,
            stride_eval: 12,
        }
    }
}

const KEYS: &[&str] = &[
    "d_model",
    "heads",
    "layers",
    "tcn_kernel",
    "dropout",
    "t_obs",
    "t_pred",
    "ff_hidden",
    "ss",
    "tcn",
    "te",
    "td",
    "features",
    "heading",
    "spatial_limit",
    "spatial_residual",
    "warmup_steps",
    "batch_size",
    "max_steps",
    "seed",
    "checkpoint_every",
    "val_every",
    "clip_norm",
    "augment",
    "train_path",
    "val_path",
    "stride_train",
    "stride_eval",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.warmup_steps == 0 {
            return Err(Error::Config("warmup_steps must be at least 1".into()));
        }
        if self.batch_size == 0 || self.stride_train == 0 || self.stride_eval == 0 {
            return Err(Error::Config("batch_size and strides must be at least 1".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` override. Unknown keys name the nearest
    /// valid key.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        // Table 2 column aliases
        let key = match key {
            "hf" => "features",
            "lm" => "spatial_limit",
            other => other,
        };
        let bad = |what: &str| Error::Config(format!("invalid value {value:?} for {what}"));
        let parse_usize =
            |value: &str, what: &str| value.parse::<usize>().map_err(|_| bad(what));
        match key {
            "d_model" => self.model.d_model = parse_usize(value, key)?,
            "heads" => self.model.heads = parse_usize(value, key)?,
            "layers" => self.model.layers = parse_usize(value, key)?,
            "tcn_kernel" => self.model.tcn_kernel = parse_usize(value, key)?,
            "dropout" => {
                self.model.dropout = value.parse().map_err(|_| bad(key))?;
                if !(0.0..1.0).contains(&self.model.dropout) {
                    return Err(bad(key));
                }
            }
            "t_obs" => self.model.t_obs = parse_usize(value, key)?,
            "t_pred" => self.model.t_pred = parse_usize(value, key)?,
            "ff_hidden" => self.model.ff_hidden = parse_usize(value, key)?,
            "ss" => self.model.spatial_attention = parse_on_off(value).ok_or_else(|| bad(key))?,
            "tcn" => self.model.tcn = parse_on_off(value).ok_or_else(|| bad(key))?,
            "te" => {
                self.model.temporal_encoder = match value {
                    "sc" => TemporalEncoderMode::On(FeedForwardKind::SeparableConv),
                    "fc" => TemporalEncoderMode::On(FeedForwardKind::Dense),
                    "off" => TemporalEncoderMode::Off,
                    _ => return Err(bad(key)),
                }
            }
            "td" => {
                self.model.decoder_ff = match value {
                    "sc" => FeedForwardKind::SeparableConv,
                    "fc" => FeedForwardKind::Dense,
                    _ => return Err(bad(key)),
                }
            }
            "features" => {
                self.model.encoding.mode = match value {
                    "a" => FeatureMode::Full,
                    "c" => FeatureMode::CoordsOnly,
                    _ => return Err(bad(key)),
                }
            }
            "heading" => {
                self.model.encoding.heading = match value {
                    "cossin" => HeadingMode::CosSin,
                    "raw" => HeadingMode::Raw,
                    _ => return Err(bad(key)),
                }
            }
            "spatial_limit" => {
                self.model.spatial_limit = match value {
                    "w" | "none" => None,
                    "n" => Some(15.0),
                    other => Some(other.parse().map_err(|_| bad(key))?),
                }
            }
            "spatial_residual" => {
                self.model.spatial_residual = parse_on_off(value).ok_or_else(|| bad(key))?
            }
            "warmup_steps" => self.warmup_steps = parse_usize(value, key)?,
            "batch_size" => self.batch_size = parse_usize(value, key)?,
            "max_steps" => self.max_steps = parse_usize(value, key)?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key))?,
            "checkpoint_every" => self.checkpoint_every = parse_usize(value, key)?,
            "val_every" => self.val_every = parse_usize(value, key)?,
            "clip_norm" => {
                self.clip_norm = match value {
                    "off" | "none" => None,
                    other => Some(other.parse().map_err(|_| bad(key))?),
                }
            }
            "augment" => self.augment = parse_on_off(value).ok_or_else(|| bad(key))?,
            "train_path" => self.train_path = Some(PathBuf::from(value)),
            "val_path" => self.val_path = Some(PathBuf::from(value)),
            "stride_train" => self.stride_train = parse_usize(value, key)?,
            "stride_eval" => self.stride_eval = parse_usize(value, key)?,
            unknown => {
                let nearest = KEYS
                    .iter()
                    .min_by_key(|k| edit_distance(unknown, k))
                    .copied()
                    .unwrap_or("d_model");
                return Err(Error::Config(format!(
                    "unknown config key {unknown:?} (nearest valid key: {nearest:?})"
                )));
            }
        }
        Ok(())
    }

    pub fn parse_str(text: &str, label: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_str(text, label)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str, label: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{label}:{}: expected key = value, got {raw:?}",
                    lineno + 1
                )));
            };
            self.apply(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("{label}:{}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text, &path.display().to_string())
    }

    /// Recovers the resolved configuration from a run manifest.
    pub fn from_manifest(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let Some((_, resolved)) = text.split_once("# resolved configuration") else {
            return Err(Error::Config(format!(
                "{}: no resolved configuration section",
                path.display()
            )));
        };
        Self::parse_str(resolved, &path.display().to_string())
    }

    /// Canonical `key = value` dump of the fully resolved configuration.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("d_model", m.d_model.to_string());
        kv("heads", m.heads.to_string());
        kv("layers", m.layers.to_string());
        kv("tcn_kernel", m.tcn_kernel.to_string());
        kv("dropout", m.dropout.to_string());
        kv("t_obs", m.t_obs.to_string());
        kv("t_pred", m.t_pred.to_string());
        kv("ff_hidden", m.ff_hidden.to_string());
        kv("ss", on_off(m.spatial_attention));
        kv("tcn", on_off(m.tcn));
        kv(
            "te",
            match m.temporal_encoder {
                TemporalEncoderMode::On(FeedForwardKind::SeparableConv) => "sc".into(),
                TemporalEncoderMode::On(FeedForwardKind::Dense) => "fc".into(),
                TemporalEncoderMode::Off => "off".into(),
            },
        );
        kv(
            "td",
            match m.decoder_ff {
                FeedForwardKind::SeparableConv => "sc".into(),
                FeedForwardKind::Dense => "fc".into(),
            },
        );
        kv(
            "features",
            match m.encoding.mode {
                FeatureMode::Full => "a".into(),
                FeatureMode::CoordsOnly => "c".into(),
            },
        );
        kv(
            "heading",
            match m.encoding.heading {
                HeadingMode::CosSin => "cossin".into(),
                HeadingMode::Raw => "raw".into(),
            },
        );
        kv(
            "spatial_limit",
            match m.spatial_limit {
                None => "w".into(),
                Some(v) => v.to_string(),
            },
        );
        kv("spatial_residual", on_off(m.spatial_residual));
        kv("warmup_steps", self.warmup_steps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("max_steps", self.max_steps.to_string());
        kv("seed", self.seed.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("val_every", self.val_every.to_string());
        kv(
            "clip_norm",
            match self.clip_norm {
                None => "off".into(),
                Some(v) => v.to_string(),
            },
        );
        kv("augment", on_off(self.augment));
        if let Some(p) = &self.train_path {
            kv("train_path", p.display().to_string());
        }
        if let Some(p) = &self.val_path {
            kv("val_path", p.display().to_string());
        }
        kv("stride_train", self.stride_train.to_string());
        kv("stride_eval", self.stride_eval.to_string());
        out
    }

    /// Hex SHA-256 of the resolved configuration text.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_on_off(value: &str) -> Option<bool> {
    match value {
        "on" | "true" | "1" => Some(true),
        "off" | "false" | "0" => Some(false),
        _ => None,
    }
}

fn on_off(v: bool) -> String {
    if v { "on".into() } else { "off".into() }
}

fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            cur[j] = (prev[j] + 1).min(cur[j - 1] + 1).min(prev[j - 1] + cost);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Describes one training/eval run; a copy lives in every artifact
/// directory.
pub struct RunManifest<'a> {
    pub config: &'a TrainConfig,
    pub checkpoint: Option<&'a Path>,
}

impl RunManifest<'_> {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "config_hash = {}", self.config.content_hash());
        let _ = writeln!(out, "seed = {}", self.config.seed);
        if let Some(p) = &self.config.train_path {
            let _ = writeln!(out, "train_path = {}", p.display());
        }
        if let Some(p) = &self.config.val_path {
            let _ = writeln!(out, "val_path = {}", p.display());
        }
        if let Some(c) = self.checkpoint {
            let _ = writeln!(out, "checkpoint = {}", c.display());
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "# resolved configuration");
        out.push_str(&self.config.to_text());
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.txt"), self.to_text())?;
        Ok(())
    }
}
