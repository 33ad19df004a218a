//! Flat key-value configuration shared by the trainer, the CLI, and the
//! sweep runner.
//!
//! The file format is one `key = value` pair per line; `#` starts a comment.
//! List-valued keys (the sweep grids) take comma-separated values. Every key
//! mirrors a field name below, and unknown keys are rejected so typos fail
//! loudly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TransitionMode;
use crate::model::EncodingDims;

impl Serialize for TransitionMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for TransitionMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        TransitionMode::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Config {
    // Input and output paths.
    pub kb: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    /// Held-out corpus used by `sweep` and for validation reporting.
    pub validation: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Per-epoch JSONL training log; defaults next to the checkpoint.
    pub log: Option<PathBuf>,

    // Encoder shape.
    /// Convolution output channels.
    pub filters: usize,
    /// Convolution window length.
    pub filter_window: usize,
    /// Context tokens on each side of a mention.
    pub context_window: usize,
    /// Token prefix for document and entity-body granularities.
    pub prefix_tokens: usize,
    /// Candidates per mention kept during evidence propagation.
    pub walk_candidates: usize,

    // Objective and optimizer.
    /// Balance between cross-entropy and the consistency regularizer.
    pub gamma: f64,
    /// Random-walk restart weight.
    pub lambda: f64,
    /// Number of random-walk layers.
    pub k: usize,
    /// L2 regularization strength.
    pub alpha: f64,
    /// Learning rate.
    pub eta: f64,
    /// Adagrad stabilizer.
    pub epsilon: f64,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub seed: u64,
    pub mode: TransitionMode,
    /// Stop a phase early once training micro-F1 reaches this value.
    pub early_stop_f1: Option<f64>,

    // Sweep grids.
    pub sweep_k: Vec<usize>,
    pub sweep_lambda: Vec<f64>,
    pub sweep_gamma: Vec<f64>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            kb: None,
            corpus: None,
            validation: None,
            embeddings: None,
            checkpoint: None,
            log: None,
            filters: 64,
            filter_window: 3,
            context_window: 10,
            prefix_tokens: 100,
            walk_candidates: 4,
            gamma: 0.1,
            lambda: 0.5,
            k: 5,
            alpha: 1e-5,
            eta: 0.01,
            epsilon: 1e-8,
            pretrain_epochs: 30,
            finetune_epochs: 10,
            seed: 1,
            mode: TransitionMode::Full,
            early_stop_f1: None,
            sweep_k: (0..=7).collect(),
            sweep_lambda: vec![0.5],
            sweep_gamma: vec![0.1],
        }
    }
}

impl Config {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let mut cfg = Config::default();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(lineno, format!("expected key = value, got {raw:?}")))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::parse(lineno, e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Set one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse::<T>()
                .map_err(|e| Error::Config(format!("{key}: {e}")))
        }
        fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
        where
            T::Err: std::fmt::Display,
        {
            value
                .split(',')
                .map(|v| num::<T>(key, v.trim()))
                .collect()
        }
        match key {
            "kb" => self.kb = Some(PathBuf::from(value)),
            "corpus" => self.corpus = Some(PathBuf::from(value)),
            "validation" => self.validation = Some(PathBuf::from(value)),
            "embeddings" => self.embeddings = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "log" => self.log = Some(PathBuf::from(value)),
            "filters" => self.filters = num(key, value)?,
            "filter_window" => self.filter_window = num(key, value)?,
            "context_window" => self.context_window = num(key, value)?,
            "prefix_tokens" => self.prefix_tokens = num(key, value)?,
            "walk_candidates" => self.walk_candidates = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "eta" => self.eta = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = num(key, value)?,
            "finetune_epochs" => self.finetune_epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "mode" => self.mode = TransitionMode::parse(value)?,
            "early_stop_f1" => self.early_stop_f1 = Some(num(key, value)?),
            "sweep_k" => self.sweep_k = list(key, value)?,
            "sweep_lambda" => self.sweep_lambda = list(key, value)?,
            "sweep_gamma" => self.sweep_gamma = list(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must be in [0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.alpha < 0.0 {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.eta <= 0.0 {
            return Err(Error::Config(format!("eta must be > 0, got {}", self.eta)));
        }
        if self.filter_window == 0 || self.filters == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.walk_candidates == 0 {
            return Err(Error::Config("walk_candidates must be positive".into()));
        }
        Ok(())
    }

    pub fn encoding_dims(&self) -> EncodingDims {
        EncodingDims {
            context_window: self.context_window,
            prefix_tokens: self.prefix_tokens,
        }
    }

    fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        path.as_deref()
            .ok_or_else(|| Error::Config(format!("missing required config key {key:?}")))
    }

    pub fn kb_path(&self) -> Result<&Path> {
        Self::require(&self.kb, "kb")
    }

    pub fn corpus_path(&self) -> Result<&Path> {
        Self::require(&self.corpus, "corpus")
    }

    pub fn embeddings_path(&self) -> Result<&Path> {
        Self::require(&self.embeddings, "embeddings")
    }

    pub fn checkpoint_path(&self) -> Result<&Path> {
        Self::require(&self.checkpoint, "checkpoint")
    }

    pub fn validation_path(&self) -> Result<&Path> {
        Self::require(&self.validation, "validation")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn parses_flat_file_with_comments() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# experiment").unwrap();
        writeln!(f, "gamma = 0.3").unwrap();
        writeln!(f, "k = 4  # layers").unwrap();
        writeln!(f, "mode = link_only").unwrap();
        writeln!(f, "sweep_k = 0, 1, 2").unwrap();
        writeln!(f, "kb = /tmp/kb.jsonl").unwrap();
        let cfg = Config::from_file(f.path()).unwrap();
        assert_eq!(cfg.gamma, 0.3);
        assert_eq!(cfg.k, 4);
        assert_eq!(cfg.mode, TransitionMode::LinkOnly);
        assert_eq!(cfg.sweep_k, vec![0, 1, 2]);
        assert_eq!(cfg.kb.unwrap(), PathBuf::from("/tmp/kb.jsonl"));
    }

    #[test]
    fn unknown_key_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "gama = 0.3").unwrap();
        assert!(Config::from_file(f.path()).is_err());
    }

    #[test]
    fn invalid_ranges_rejected() {
        let mut cfg = Config::default();
        cfg.lambda = 1.5;
        assert!(cfg.validate().is_err());
        cfg.lambda = 0.5;
        cfg.gamma = -0.1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn defaults_match_documented_values() {
        let cfg = Config::default();
        assert_eq!(cfg.filters, 64);
        assert_eq!(cfg.filter_window, 3);
        assert_eq!(cfg.context_window, 10);
        assert_eq!(cfg.prefix_tokens, 100);
        assert_eq!(cfg.walk_candidates, 4);
        assert_eq!(cfg.gamma, 0.1);
        assert_eq!(cfg.lambda, 0.5);
        assert_eq!(cfg.k, 5);
        assert_eq!(cfg.alpha, 1e-5);
    }
}
