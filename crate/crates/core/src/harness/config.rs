use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactEncoderKind {
    #[default]
    Gcn,
    Bilstm,
}

impl fmt::Display for FactEncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FactEncoderKind::Gcn => "gcn",
            FactEncoderKind::Bilstm => "bilstm",
        })
    }
}

impl FromStr for FactEncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(FactEncoderKind::Gcn),
            "bilstm" => Ok(FactEncoderKind::Bilstm),
            other => Err(Error::Config(format!("unknown fact encoder {other:?}"))),
        }
    }
}

/// Hyperparameters and ablation switches. Every field has a default, so a
/// config file only needs the values it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// `s`: fact, embedding and transformer width.
    pub hidden_size: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout: f64,
    /// PMI sliding-window length.
    pub window_size: usize,
    pub heads: usize,
    /// Hard cap on training epochs.
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub fact_encoder: FactEncoderKind,
    pub use_knowledge: bool,
    /// Facts are truncated to this many tokens.
    pub max_fact_len: usize,
    pub blocks_per_level: usize,
    /// One transformer stack for all four schema slots instead of one each.
    pub share_schema_encoders: bool,
    /// Embeddings start uniform in `±embedding_scale`.
    pub embedding_scale: f64,
    pub min_freq: usize,
    /// Add knowledge-tree text to the vocabulary and PMI corpus.
    pub vocab_includes_knowledge: bool,
    /// Optional word-vector text file (`token v1 .. vs` per line) used to
    /// initialize matching embedding rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings_file: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_size: 300,
            learning_rate: 0.001,
            batch_size: 128,
            dropout: 0.5,
            window_size: 20,
            heads: 6,
            epochs: 100,
            patience: 10,
            seed: 0,
            fact_encoder: FactEncoderKind::Gcn,
            use_knowledge: true,
            max_fact_len: 512,
            blocks_per_level: 1,
            share_schema_encoders: false,
            embedding_scale: 0.5,
            min_freq: 1,
            vocab_includes_knowledge: true,
            embeddings_file: None,
        }
    }
}

impl TrainConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.hidden_size == 0 || self.hidden_size % 2 != 0 {
            return bad(format!("hidden_size {} must be positive and even", self.hidden_size));
        }
        if self.heads == 0 || self.hidden_size % self.heads != 0 {
            return bad(format!("hidden_size {} is not divisible by {} heads", self.hidden_size, self.heads));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.max_fact_len == 0 || self.min_freq == 0 {
            return bad("batch_size, epochs, max_fact_len and min_freq must be positive".into());
        }
        if self.window_size < 2 {
            return bad(format!("window_size {} must be at least 2", self.window_size));
        }
        if self.blocks_per_level == 0 {
            return bad("blocks_per_level must be positive".into());
        }
        if !(self.embedding_scale.is_finite() && self.embedding_scale > 0.0) {
            return bad(format!("embedding_scale {} must be positive", self.embedding_scale));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!((cfg.hidden_size, cfg.batch_size, cfg.heads), (300, 128, 6));
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"hidden_size": 64, "fact_encoder": "bilstm"}"#).unwrap();
        assert_eq!(cfg.hidden_size, 64);
        assert_eq!(cfg.fact_encoder, FactEncoderKind::Bilstm);
        assert_eq!(cfg.learning_rate, 0.001);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"hiden_size": 64}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let heads = TrainConfig { hidden_size: 64, ..Default::default() };
        assert!(matches!(heads.validate(), Err(Error::Config(_))));
        let drop = TrainConfig { dropout: 1.0, ..Default::default() };
        assert!(drop.validate().is_err());
        let window = TrainConfig { window_size: 1, ..Default::default() };
        assert!(window.validate().is_err());
    }
}
