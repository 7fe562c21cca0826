//! Flat JSON run configuration: model and training fields side by side,
//! named exactly as in `FstConfig` and `TrainConfig`.

use std::path::Path;

use fst_core::train::TrainConfig;
use fst_core::{FstConfig, FstError, FusionMode, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Taken from the data when absent.
    pub d_in: Option<usize>,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers_embed: usize,
    pub n_layers_ssm: usize,
    pub d_ffn: usize,
    pub max_segments: usize,
    pub fusion_mode: FusionMode,
    pub dropout: f64,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = FstConfig::tiny();
        let t = TrainConfig::default();
        RunConfig {
            d_in: None,
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_layers_embed: m.n_layers_embed,
            n_layers_ssm: m.n_layers_ssm,
            d_ffn: m.d_ffn,
            max_segments: m.max_segments,
            fusion_mode: m.fusion_mode,
            dropout: m.dropout,
            epochs: t.epochs,
            lr: t.lr,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            patience: t.patience,
            seed: t.seed,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| FstError::Config(format!("{}: {e}", origin.display())))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| FstError::Config(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text, p)
            }
        }
    }

    /// Splits into validated model and training configurations.
    pub fn resolve(&self, data_dim: usize) -> Result<(FstConfig, TrainConfig)> {
        let d_in = self.d_in.unwrap_or(data_dim);
        if d_in != data_dim {
            return Err(FstError::Config(format!(
                "config d_in is {d_in} but the data has dimension {data_dim}"
            )));
        }
        let model = FstConfig {
            d_in,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers_embed: self.n_layers_embed,
            n_layers_ssm: self.n_layers_ssm,
            d_ffn: self.d_ffn,
            max_segments: self.max_segments,
            fusion_mode: self.fusion_mode,
            dropout: self.dropout,
        };
        let train = TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            patience: self.patience,
            seed: self.seed,
        };
        model.validate()?;
        train.validate()?;
        Ok((model, train))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_fills_defaults() {
        let c = RunConfig::parse(r#"{"epochs": 3, "fusion_mode": "concat"}"#, Path::new("c")).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.fusion_mode, FusionMode::Concat);
        assert_eq!(c.d_model, FstConfig::tiny().d_model);
        let (m, t) = c.resolve(32).unwrap();
        assert_eq!(m.d_in, 32);
        assert_eq!(t.epochs, 3);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse(r#"{"epochz": 3}"#, Path::new("c")).unwrap_err();
        assert!(err.to_string().contains("epochz"), "{err}");
    }

    #[test]
    fn mismatched_dimension_and_zero_epochs_rejected() {
        let c = RunConfig {
            d_in: Some(8),
            ..Default::default()
        };
        assert!(c.resolve(32).is_err());
        let c = RunConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(c.resolve(32).is_err());
    }

    #[test]
    fn every_field_roundtrips_through_json() {
        let c = RunConfig {
            d_in: Some(4),
            seed: 9,
            ..Default::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::parse(&text, Path::new("c")).unwrap(), c);
    }
}
