use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FstError, Result};
use crate::segmentation::DEFAULT_SEGMENTS;

/// How the two streams are combined before pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Bi-directional cross-attention followed by a learned sigmoid gate.
    Gated,
    /// Per-position concatenation of both streams, projected back to `d_model`.
    Concat,
    /// Bi-directional cross-attention, combined by a fixed 0.5/0.5 average.
    XattnOnly,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::Gated, FusionMode::Concat, FusionMode::XattnOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Gated => "gated",
            FusionMode::Concat => "concat",
            FusionMode::XattnOnly => "xattn_only",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = FstError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gated" => Ok(FusionMode::Gated),
            "concat" => Ok(FusionMode::Concat),
            "xattn_only" => Ok(FusionMode::XattnOnly),
            other => Err(FstError::Config(format!("unknown fusion mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FstConfig {
    pub d_in: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers_embed: usize,
    pub n_layers_ssm: usize,
    pub d_ffn: usize,
    pub max_segments: usize,
    pub fusion_mode: FusionMode,
    pub dropout: f64,
}

impl Default for FstConfig {
    fn default() -> Self {
        Self::tiny()
    }
}

impl FstConfig {
    /// Small preset used by tests and desk-scale experiments.
    pub fn tiny() -> Self {
        FstConfig {
            d_in: 8,
            d_model: 16,
            n_heads: 2,
            n_layers_embed: 1,
            n_layers_ssm: 1,
            d_ffn: 32,
            max_segments: DEFAULT_SEGMENTS,
            fusion_mode: FusionMode::Gated,
            dropout: 0.0,
        }
    }

    /// Reconstruction sized for 768-dimensional extractor embeddings.
    pub fn full_scale() -> Self {
        FstConfig {
            d_in: 768,
            d_model: 256,
            n_heads: 8,
            n_layers_embed: 2,
            n_layers_ssm: 2,
            d_ffn: 1024,
            max_segments: DEFAULT_SEGMENTS,
            fusion_mode: FusionMode::Gated,
            dropout: 0.0,
        }
    }

    pub fn with_d_in(mut self, d_in: usize) -> Self {
        self.d_in = d_in;
        self
    }

    pub fn with_fusion(mut self, mode: FusionMode) -> Self {
        self.fusion_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_in", self.d_in),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ffn", self.d_ffn),
            ("max_segments", self.max_segments),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(FstError::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(FstError::Config(format!(
                "d_model ({}) must be divisible by n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(FstError::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// `key=value` lines in a fixed key order; used inside checkpoints.
    pub fn to_kv_text(&self) -> String {
        format!(
            "d_in={}\nd_model={}\nn_heads={}\nn_layers_embed={}\nn_layers_ssm={}\nd_ffn={}\nmax_segments={}\nfusion_mode={}\ndropout={}\n",
            self.d_in,
            self.d_model,
            self.n_heads,
            self.n_layers_embed,
            self.n_layers_ssm,
            self.d_ffn,
            self.max_segments,
            self.fusion_mode,
            self.dropout
        )
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = FstConfig::tiny();
        let mut seen = std::collections::HashSet::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| FstError::Config(format!("malformed config line {line:?}")))?;
            let int = || {
                value
                    .parse::<usize>()
                    .map_err(|_| FstError::Config(format!("{key}: not an integer: {value:?}")))
            };
            match key {
                "d_in" => cfg.d_in = int()?,
                "d_model" => cfg.d_model = int()?,
                "n_heads" => cfg.n_heads = int()?,
                "n_layers_embed" => cfg.n_layers_embed = int()?,
                "n_layers_ssm" => cfg.n_layers_ssm = int()?,
                "d_ffn" => cfg.d_ffn = int()?,
                "max_segments" => cfg.max_segments = int()?,
                "fusion_mode" => cfg.fusion_mode = value.parse()?,
                "dropout" => {
                    cfg.dropout = value
                        .parse()
                        .map_err(|_| FstError::Config(format!("dropout: not a number: {value:?}")))?
                }
                other => return Err(FstError::Config(format!("unknown config key {other:?}"))),
            }
            seen.insert(key.to_string());
        }
        if seen.len() != 9 {
            return Err(FstError::Config("config block is missing keys".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
