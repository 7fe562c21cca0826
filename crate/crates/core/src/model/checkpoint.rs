//! `FSTCKPT1` checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content                                              |
//! |-------|------------------------------------------------------|
//! | 8     | magic `FSTCKPT1`                                     |
//! | 4     | `u32` length `L` of the config block                 |
//! | L     | UTF-8 `key=value` lines, see [`FstConfig::to_kv_text`] |
//! | 4·P   | parameters as `f32`, in [`FstModel::layout`] order    |
//!
//! `P` is determined by the config; trailing bytes are an error.

use std::path::Path;

use crate::error::{FstError, Result};
use crate::model::{FstConfig, FstModel};
use crate::numerics::nn::ParamStore;
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FSTCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: FstConfig,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn new(config: FstConfig, params: ParamStore<f32>) -> Result<Self> {
        let model = FstModel::new(config.clone())?;
        let params = ParamStore::from_tensors(model.layout(), params.tensors().to_vec())?;
        Ok(Checkpoint { config, params })
    }

    pub fn model(&self) -> Result<FstModel> {
        FstModel::new(self.config.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let text = self.config.to_kv_text();
        let mut out = Vec::with_capacity(16 + text.len() + 4 * self.params.numel());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for t in self.params.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses checkpoint bytes; `origin` only labels errors.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |msg: &str| FstError::format(origin, msg);
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let text = bytes
            .get(12..12 + len)
            .ok_or_else(|| bad("truncated config block"))?;
        let text = std::str::from_utf8(text).map_err(|_| bad("config block is not UTF-8"))?;
        let config = FstConfig::from_kv_text(text).map_err(|e| bad(&e.to_string()))?;
        let model = FstModel::new(config.clone())?;

        let payload = &bytes[12 + len..];
        if payload.len() != 4 * model.param_count() {
            return Err(bad(&format!(
                "expected {} parameter bytes, found {}",
                4 * model.param_count(),
                payload.len()
            )));
        }
        let mut floats = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let mut tensors = Vec::with_capacity(model.layout().len());
        for spec in model.layout().specs() {
            let n = spec.shape.iter().product();
            let data: Vec<f32> = floats.by_ref().take(n).collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(bad(&format!("non-finite value in {}", spec.name)));
            }
            tensors.push(Tensor::new(spec.shape.clone(), data)?);
        }
        let params = ParamStore::from_tensors(model.layout(), tensors)?;
        Ok(Checkpoint { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| FstError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| FstError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bytes_roundtrip_is_exact() {
        let model = FstModel::new(FstConfig::tiny()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ckpt = Checkpoint::new(model.config().clone(), model.init_params(&mut rng)).unwrap();
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(
            bytes.len(),
            12 + ckpt.config.to_kv_text().len() + 4 * model.param_count()
        );
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let model = FstModel::new(FstConfig::tiny()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bytes = Checkpoint::new(model.config().clone(), model.init_params(&mut rng))
            .unwrap()
            .to_bytes();
        let origin = Path::new("mem");

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        let err = Checkpoint::from_bytes(&bad_magic, origin).unwrap_err();
        assert!(err.to_string().contains("bad magic"));

        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4], origin).is_err());
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0, 0, 0, 0]);
        assert!(Checkpoint::from_bytes(&extra, origin).is_err());

        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(Checkpoint::from_bytes(&nan, origin).is_err());
    }
}
