//! Versioned model checkpoints: a JSON manifest with the parameters embedded
//! as a base64 blob of little-endian `f64`.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const FORMAT: &str = "motion-fatigue-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Model family, e.g. `pinn-3cc` or `bilstm-id`.
    pub kind: String,
    pub architecture: Value,
    pub seed: u64,
    /// Free-form extras such as normalization statistics or joint names.
    pub metadata: Value,
    pub n_params: usize,
    pub params: String,
}

impl Checkpoint {
    pub fn new(
        kind: &str,
        architecture: &impl Serialize,
        seed: u64,
        metadata: Value,
        params: &[f64],
    ) -> Result<Self> {
        let bytes: Vec<u8> = params.iter().flat_map(|p| p.to_le_bytes()).collect();
        Ok(Self {
            format: FORMAT.into(),
            version: VERSION,
            kind: kind.into(),
            architecture: serde_json::to_value(architecture)?,
            seed,
            metadata,
            n_params: params.len(),
            params: STANDARD.encode(bytes),
        })
    }

    pub fn decode_params(&self) -> Result<Vec<f64>> {
        let bytes = STANDARD
            .decode(&self.params)
            .map_err(|e| Error::Checkpoint(format!("parameter blob: {e}")))?;
        if bytes.len() != self.n_params * 8 {
            return Err(Error::Checkpoint(format!(
                "parameter blob holds {} bytes, expected {}",
                bytes.len(),
                self.n_params * 8
            )));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }

    pub fn architecture<T: DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.architecture.clone())?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a `{kind}` checkpoint, found `{}`",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if ckpt.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", ckpt.format)));
        }
        if ckpt.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (this build reads {VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}
