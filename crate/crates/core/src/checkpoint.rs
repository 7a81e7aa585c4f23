//! Self-describing binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! "FCRLCKPT"  u32 version  u64 header_len  header JSON
//! u64 n  n × f64  32-byte SHA-256 of everything before it
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a save/load cycle is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FCRLCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    FcrlEncoder,
    Cnp,
    DecoderHead,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::FcrlEncoder => "fcrl_encoder",
            ModelKind::Cnp => "cnp",
            ModelKind::DecoderHead => "decoder_head",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model_kind: ModelKind,
    /// Model-specific shape description (architecture strings, critic kind, ...).
    pub architecture: serde_json::Value,
    pub config_hash: String,
    pub seed: u64,
    pub num_values: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub state: Vec<f64>,
}

impl Checkpoint {
    pub fn new(
        model_kind: ModelKind,
        architecture: serde_json::Value,
        config_hash: &str,
        seed: u64,
        state: Vec<f64>,
    ) -> Self {
        Self {
            header: CheckpointHeader {
                model_kind,
                architecture,
                config_hash: config_hash.to_string(),
                seed,
                num_values: state.len(),
            },
            state,
        }
    }

    pub fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.header.model_kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {} checkpoint, found {}",
                kind.as_str(),
                self.header.model_kind.as_str()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + 4 + 8 + header.len() + 8 + 8 * self.state.len() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.state.len() as u64).to_le_bytes());
        for v in &self.state {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 8 + 4 + 8 + 8 + 32 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic or too short)"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch (file corrupted or truncated)"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e + 8 <= body.len())
            .ok_or_else(|| bad("header length exceeds file size"))?;
        let header: CheckpointHeader = serde_json::from_slice(&body[20..header_end])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let n = u64::from_le_bytes(body[header_end..header_end + 8].try_into().unwrap()) as usize;
        let payload = &body[header_end + 8..];
        if payload.len() != n * 8 || n != header.num_values {
            return Err(bad("state length does not match header"));
        }
        let state = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { header, state })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::MissingArtifact(format!("checkpoint {} not found", path.display()))
            }
            _ => Error::io(path, e),
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let state = vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -7.25, f64::EPSILON];
        Checkpoint::new(
            ModelKind::Cnp,
            serde_json::json!({"h": "2 → 4 → 4"}),
            "deadbeef",
            42,
            state,
        )
    }

    #[test]
    fn round_trip_preserves_bits() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.header, c.header);
        let bits = |s: &[f64]| s.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.state), bits(&c.state));
    }

    #[test]
    fn file_round_trip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        sample().save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), sample());
        let err = Checkpoint::load(&dir.path().join("nope")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() - 40;
        bytes[mid] ^= 1;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
    }

    #[test]
    fn kind_check() {
        let c = sample();
        assert!(c.expect_kind(ModelKind::Cnp).is_ok());
        assert!(c.expect_kind(ModelKind::FcrlEncoder).is_err());
    }
}
