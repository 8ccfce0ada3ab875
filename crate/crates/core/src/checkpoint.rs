//! Binary checkpoint format.
//!
//! Layout (all integers little endian):
//!
//! ```text
//! magic        8 bytes  "CFMODEL\0"
//! version      u32
//! config       u32 length + JSON ModelConfig
//! label digest u32 length + ASCII hex
//! count        u32
//! per tensor   u32 name length + name, u8 trainable, u32 rank,
//!              rank × u64 dims, numel × f32
//! ```

use std::fs;
use std::io;
use std::path::Path;

use contactnn::Tensor;
use thiserror::Error;

use crate::model::{ModelConfig, ModelError, ModelParams, Parameter};

pub const MAGIC: &[u8; 8] = b"CFMODEL\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint is truncated or corrupt: {0}")]
    Corrupt(String),
    #[error("label index digest {found} does not match expected {expected}")]
    LabelMismatch { expected: String, found: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub label_digest: String,
    pub params: ModelParams<f32>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| {
            CheckpointError::Corrupt(format!("need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn bytes(&mut self) -> Result<&'a [u8], CheckpointError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        String::from_utf8(self.bytes()?.to_vec())
            .map_err(|_| CheckpointError::Corrupt("invalid UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn new(
        config: ModelConfig,
        label_digest: impl Into<String>,
        params: ModelParams<f32>,
    ) -> Result<Self, ModelError> {
        params.check(&config)?;
        Ok(Self {
            config,
            label_digest: label_digest.into(),
            params,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.params.numel() * 4 + 1024);
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        let config = serde_json::to_vec(&self.config).expect("config serializes");
        put_bytes(&mut out, &config);
        put_bytes(&mut out, self.label_digest.as_bytes());
        put_u32(&mut out, self.params.len() as u32);
        for p in self.params.iter() {
            put_bytes(&mut out, p.name.as_bytes());
            out.push(u8::from(p.trainable));
            put_u32(&mut out, p.tensor.shape().len() as u32);
            for &d in p.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len()).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let config: ModelConfig = serde_json::from_slice(r.bytes()?)
            .map_err(|e| CheckpointError::Corrupt(format!("config: {e}")))?;
        config.validate()?;
        let label_digest = r.string()?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = r.string()?;
            let trainable = r.u8()? != 0;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel =
                numel.ok_or_else(|| CheckpointError::Corrupt(format!("{name}: shape overflow")))?;
            let raw = r.take(
                numel
                    .checked_mul(4)
                    .ok_or_else(|| CheckpointError::Corrupt("size overflow".into()))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let tensor =
                Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            params.push(Parameter {
                name,
                tensor,
                trainable,
            });
        }
        if r.pos != buf.len() {
            return Err(CheckpointError::Corrupt("trailing bytes".into()));
        }
        let params = ModelParams::from_parameters(params)?;
        params.check(&config)?;
        Ok(Self {
            config,
            label_digest,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Rejects a checkpoint trained against a different label index or, when
    /// given, a different architecture.
    pub fn verify(
        &self,
        label_digest: &str,
        config: Option<&ModelConfig>,
    ) -> Result<(), CheckpointError> {
        if self.label_digest != label_digest {
            return Err(CheckpointError::LabelMismatch {
                expected: label_digest.to_string(),
                found: self.label_digest.clone(),
            });
        }
        if let Some(c) = config {
            if c != &self.config {
                return Err(ModelError::ConfigMismatch(format!(
                    "checkpoint config {:?} differs from requested {:?}",
                    self.config, c
                ))
                .into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let config = ModelConfig {
            embed_dim: 8,
            n_heads: 2,
            n_layers: 2,
            ffn_dim: 16,
            n_classes: 3,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&config, 42).unwrap();
        Checkpoint::new(config, "abc123", params).unwrap()
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(b"nope"),
            Err(CheckpointError::BadMagic)
        ));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Corrupt(_))
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&extra),
            Err(CheckpointError::Corrupt(_))
        ));
        let mut ver = bytes;
        ver[8] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&ver),
            Err(CheckpointError::UnsupportedVersion(9))
        ));
    }

    #[test]
    fn verify_checks_labels_and_config() {
        let ck = sample();
        assert!(ck.verify("abc123", Some(&ck.config)).is_ok());
        assert!(matches!(
            ck.verify("zzz", None),
            Err(CheckpointError::LabelMismatch { .. })
        ));
        let other = ModelConfig {
            dropout: 0.2,
            ..ck.config.clone()
        };
        assert!(matches!(
            ck.verify("abc123", Some(&other)),
            Err(CheckpointError::Model(_))
        ));
    }

    #[test]
    fn params_must_match_config() {
        let ck = sample();
        let other = ModelConfig {
            n_classes: 7,
            ..ck.config.clone()
        };
        assert!(Checkpoint::new(other, "x", ck.params).is_err());
    }
}
