//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      6 bytes  "WPSEG1"
//! depth      u32
//! base       u32
//! config     u64      ModelConfig::fingerprint
//! step       u64
//! rng        32-byte ChaCha seed, u64 stream, u128 word position
//! weights    u64 tensor count, then per tensor: u64 length, f32 values
//! momentum   u8 flag; when 1, the same tensor list as the weights
//! checksum   32 bytes SHA-256 of everything above
//! ```
//!
//! Tensors follow [`SegModel::params`] order.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::unet::{ModelConfig, SegModel};
use crate::dataio::write_file;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"WPSEG1";

/// Position of a ChaCha8 stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub rng: RngState,
    pub weights: Vec<Vec<f32>>,
    pub momentum: Option<Vec<Vec<f32>>>,
}

impl ModelCheckpoint {
    pub fn capture(model: &SegModel, step: u64, rng: RngState, momentum: Option<&[Vec<f32>]>) -> Self {
        ModelCheckpoint {
            config: model.config(),
            step,
            rng,
            weights: model.params().iter().map(|p| p.value.clone()).collect(),
            momentum: momentum.map(<[Vec<f32>]>::to_vec),
        }
    }

    /// Rebuilds the network; shapes are checked against a fresh model of the same config.
    pub fn to_model(&self) -> Result<SegModel> {
        let mut model = SegModel::new(self.config, 0)?;
        let params = model.params_mut();
        if params.len() != self.weights.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, model has {}",
                self.weights.len(),
                params.len()
            )));
        }
        for (i, (p, w)) in params.into_iter().zip(&self.weights).enumerate() {
            if p.value.len() != w.len() {
                return Err(Error::Format(format!(
                    "tensor {i}: checkpoint length {} vs model {}",
                    w.len(),
                    p.value.len()
                )));
            }
            p.value.copy_from_slice(w);
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&(self.config.depth as u32).to_le_bytes());
        b.extend_from_slice(&(self.config.base_channels as u32).to_le_bytes());
        b.extend_from_slice(&self.config.fingerprint().to_le_bytes());
        b.extend_from_slice(&self.step.to_le_bytes());
        b.extend_from_slice(&self.rng.seed);
        b.extend_from_slice(&self.rng.stream.to_le_bytes());
        b.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        write_tensors(&mut b, &self.weights);
        match &self.momentum {
            Some(m) => {
                b.push(1);
                write_tensors(&mut b, m);
            }
            None => b.push(0),
        }
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("not a WPSEG1 checkpoint".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Format("checkpoint checksum mismatch".into()));
        }
        let mut r = Reader {
            buf: &body[MAGIC.len()..],
        };
        let config = ModelConfig {
            depth: r.u32()? as usize,
            base_channels: r.u32()? as usize,
        };
        config.validate()?;
        if r.u64()? != config.fingerprint() {
            return Err(Error::Format("config fingerprint mismatch".into()));
        }
        let step = r.u64()?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let rng = RngState {
            seed,
            stream: r.u64()?,
            word_pos: u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes")),
        };
        let weights = r.tensors()?;
        let momentum = match r.take(1)?[0] {
            0 => None,
            1 => Some(r.tensors()?),
            f => return Err(Error::Format(format!("bad momentum flag {f}"))),
        };
        if !r.buf.is_empty() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        Ok(ModelCheckpoint {
            config,
            step,
            rng,
            weights,
            momentum,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.to_path_buf(),
                producer: "train".into(),
            });
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn write_tensors(b: &mut Vec<u8>, tensors: &[Vec<f32>]) {
    b.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for t in tensors {
        b.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensors(&mut self) -> Result<Vec<Vec<f32>>> {
        let count = self.u64()? as usize;
        let mut out = Vec::new();
        for _ in 0..count {
            let len = self.u64()? as usize;
            let raw = self.take(len.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            out.push(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            );
        }
        Ok(out)
    }
}
