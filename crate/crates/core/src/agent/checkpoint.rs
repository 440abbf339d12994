//! Binary parameter checkpoints.
//!
//! Layout (little endian): magic `CXCKPT`, format version `u32`, 32-byte
//! SHA-256 of the training config, the two network shapes as eight `u64`
//! each, then the policy parameters, log standard deviations and value
//! parameters, each as a `u64` length followed by raw `f64` bits.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::net::{NetShape, Network};
use super::ppo::AgentParams;
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"CXCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// SHA-256 of the JSON encoding of a config.
pub fn config_hash(config: &impl Serialize) -> Result<[u8; 32]> {
    let json = serde_json::to_vec(config)?;
    Ok(Sha256::digest(&json).into())
}

fn put_shape(out: &mut Vec<u8>, s: &NetShape) {
    for v in [s.rows, s.cols, s.channels, s.conv1_filters, s.conv2_filters, s.kernel, s.hidden, s.outputs] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
}

fn put_vec(out: &mut Vec<u8>, v: &[f64]) {
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_checkpoint(params: &AgentParams, hash: &[u8; 32]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(hash);
    put_shape(&mut out, &params.policy.shape());
    put_shape(&mut out, &params.value.shape());
    put_vec(&mut out, params.policy.params());
    put_vec(&mut out, &params.log_std);
    put_vec(&mut out, params.value.params());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() < n {
            return Err(Error::invalid("truncated checkpoint"));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn shape(&mut self) -> Result<NetShape> {
        let mut v = [0usize; 8];
        for slot in &mut v {
            *slot = self.u64()? as usize;
        }
        Ok(NetShape {
            rows: v[0],
            cols: v[1],
            channels: v[2],
            conv1_filters: v[3],
            conv2_filters: v[4],
            kernel: v[5],
            hidden: v[6],
            outputs: v[7],
        })
    }

    fn vec(&mut self) -> Result<Vec<f64>> {
        let len = self.u64()? as usize;
        if len > self.bytes.len() / 8 {
            return Err(Error::invalid("truncated checkpoint"));
        }
        Ok(self
            .take(len * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(AgentParams, [u8; 32])> {
    let mut r = Reader { bytes };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::invalid("not a checkpoint"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::invalid(format!("unsupported checkpoint version {version}")));
    }
    let hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let (ps, vs) = (r.shape()?, r.shape()?);
    let policy = Network::from_params(ps, r.vec()?)?;
    let log_std = r.vec()?;
    let value = Network::from_params(vs, r.vec()?)?;
    if log_std.len() != ps.outputs || !r.bytes.is_empty() {
        return Err(Error::invalid("inconsistent checkpoint"));
    }
    Ok((AgentParams { policy, log_std, value }, hash))
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &AgentParams, hash: &[u8; 32]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params, hash)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(AgentParams, [u8; 32])> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::PpoConfig;
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut params = AgentParams::init(6, 5, 3, -0.3, &mut rng).unwrap();
        params.log_std[1] = f64::MIN_POSITIVE;
        let hash = config_hash(&PpoConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        save_checkpoint(&path, &params, &hash).unwrap();
        let (back, h) = load_checkpoint(&path).unwrap();
        assert_eq!(h, hash);
        assert_eq!(back, params);
        assert_eq!(encode_checkpoint(&back, &h), fs::read(&path).unwrap());
    }

    #[test]
    fn corrupt_input_rejected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let params = AgentParams::init(3, 3, 1, 0.0, &mut rng).unwrap();
        let bytes = encode_checkpoint(&params, &[0; 32]);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_checkpoint(b"garbage").is_err());
        let mut wrong = bytes.clone();
        wrong[6] = 9;
        assert!(decode_checkpoint(&wrong).is_err());
    }

    #[test]
    fn hash_tracks_config() {
        let a = config_hash(&PpoConfig::default()).unwrap();
        let b = config_hash(&PpoConfig { clip_epsilon: 0.3, ..Default::default() }).unwrap();
        assert_ne!(a, b);
    }
}
