//! Versioned binary tensor container used for model and policy checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic "GLTC" | u32 format version | u64 config hash
//! u64 config length | config JSON bytes
//! u64 tensor count
//! per tensor (sorted by name):
//!   u64 name length | name bytes | u64 ndim | u64 dims... | f64 payload (row-major)
//! ```
//!
//! The config hash is FNV-1a over the config JSON; loading verifies it, the
//! magic, the version, and every payload length, and refuses mismatches.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::fnv1a64;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: [u8; 4] = *b"GLTC";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named tensors plus the JSON-encoded config of the model they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorStore {
    config_json: String,
    tensors: BTreeMap<String, Tensor>,
}

impl TensorStore {
    pub fn new(config_json: impl Into<String>) -> Self {
        TensorStore {
            config_json: config_json.into(),
            tensors: BTreeMap::new(),
        }
    }

    pub fn config_json(&self) -> &str {
        &self.config_json
    }

    pub fn config_hash(&self) -> u64 {
        fnv1a64(self.config_json.as_bytes())
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::DimensionMismatch {
                context: "TensorStore::insert",
                expected: len,
                actual: data.len(),
            });
        }
        self.tensors.insert(name.into(), Tensor { shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::format(format!("missing tensor {name:?}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// FNV-1a over config JSON plus every tensor payload in name order;
    /// identifies both the architecture and the exact parameter values.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.config_json.len());
        bytes.extend_from_slice(self.config_json.as_bytes());
        for (name, tensor) in &self.tensors {
            bytes.extend_from_slice(name.as_bytes());
            for &v in &tensor.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fnv1a64(&bytes)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.config_hash().to_le_bytes())?;
        w.write_all(&(self.config_json.len() as u64).to_le_bytes())?;
        w.write_all(self.config_json.as_bytes())?;
        w.write_all(&(self.tensors.len() as u64).to_le_bytes())?;
        for (name, tensor) in &self.tensors {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(tensor.shape.len() as u64).to_le_bytes())?;
            for &d in &tensor.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in &tensor.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format("checkpoint truncated before magic"))?;
        if magic != MAGIC {
            return Err(Error::format("not a checkpoint file (bad magic)"));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::format(format!(
                "unsupported checkpoint format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let stored_hash = read_u64(r)?;
        let config_len = read_u64(r)? as usize;
        let mut config_bytes = vec![0u8; config_len];
        r.read_exact(&mut config_bytes)
            .map_err(|_| Error::format("checkpoint truncated in config"))?;
        if fnv1a64(&config_bytes) != stored_hash {
            return Err(Error::format("checkpoint config hash mismatch"));
        }
        let config_json = String::from_utf8(config_bytes)
            .map_err(|_| Error::format("checkpoint config is not UTF-8"))?;
        let count = read_u64(r)? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u64(r)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)
                .map_err(|_| Error::format("checkpoint truncated in tensor name"))?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::format("tensor name is not UTF-8"))?;
            let ndim = read_u64(r)? as usize;
            if ndim > 8 {
                return Err(Error::format(format!("implausible tensor rank {ndim}")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(r)? as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(read_f64(r)?);
            }
            tensors.insert(name, Tensor { shape, data });
        }
        Ok(TensorStore {
            config_json,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let store = Self::read_from(&mut file)?;
        Ok(store)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format("checkpoint truncated"))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format("checkpoint truncated"))?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format("checkpoint truncated"))?;
    Ok(f64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> TensorStore {
        let mut store = TensorStore::new(r#"{"d_z":2,"hidden":[8,8]}"#);
        store
            .insert("encoder.mu.layer0.weight", vec![2, 3], vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.625])
            .unwrap();
        store
            .insert("encoder.mu.layer0.bias", vec![2], vec![1e-300, -0.0])
            .unwrap();
        store
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let store = sample_store();
        let mut bytes = Vec::new();
        store.write_to(&mut bytes).unwrap();
        let loaded = TensorStore::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(store, loaded);
        let t = loaded.get("encoder.mu.layer0.bias").unwrap();
        assert_eq!(t.data[0].to_bits(), 1e-300_f64.to_bits());
        assert_eq!(t.data[1].to_bits(), (-0.0_f64).to_bits());
    }

    #[test]
    fn serialization_is_deterministic() {
        let store = sample_store();
        let mut a = Vec::new();
        let mut b = Vec::new();
        store.write_to(&mut a).unwrap();
        store.write_to(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn version_mismatch_is_refused() {
        let store = sample_store();
        let mut bytes = Vec::new();
        store.write_to(&mut bytes).unwrap();
        bytes[4] = 99; // low byte of the version field
        let err = TensorStore::read_from(&mut bytes.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn config_corruption_is_detected() {
        let store = sample_store();
        let mut bytes = Vec::new();
        store.write_to(&mut bytes).unwrap();
        // First config byte sits after magic+version+hash+len = 4+4+8+8.
        bytes[24] ^= 0xff;
        let err = TensorStore::read_from(&mut bytes.as_slice()).unwrap_err();
        assert!(err.to_string().contains("hash mismatch"), "{err}");
    }

    #[test]
    fn truncation_is_an_error() {
        let store = sample_store();
        let mut bytes = Vec::new();
        store.write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 5);
        assert!(TensorStore::read_from(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn shape_payload_mismatch_is_rejected() {
        let mut store = TensorStore::new("{}");
        assert!(store.insert("t", vec![2, 2], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn fingerprint_tracks_parameter_values() {
        let a = sample_store();
        let mut b = sample_store();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.insert("encoder.mu.layer0.bias", vec![2], vec![1e-300, 1.0])
            .unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
