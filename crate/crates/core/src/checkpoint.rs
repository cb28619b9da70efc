//! `SAUCKPT1` binary container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"SAUCKPT1"                       magic; the trailing byte is the version
//! u32                               record count
//! per record:
//!   u16 + UTF-8 bytes               name
//!   u8                              dtype (0 = f64, 1 = u8)
//!   u8 + rank × u64                 shape
//!   payload                         row-major values
//! [u8; 32]                          SHA-256 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::pruning::SparsityMask;
use crate::saliency::SaliencyMap;
use crate::sau::{LayerPlan, SauConfig, SauPlan};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC_PREFIX: &[u8; 7] = b"SAUCKPT";
pub const VERSION: u8 = b'1';
const HASH_LEN: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version `{0}`")]
    UnknownVersion(char),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checkpoint content hash does not match")]
    HashMismatch,
    #[error("invalid record `{name}`: {reason}")]
    InvalidRecord { name: String, reason: String },
    #[error("checkpoint has no record `{0}`")]
    MissingRecord(String),
}

fn invalid(name: &str, reason: impl Into<String>) -> CheckpointError {
    CheckpointError::InvalidRecord {
        name: name.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    F64(Tensor<f64>),
    U8(Tensor<u8>),
}

impl Record {
    fn shape(&self) -> &[usize] {
        match self {
            Record::F64(t) => t.shape(),
            Record::U8(t) => t.shape(),
        }
    }
}

/// Named tensors in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Bundle {
    records: IndexMap<String, Record>,
}

impl Bundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.records.contains_key(name)
    }

    pub fn insert(&mut self, name: &str, record: Record) -> Result<()> {
        if name.is_empty() || name.len() > u16::MAX as usize {
            return Err(invalid(name, "name must be 1..=65535 bytes").into());
        }
        if record.shape().len() > u8::MAX as usize {
            return Err(invalid(name, "rank exceeds 255").into());
        }
        self.records.insert(name.to_string(), record);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Record> {
        self.records
            .get(name)
            .ok_or_else(|| CheckpointError::MissingRecord(name.to_string()).into())
    }

    pub fn f64(&self, name: &str) -> Result<&Tensor<f64>> {
        match self.get(name)? {
            Record::F64(t) => Ok(t),
            Record::U8(_) => Err(invalid(name, "expected f64 data").into()),
        }
    }

    pub fn u8(&self, name: &str) -> Result<&Tensor<u8>> {
        match self.get(name)? {
            Record::U8(t) => Ok(t),
            Record::F64(_) => Err(invalid(name, "expected u8 data").into()),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC_PREFIX);
        out.push(VERSION);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for (name, record) in &self.records {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(match record {
                Record::F64(_) => 0,
                Record::U8(_) => 1,
            });
            out.push(record.shape().len() as u8);
            for &d in record.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match record {
                Record::F64(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                Record::U8(t) => out.extend_from_slice(t.data()),
            }
        }
        let hash = Sha256::digest(&out);
        out.extend_from_slice(&hash);
        out
    }

    /// Checks magic and version, parses the structure, then verifies the hash.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 8 {
            return if MAGIC_PREFIX.starts_with(bytes) {
                Err(CheckpointError::Truncated("magic"))
            } else {
                Err(CheckpointError::BadMagic)
            };
        }
        if &bytes[..7] != MAGIC_PREFIX {
            return Err(CheckpointError::BadMagic);
        }
        if bytes[7] != VERSION {
            return Err(CheckpointError::UnknownVersion(bytes[7] as char));
        }
        let mut r = Reader { bytes, pos: 8 };
        let count = u32::from_le_bytes(r.take("record count", 4)?.try_into().unwrap());
        let mut records = IndexMap::new();
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take("name length", 2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take("name", len)?)
                .map_err(|_| invalid("?", "name is not UTF-8"))?
                .to_string();
            let dtype = r.take("dtype", 1)?[0];
            let rank = r.take("rank", 1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = u64::from_le_bytes(r.take("shape", 8)?.try_into().unwrap());
                shape.push(usize::try_from(d).map_err(|_| invalid(&name, "dimension overflows usize"))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| invalid(&name, "element count overflows"))?;
            let record = match dtype {
                0 => {
                    let raw = r.take("payload", n.checked_mul(8).ok_or(CheckpointError::Truncated("payload"))?)?;
                    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                    Record::F64(Tensor::from_vec(shape, data).map_err(|e| invalid(&name, e.to_string()))?)
                }
                1 => {
                    let data = r.take("payload", n)?.to_vec();
                    Record::U8(Tensor::from_vec(shape, data).map_err(|e| invalid(&name, e.to_string()))?)
                }
                other => return Err(invalid(&name, format!("unknown dtype {other}"))),
            };
            if records.insert(name.clone(), record).is_some() {
                return Err(invalid(&name, "duplicate record"));
            }
        }
        let body_end = r.pos;
        let stored = r.take("content hash", HASH_LEN)?;
        if r.pos != bytes.len() {
            return Err(invalid("?", "trailing bytes after content hash"));
        }
        if Sha256::digest(&bytes[..body_end]).as_slice() != stored {
            return Err(CheckpointError::HashMismatch);
        }
        Ok(Self { records })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(Self::from_bytes(&bytes)?)
    }

    pub fn put_json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<()> {
        let bytes = serde_json::to_vec(value).map_err(|e| Error::Format(e.to_string()))?;
        let len = bytes.len();
        self.insert(name, Record::U8(Tensor::from_vec(vec![len], bytes)?))
    }

    pub fn json<D: DeserializeOwned>(&self, name: &str) -> Result<D> {
        serde_json::from_slice(self.u8(name)?.data()).map_err(|e| invalid(name, e.to_string()).into())
    }

    pub fn put_scalar(&mut self, name: &str, value: f64) -> Result<()> {
        self.insert(name, Record::F64(Tensor::from_vec(vec![], vec![value])?))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let t = self.f64(name)?;
        if t.len() != 1 {
            return Err(invalid(name, "expected a single value").into());
        }
        Ok(t.data()[0])
    }

    /// Parameters under `param/<name>`, with prunability under `param.prunable/<name>`.
    pub fn put_params<T: Scalar>(&mut self, params: &ParamSet<T>) -> Result<()> {
        for (name, p) in params.iter() {
            self.insert(&format!("param/{name}"), Record::F64(to_f64(&p.tensor)))?;
            self.insert(
                &format!("param.prunable/{name}"),
                Record::U8(Tensor::from_vec(vec![], vec![u8::from(p.prunable)])?),
            )?;
        }
        Ok(())
    }

    pub fn params<T: Scalar>(&self) -> Result<ParamSet<T>> {
        let mut out = ParamSet::new();
        for name in self.names().filter_map(|n| n.strip_prefix("param/")) {
            let prunable = self.u8(&format!("param.prunable/{name}"))?.data() == [1];
            out.insert(name, from_f64(self.f64(&format!("param/{name}"))?), prunable)?;
        }
        if out.is_empty() {
            return Err(CheckpointError::MissingRecord("param/*".into()).into());
        }
        Ok(out)
    }

    pub fn put_mask(&mut self, mask: &SparsityMask) -> Result<()> {
        for (name, m) in mask.layers() {
            self.insert(&format!("mask/{name}"), Record::U8(m.clone()))?;
        }
        self.put_scalar("mask_target", mask.target())
    }

    pub fn mask(&self) -> Result<SparsityMask> {
        let layers = self
            .names()
            .filter_map(|n| n.strip_prefix("mask/"))
            .map(|name| Ok((name.to_string(), self.u8(&format!("mask/{name}"))?.clone())))
            .collect::<Result<IndexMap<_, _>>>()?;
        SparsityMask::new(layers, self.scalar("mask_target")?)
    }

    pub fn put_saliency<T: Scalar>(&mut self, saliency: &SaliencyMap<T>) -> Result<()> {
        for (name, s) in saliency.layers() {
            self.insert(&format!("saliency/{name}"), Record::F64(to_f64(s)))?;
        }
        self.put_scalar("saliency_samples", saliency.samples() as f64)
    }

    pub fn saliency<T: Scalar>(&self) -> Result<SaliencyMap<T>> {
        let layers = self
            .names()
            .filter_map(|n| n.strip_prefix("saliency/"))
            .map(|name| Ok((name.to_string(), from_f64(self.f64(&format!("saliency/{name}"))?))))
            .collect::<Result<IndexMap<_, _>>>()?;
        SaliencyMap::new(layers, self.scalar("saliency_samples")? as usize)
    }

    /// Gate, weights and per-layer scalars of a plan. A missing threshold is stored as NaN.
    pub fn put_plan<T: Scalar>(&mut self, plan: &SauPlan<T>) -> Result<()> {
        for (name, l) in &plan.layers {
            self.insert(&format!("plan.gate/{name}"), Record::U8(l.gate.clone()))?;
            self.insert(&format!("plan.weight/{name}"), Record::F64(to_f64(&l.redistribution)))?;
            self.put_scalar(&format!("plan.pruned_importance/{name}"), l.pruned_importance.as_f64())?;
            self.put_scalar(
                &format!("plan.threshold/{name}"),
                l.threshold.map_or(f64::NAN, |t| t.as_f64()),
            )?;
            self.insert(
                &format!("plan.no_survivors/{name}"),
                Record::U8(Tensor::from_vec(vec![], vec![u8::from(l.no_survivors)])?),
            )?;
        }
        self.put_json("plan.config", &plan.config)?;
        self.insert("plan.mask_hash", Record::U8(Tensor::from_vec(vec![HASH_LEN], plan.mask_hash.to_vec())?))?;
        self.insert(
            "plan.saliency_hash",
            Record::U8(Tensor::from_vec(vec![HASH_LEN], plan.saliency_hash.to_vec())?),
        )
    }

    pub fn plan<T: Scalar>(&self) -> Result<SauPlan<T>> {
        let hash = |name: &str| -> Result<[u8; 32]> {
            self.u8(name)?
                .data()
                .try_into()
                .map_err(|_| invalid(name, "expected 32 bytes").into())
        };
        let config: SauConfig = self.json("plan.config")?;
        let mut layers = IndexMap::new();
        for name in self.names().filter_map(|n| n.strip_prefix("plan.gate/")) {
            let threshold = self.scalar(&format!("plan.threshold/{name}"))?;
            layers.insert(
                name.to_string(),
                LayerPlan {
                    gate: self.u8(&format!("plan.gate/{name}"))?.clone(),
                    redistribution: from_f64(self.f64(&format!("plan.weight/{name}"))?),
                    pruned_importance: T::lit(self.scalar(&format!("plan.pruned_importance/{name}"))?),
                    threshold: (!threshold.is_nan()).then(|| T::lit(threshold)),
                    no_survivors: self.u8(&format!("plan.no_survivors/{name}"))?.data() == [1],
                },
            );
        }
        Ok(SauPlan {
            config,
            layers,
            mask_hash: hash("plan.mask_hash")?,
            saliency_hash: hash("plan.saliency_hash")?,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, what: &'static str, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated(what))?;
        if end > self.bytes.len() {
            return Err(CheckpointError::Truncated(what));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

fn to_f64<T: Scalar>(t: &Tensor<T>) -> Tensor<f64> {
    t.map(|v| v.as_f64())
}

fn from_f64<T: Scalar>(t: &Tensor<f64>) -> Tensor<T> {
    t.map(T::lit)
}

/// Whole-file write through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming into {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Bundle {
        let mut b = Bundle::new();
        b.insert("w", Record::F64(Tensor::from_vec(vec![2, 2], vec![1.5, -0.0, f64::MIN_POSITIVE, 3.0]).unwrap()))
            .unwrap();
        b.insert("m", Record::U8(Tensor::from_vec(vec![3], vec![0, 1, 1]).unwrap())).unwrap();
        b.put_scalar("s", 0.25).unwrap();
        b
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let b = sample();
        let bytes = b.to_bytes();
        assert_eq!(&bytes[..8], b"SAUCKPT1");
        let back = Bundle::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.f64("w").unwrap().data()[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(back.u8("m").unwrap().data(), &[0, 1, 1]);
        assert_eq!(back.scalar("s").unwrap(), 0.25);
    }

    #[test]
    fn distinct_load_errors() {
        let bytes = sample().to_bytes();
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(Bundle::from_bytes(&flipped), Err(CheckpointError::HashMismatch)));
        let mut version = bytes.clone();
        version[7] = b'2';
        assert!(matches!(Bundle::from_bytes(&version), Err(CheckpointError::UnknownVersion('2'))));
        assert!(matches!(Bundle::from_bytes(b"PK\x03\x04garbage"), Err(CheckpointError::BadMagic)));
        for cut in [3, 10, 30, bytes.len() - 1] {
            assert!(
                matches!(Bundle::from_bytes(&bytes[..cut]), Err(CheckpointError::Truncated(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn typed_accessors_check_dtype() {
        let b = sample();
        assert!(b.u8("w").is_err());
        assert!(b.f64("m").is_err());
        assert!(matches!(b.get("nope"), Err(Error::Checkpoint(CheckpointError::MissingRecord(_)))));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        sample().save(&path).unwrap();
        assert_eq!(Bundle::load(&path).unwrap(), sample());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
