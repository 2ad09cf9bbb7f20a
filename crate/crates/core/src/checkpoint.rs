//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes  "SYNSUMCK"
//! version  u32
//! strings  u32 length + UTF-8: config digest, vocabulary hash, config JSON, selector JSON ("" if none)
//! step     u64
//! count    u32
//! records  count × { u32 length + UTF-8 path, u32 rank, rank × u64 dims, f64 payload }
//! ```
//!
//! All integers and floats are little-endian. Model tensors use their
//! parameter path; optimizer accumulators are stored under `opt/<path>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Summarizer;
use crate::params::{ModelConfig, ModelParams};
use crate::selector::ContentSelector;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SYNSUMCK";
pub const VERSION: u32 = 1;
const OPT_PREFIX: &str = "opt/";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub optimizer: Option<BTreeMap<String, Vec<f64>>>,
    pub selector: Option<ContentSelector>,
    pub step: u64,
    pub vocab_hash: String,
}

impl Checkpoint {
    pub fn from_model(
        model: &Summarizer,
        optimizer: Option<&BTreeMap<String, Vec<f64>>>,
        step: u64,
        vocab_hash: &str,
    ) -> Self {
        Checkpoint {
            config: model.config.clone(),
            params: model.params.clone(),
            optimizer: optimizer.cloned(),
            selector: model.selector.clone(),
            step,
            vocab_hash: vocab_hash.to_string(),
        }
    }

    pub fn into_model(self) -> Result<Summarizer> {
        let mut m = Summarizer::from_parts(self.config, self.params)?;
        m.selector = self.selector;
        Ok(m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.config.digest());
        put_str(&mut out, &self.vocab_hash);
        put_str(&mut out, &serde_json::to_string(&self.config)?);
        let sel = match &self.selector {
            Some(s) => serde_json::to_string(s)?,
            None => String::new(),
        };
        put_str(&mut out, &sel);
        out.extend_from_slice(&self.step.to_le_bytes());
        let opt_count = self.optimizer.as_ref().map_or(0, BTreeMap::len);
        let count = u32::try_from(self.params.len() + opt_count)
            .map_err(|_| Error::Checkpoint("too many tensors".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in self.params.iter() {
            put_record(&mut out, name, t.shape(), t.data());
        }
        if let Some(opt) = &self.optimizer {
            for (name, acc) in opt {
                let shape = self.params.get(name)?.shape().to_vec();
                put_record(&mut out, &format!("{OPT_PREFIX}{name}"), &shape, acc);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let digest = r.string()?;
        let vocab_hash = r.string()?;
        let config: ModelConfig = serde_json::from_str(&r.string()?)?;
        if config.digest() != digest {
            return Err(Error::Checkpoint("config digest does not match the stored config".into()));
        }
        let sel = r.string()?;
        let selector = if sel.is_empty() { None } else { Some(serde_json::from_str(&sel)?) };
        let step = r.u64()?;
        let count = r.u32()?;
        let mut params = BTreeMap::new();
        let mut opt = BTreeMap::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint("dimension overflow".into()))?);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
            }
            match name.strip_prefix(OPT_PREFIX) {
                Some(p) => {
                    opt.insert(p.to_string(), data);
                }
                None => {
                    params.insert(name, Tensor::new(shape, data)?);
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let params = ModelParams::from_map(params);
        params.check_layout(&config)?;
        Ok(Checkpoint {
            config,
            params,
            optimizer: if opt.is_empty() { None } else { Some(opt) },
            selector,
            step,
            vocab_hash,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Refuses a vocabulary whose hash differs from the one trained with.
    pub fn check_vocab(&self, vocab_hash: &str) -> Result<()> {
        if self.vocab_hash != vocab_hash {
            return Err(Error::VocabMismatch {
                expected: self.vocab_hash.clone(),
                found: vocab_hash.to_string(),
            });
        }
        Ok(())
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    put_str(out, name);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}
