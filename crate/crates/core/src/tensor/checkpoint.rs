//! `RWNT` tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "RWNT" | version: u8 | dtype: u8 (4 = f32, 8 = f64)
//! n_meta: u32    | { key_len: u32, key, value_len: u32, value }*
//! n_tensors: u32 | { name_len: u32, name, rank: u32, dims: u64 * rank, values }*
//! ```
//!
//! Entries are written in name order. Model checkpoints namespace their
//! tensors: `param/<name>`, `bn/<layer>/{mean,var}`, `optim/{m,v,v_max}/<name>`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::{Amsgrad, BnStats, OptimizerState, ParamStore, Real, SlotState, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RWNT";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            4 => Some(DType::F32),
            8 => Some(DType::F64),
            _ => None,
        }
    }
}

/// In-memory form of a checkpoint. Values are held as `f64`, which
/// represents every `f32` exactly, so both precisions round-trip bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub dtype: DType,
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor<f64>>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!("truncated file while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{what} is not valid UTF-8")))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn new(dtype: DType) -> Self {
        Self {
            dtype,
            meta: BTreeMap::new(),
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert<R: Real>(&mut self, name: impl Into<String>, t: &Tensor<R>) {
        self.tensors.insert(name.into(), t.cast());
    }

    pub fn get<R: Real>(&self, name: &str) -> Result<Tensor<R>> {
        self.tensors
            .get(name)
            .map(|t| t.cast())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.push(self.dtype.code());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match self.dtype {
                DType::F32 => t
                    .data()
                    .iter()
                    .for_each(|&x| out.extend_from_slice(&(x as f32).to_le_bytes())),
                DType::F64 => t.data().iter().for_each(|&x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic, not an RWNT file".into()));
        }
        let version = r.u8("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let code = r.u8("dtype")?;
        let dtype = DType::from_code(code).ok_or_else(|| Error::Checkpoint(format!("unknown dtype code {code}")))?;
        let mut ck = Checkpoint::new(dtype);
        for _ in 0..r.u32("meta count")? {
            let k = r.string("meta key")?;
            let v = r.string("meta value")?;
            ck.meta.insert(k, v);
        }
        for _ in 0..r.u32("tensor count")? {
            let name = r.string("tensor name")?;
            let rank = r.u32("rank")? as usize;
            let shape = (0..rank)
                .map(|_| r.u64("dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match dtype {
                DType::F32 => r
                    .take(n * 4, &name)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
                DType::F64 => r
                    .take(n * 8, &name)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            };
            ck.tensors.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
        }
        Ok(ck)
    }

    /// Write to `path` via a temporary file and rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    pub fn put_params<R: Real>(&mut self, store: &ParamStore<R>) {
        for (_, p) in store.iter() {
            self.insert(format!("param/{}", p.name), &p.value);
        }
    }

    /// Copy every parameter of `store` from this checkpoint; shapes must match.
    pub fn load_params<R: Real>(&self, store: &mut ParamStore<R>) -> Result<()> {
        let names: Vec<String> = store.names().map(str::to_string).collect();
        for name in names {
            let t = self.get::<R>(&format!("param/{name}"))?;
            store.assign(&name, t)?;
        }
        Ok(())
    }

    pub fn put_bn<R: Real>(&mut self, layer: &str, stats: &BnStats<R>) {
        let c = stats.mean.len();
        self.insert(format!("bn/{layer}/mean"), &Tensor::new([c], stats.mean.clone()).unwrap());
        self.insert(format!("bn/{layer}/var"), &Tensor::new([c], stats.var.clone()).unwrap());
    }

    pub fn load_bn<R: Real>(&self, layer: &str, stats: &mut BnStats<R>) -> Result<()> {
        let mean = self.get::<R>(&format!("bn/{layer}/mean"))?;
        let var = self.get::<R>(&format!("bn/{layer}/var"))?;
        if mean.numel() != stats.mean.len() {
            return Err(Error::ShapeMismatch {
                name: format!("bn/{layer}/mean"),
                expected: vec![stats.mean.len()],
                found: mean.shape().to_vec(),
            });
        }
        stats.mean = mean.into_data();
        stats.var = var.into_data();
        stats.initialized = true;
        Ok(())
    }

    pub fn put_optimizer<R: Real>(&mut self, opt: &Amsgrad<R>, store: &ParamStore<R>) {
        self.meta.insert("optim/step".into(), opt.state.step.to_string());
        for ((_, p), slot) in store.iter().zip(&opt.state.slots) {
            let Some(s) = slot else { continue };
            let shape = p.value.shape().to_vec();
            for (key, v) in [("m", &s.m), ("v", &s.v), ("v_max", &s.v_max)] {
                self.insert(format!("optim/{key}/{}", p.name), &Tensor::new(shape.clone(), v.clone()).unwrap());
            }
        }
    }

    pub fn load_optimizer<R: Real>(&self, opt: &mut Amsgrad<R>, store: &ParamStore<R>) -> Result<()> {
        let step = self
            .meta
            .get("optim/step")
            .ok_or_else(|| Error::Checkpoint("no optimizer state".into()))?
            .parse()
            .map_err(|_| Error::Checkpoint("bad optim/step".into()))?;
        let mut slots = Vec::with_capacity(store.len());
        for (_, p) in store.iter() {
            let key = |k: &str| format!("optim/{k}/{}", p.name);
            if !self.tensors.contains_key(&key("m")) {
                slots.push(None);
                continue;
            }
            slots.push(Some(SlotState {
                m: self.get::<R>(&key("m"))?.into_data(),
                v: self.get::<R>(&key("v"))?.into_data(),
                v_max: self.get::<R>(&key("v_max"))?.into_data(),
            }));
        }
        opt.state = OptimizerState { step, slots };
        Ok(())
    }
}

/// Write `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp-write");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
