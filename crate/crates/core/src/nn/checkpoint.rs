//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "MPNCKPT\0"
//! version      u32      1
//! meta_count   u32
//! meta entry   string key, string value        (string = u32 length + UTF-8)
//! step         u64      optimizer steps taken
//! net_count    u32
//! net          string name, u32 n_layers, u8 final activation (0 relu, 1 sigmoid, 2 none)
//!   layer      u32 in, u32 out,
//!              weight value, m, v  (out·in f64 each, row-major)
//!              bias   value, m, v  (out f64 each)
//! ```
//!
//! Gradient buffers are not stored; they are zero on load.

use std::collections::BTreeMap;
use std::path::Path;

use super::mlp::{Activation, Mlp, MlpSpec, ModelParams, ParamTensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MPNCKPT\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Free-form key/value metadata, e.g. the model configuration.
    pub meta: BTreeMap<String, String>,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, self.meta.len() as u32);
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&self.params.step.to_le_bytes());
        put_u32(&mut out, self.params.len() as u32);
        for (name, net) in self.params.iter() {
            put_str(&mut out, name);
            put_u32(&mut out, net.layers.len() as u32);
            out.push(net.spec.final_activation.code());
            for layer in &net.layers {
                put_u32(&mut out, layer.in_dim as u32);
                put_u32(&mut out, layer.out_dim as u32);
                for t in [&layer.weight, &layer.bias] {
                    for buf in [&t.value, &t.m, &t.v] {
                        for x in buf {
                            out.extend_from_slice(&x.to_le_bytes());
                        }
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            meta.insert(k, v);
        }
        let mut params = ModelParams::new();
        params.step = r.u64()?;
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let n_layers = r.u32()? as usize;
            let act = Activation::from_code(r.u8()?)
                .ok_or_else(|| Error::Checkpoint(format!("bad activation code in `{name}`")))?;
            let mut dims = Vec::with_capacity(n_layers);
            let mut tensors = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                let in_dim = r.u32()? as usize;
                let out_dim = r.u32()? as usize;
                if let Some(&(_, prev_out)) = dims.last() {
                    if prev_out != in_dim {
                        return Err(Error::Checkpoint(format!("inconsistent layer sizes in `{name}`")));
                    }
                }
                dims.push((in_dim, out_dim));
                let weight = r.tensor(in_dim * out_dim)?;
                let bias = r.tensor(out_dim)?;
                tensors.push((weight, bias));
            }
            let mut sizes: Vec<usize> = dims.iter().map(|d| d.0).collect();
            sizes.push(dims.last().map_or(0, |d| d.1));
            let spec = MlpSpec::new(&sizes, act).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
            let mut mlp = Mlp::zeros(spec);
            for (layer, (w, b)) in mlp.layers.iter_mut().zip(tensors) {
                layer.weight = w;
                layer.bias = b;
            }
            params.insert(name, mlp);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after parameters".into()));
        }
        Ok(Self { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn tensor(&mut self, n: usize) -> Result<ParamTensor> {
        let mut t = ParamTensor::new(self.f64s(n)?);
        t.m = self.f64s(n)?;
        t.v = self.f64s(n)?;
        Ok(t)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }
}
