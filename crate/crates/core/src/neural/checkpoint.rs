//! Binary parameter container: `TFCK`, format version, the model spec as
//! JSON, then a table of named little-endian f64 tensors.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{Model, ModelSpec, NamedTensor};
use super::optim::AdamState;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const KIND_PARAM: u8 = 0;
const KIND_BUFFER: u8 = 1;
const KIND_ADAM_M: u8 = 2;
const KIND_ADAM_V: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<AdamState>,
}

/// JSON written next to the binary container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSidecar {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub param_count: usize,
    pub sha256: String,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, kind: u8, name: &str, shape: &[usize], data: &[f64]) {
    out.push(kind);
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u64(out, d as u64);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_tensor(r: &mut Reader) -> Result<(u8, NamedTensor)> {
    let kind = r.u8()?;
    let nlen = r.u32()? as usize;
    let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
    let ndim = r.u32()? as usize;
    let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((
        kind,
        NamedTensor {
            name,
            tensor: Tensor::new(shape, data),
        },
    ))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn new(model: Model, optimizer: Option<AdamState>) -> Checkpoint {
        Checkpoint { model, optimizer }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        let spec = serde_json::to_vec(&self.model.spec)?;
        put_u64(&mut out, spec.len() as u64);
        out.extend_from_slice(&spec);
        let m = &self.model;
        put_u64(&mut out, (m.params.len() + m.buffers.len()) as u64);
        for p in &m.params {
            put_tensor(&mut out, KIND_PARAM, &p.name, &p.tensor.shape, &p.tensor.data);
        }
        for b in &m.buffers {
            put_tensor(&mut out, KIND_BUFFER, &b.name, &b.tensor.shape, &b.tensor.data);
        }
        match &self.optimizer {
            Some(s) => {
                out.push(1);
                put_u64(&mut out, s.step);
                for (p, (mv, vv)) in m.params.iter().zip(s.m.iter().zip(&s.v)) {
                    put_tensor(&mut out, KIND_ADAM_M, &p.name, &p.tensor.shape, mv);
                    put_tensor(&mut out, KIND_ADAM_V, &p.name, &p.tensor.shape, vv);
                }
            }
            None => out.push(0),
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let spec_len = r.u64()? as usize;
        let spec: ModelSpec = serde_json::from_slice(r.take(spec_len)?)?;
        let count = r.u64()? as usize;
        let mut params = Vec::new();
        let mut buffers = Vec::new();
        for _ in 0..count {
            let (kind, t) = read_tensor(&mut r)?;
            match kind {
                KIND_PARAM => params.push(t),
                KIND_BUFFER => buffers.push(t),
                k => return Err(Error::Format(format!("unexpected tensor kind {k}"))),
            }
        }
        let model = Model::from_parts(spec, params, buffers);
        model.check_layout()?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let mut m = Vec::new();
                let mut v = Vec::new();
                for _ in 0..model.params.len() {
                    let (km, tm) = read_tensor(&mut r)?;
                    let (kv, tv) = read_tensor(&mut r)?;
                    if km != KIND_ADAM_M || kv != KIND_ADAM_V {
                        return Err(Error::Format("malformed optimizer section".into()));
                    }
                    m.push(tm.tensor.data);
                    v.push(tv.tensor.data);
                }
                let s = AdamState { step, m, v };
                if !s.matches(&model) {
                    return Err(Error::Format("optimizer state does not match parameters".into()));
                }
                Some(s)
            }
            f => return Err(Error::Format(format!("bad optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint { model, optimizer })
    }

    pub fn sha256(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }

    /// Writes the container and the `.json` spec sidecar; returns the hash.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        let hash = hex::encode(Sha256::digest(&bytes));
        fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        let side = CheckpointSidecar {
            format_version: CHECKPOINT_VERSION,
            spec: self.model.spec.clone(),
            param_count: self.model.param_count(),
            sha256: hash.clone(),
        };
        let sp = sidecar_path(path);
        fs::write(&sp, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&sp, e))?;
        Ok(hash)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::model::{Mode, Task};
    use crate::neural::{Adam, Graph};

    #[test]
    fn roundtrip_with_optimizer() {
        let mut model = Model::new(ModelSpec::tiny(Task::Depth), 5).unwrap();
        let mut state = AdamState::new(&model);
        let x = Tensor::filled(model.input_shape(2), 0.2);
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let f = model.forward(&mut g, xv, Mode::Train).unwrap();
        let l = g.mean(f.output);
        g.backward(l);
        let grads = g.param_grads();
        Adam::default().step(&mut model, &mut state, &grads, 1e-3, &|_| false);
        model.update_running(&f.bn_stats, 0.1);
        let ck = Checkpoint::new(model.clone(), Some(state));
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.model.predict(&x).unwrap(), model.predict(&x).unwrap());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let ck = Checkpoint::new(Model::new(ModelSpec::tiny(Task::Wrench), 0).unwrap(), None);
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
