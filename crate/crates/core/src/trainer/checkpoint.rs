//! Versioned binary checkpoint: config snapshot, parameter tensors by
//! name, optimizer moments, progress counters, and the dataset structure
//! checksum the run was bound to. Little-endian throughout; writes go
//! through a sibling temp file and rename so a crash never leaves a
//! half-written checkpoint behind.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::optim::Adam;
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path}: {what}")]
    Format { path: String, what: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// `key=value` lines of the training config.
    pub config_kv: String,
    /// Named parameter tensors in optimizer order.
    pub params: Vec<(String, Tensor)>,
    pub adam_t: u64,
    pub adam_m: Vec<Tensor>,
    pub adam_v: Vec<Tensor>,
    /// Last completed epoch.
    pub epoch: u64,
    pub best_epoch: u64,
    pub best_metric: f64,
    pub dataset_checksum: [u8; 32],
}

impl Checkpoint {
    pub fn from_state(
        config_kv: String,
        ps: &ParamSet,
        adam: &Adam,
        epoch: u64,
        best_epoch: u64,
        best_metric: f64,
        dataset_checksum: [u8; 32],
    ) -> Self {
        Checkpoint {
            config_kv,
            params: ps
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
            adam_t: adam.t,
            adam_m: adam.m.clone(),
            adam_v: adam.v.clone(),
            epoch,
            best_epoch,
            best_metric,
            dataset_checksum,
        }
    }
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, t: &Tensor) {
    put_u64(buf, t.shape().len() as u64);
    for &d in t.shape() {
        put_u64(buf, d as u64);
    }
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&ck.dataset_checksum);
    put_u64(&mut buf, ck.epoch);
    put_u64(&mut buf, ck.best_epoch);
    buf.extend_from_slice(&ck.best_metric.to_le_bytes());
    put_u64(&mut buf, ck.config_kv.len() as u64);
    buf.extend_from_slice(ck.config_kv.as_bytes());
    put_u64(&mut buf, ck.params.len() as u64);
    for (name, t) in &ck.params {
        put_u64(&mut buf, name.len() as u64);
        buf.extend_from_slice(name.as_bytes());
        put_tensor(&mut buf, t);
    }
    put_u64(&mut buf, ck.adam_t);
    for t in ck.adam_m.iter().chain(&ck.adam_v) {
        put_tensor(&mut buf, t);
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, what: impl Into<String>) -> Result<T, CheckpointError> {
        Err(CheckpointError::Format {
            path: self.path.display().to_string(),
            what: what.into(),
        })
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return self.fail(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn count(&mut self, what: &str) -> Result<usize, CheckpointError> {
        let n = self.u64()?;
        // Any plausible count fits well under the file length; anything
        // larger is corruption, not a huge checkpoint.
        if n > self.buf.len() as u64 {
            return self.fail(format!("implausible {what} count {n}"));
        }
        Ok(n as usize)
    }

    fn tensor(&mut self) -> Result<Tensor, CheckpointError> {
        let ndim = self.count("dimension")?;
        if ndim > 8 {
            return self.fail(format!("tensor rank {ndim} out of range"));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut total = 1usize;
        for _ in 0..ndim {
            let d = self.count("extent")?;
            total = total.saturating_mul(d);
            shape.push(d);
        }
        if total.saturating_mul(8) > self.buf.len() - self.pos {
            return self.fail(format!("tensor of {total} elements exceeds file"));
        }
        let raw = self.bytes(total * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor::from_vec(&shape, data))
    }

    fn string(&mut self, what: &str) -> Result<String, CheckpointError> {
        let len = self.count(what)?;
        let raw = self.bytes(len)?;
        match std::str::from_utf8(raw) {
            Ok(s) => Ok(s.to_string()),
            Err(_) => self.fail(format!("{what} is not UTF-8")),
        }
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CheckpointError> {
    let bytes = encode(ck);
    let wrap = |source: std::io::Error| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(wrap)?;
    f.write_all(&bytes).map_err(wrap)?;
    f.sync_all().map_err(wrap)?;
    drop(f);
    fs::rename(&tmp, path).map_err(wrap)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let buf = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        path,
    };
    if r.bytes(4)? != CHECKPOINT_MAGIC {
        return r.fail("not a checkpoint file (bad magic)");
    }
    let version = u32::from_le_bytes(r.bytes(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return r.fail(format!(
            "version {version} unsupported (expected {CHECKPOINT_VERSION})"
        ));
    }
    let mut dataset_checksum = [0u8; 32];
    dataset_checksum.copy_from_slice(r.bytes(32)?);
    let epoch = r.u64()?;
    let best_epoch = r.u64()?;
    let best_metric = r.f64()?;
    let config_kv = r.string("config block")?;
    let n_params = r.count("parameter")?;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = r.string("parameter name")?;
        let t = r.tensor()?;
        params.push((name, t));
    }
    let adam_t = r.u64()?;
    let mut adam_m = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        adam_m.push(r.tensor()?);
    }
    let mut adam_v = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        adam_v.push(r.tensor()?);
    }
    if r.pos != buf.len() {
        return r.fail(format!("{} trailing bytes", buf.len() - r.pos));
    }
    for ((_, p), (m, v)) in params.iter().zip(adam_m.iter().zip(&adam_v)) {
        if m.shape() != p.shape() || v.shape() != p.shape() {
            return r.fail("optimizer moment shape does not match its parameter");
        }
    }
    Ok(Checkpoint {
        config_kv,
        params,
        adam_t,
        adam_m,
        adam_v,
        epoch,
        best_epoch,
        best_metric,
        dataset_checksum,
    })
}
