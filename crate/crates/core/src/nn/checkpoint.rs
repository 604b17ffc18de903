//! Binary checkpoint: parameters, running statistics and optimizer state.
//!
//! Little-endian layout:
//!
//! ```text
//! "RDCK" | version u16 | precision u8 (4 or 8) | spec hash [32]
//! config digest [32] | epoch u32 | label (u16 len + utf8)
//! spec JSON (u32 len + utf8)
//! tensor count u32 | tensors
//! adam flag u8 | [step u64 | lr, beta1, beta2, eps, l2 f64 | m tensors | v tensors]
//! tensor = name (u16 len + utf8) | rank u8 | dims u32 * rank | values
//! ```
//!
//! Tensors come in [`ModelParams::learnable`] order followed by the running
//! statistics.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::Result;
use crate::io_util::{atomic_write, Reader};

use super::adam::AdamState;
use super::model::ModelParams;
use super::spec::NetworkSpec;
use super::tensor::{Precision, Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RDCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub version: u16,
    pub precision: Precision,
    pub spec_hash: [u8; 32],
    pub config_digest: [u8; 32],
    pub epoch: u32,
    pub label: String,
    pub spec: NetworkSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub header: CheckpointHeader,
    pub params: ModelParams<T>,
    pub adam: Option<AdamState<T>>,
}

fn put_str(out: &mut Vec<u8>, s: &str, wide: bool) {
    if wide {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    } else {
        out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    }
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor<T: Real>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    put_str(out, name, false);
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.to_le(out);
    }
}

fn get_tensor<T: Real, R: Read>(r: &mut Reader<R>, expect_name: &str, expect_shape: &[usize]) -> Result<Tensor<T>> {
    let name = r.string16()?;
    if name != expect_name {
        return Err(r.format_err(format!("tensor {expect_name}"), name));
    }
    let rank = r.u8()? as usize;
    if rank > 4 {
        return Err(r.format_err("rank <= 4", rank.to_string()));
    }
    let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    if dims != expect_shape {
        return Err(r.format_err(format!("{expect_name} shape {expect_shape:?}"), format!("{dims:?}")));
    }
    let n: usize = dims.iter().product();
    let width = T::PRECISION.bytes() as usize;
    let bytes = r.bytes(n * width)?;
    let data = bytes.chunks_exact(width).map(T::from_le).collect();
    Tensor::from_vec(&dims, data)
}

impl<T: Real> Checkpoint<T> {
    pub fn new(
        spec: &NetworkSpec,
        params: ModelParams<T>,
        adam: Option<AdamState<T>>,
        config_digest: [u8; 32],
        epoch: u32,
        label: &str,
    ) -> Self {
        Self {
            header: CheckpointHeader {
                version: CHECKPOINT_VERSION,
                precision: T::PRECISION,
                spec_hash: spec.hash(),
                config_digest,
                epoch,
                label: label.to_string(),
                spec: spec.clone(),
            },
            params,
            adam,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&h.version.to_le_bytes());
        out.push(h.precision.bytes());
        out.extend_from_slice(&h.spec_hash);
        out.extend_from_slice(&h.config_digest);
        out.extend_from_slice(&h.epoch.to_le_bytes());
        put_str(&mut out, &h.label, false);
        put_str(&mut out, &serde_json::to_string(&h.spec).expect("spec serializes"), true);
        let learn = self.params.learnable();
        let running = self.params.running();
        out.extend_from_slice(&((learn.len() + running.len()) as u32).to_le_bytes());
        for p in &learn {
            put_tensor(&mut out, &p.name, p.tensor);
        }
        for (name, t) in &running {
            put_tensor(&mut out, name, t);
        }
        match &self.adam {
            None => out.push(0),
            Some(a) => {
                out.push(1);
                out.extend_from_slice(&a.step.to_le_bytes());
                for v in [a.lr, a.beta1, a.beta2, a.eps, a.l2] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                for (p, m) in learn.iter().zip(&a.m) {
                    put_tensor(&mut out, &format!("adam.m.{}", p.name), m);
                }
                for (p, v) in learn.iter().zip(&a.v) {
                    put_tensor(&mut out, &format!("adam.v.{}", p.name), v);
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn from_reader<R: Read>(mut r: Reader<R>) -> Result<Self> {
        let header = read_header(&mut r)?;
        if header.precision != T::PRECISION {
            return Err(r.format_err(
                format!("precision {} bytes", T::PRECISION.bytes()),
                format!("{} bytes", header.precision.bytes()),
            ));
        }
        // Shapes come from a freshly initialized model of the same spec.
        let mut params = ModelParams::<T>::init(&header.spec, &mut crate::rng::source(0))?;
        let names: Vec<(String, Vec<usize>)> =
            params.learnable().iter().map(|p| (p.name.clone(), p.tensor.shape().to_vec())).collect();
        let running: Vec<(String, Vec<usize>)> =
            params.running().iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
        let count = r.u32()? as usize;
        if count != names.len() + running.len() {
            return Err(r.format_err(format!("{} tensors", names.len() + running.len()), count.to_string()));
        }
        for (slot, (name, shape)) in params.learnable_mut().into_iter().zip(&names) {
            *slot = get_tensor(&mut r, name, shape)?;
        }
        for (slot, (name, shape)) in params.running_mut().into_iter().zip(&running) {
            *slot = get_tensor(&mut r, name, shape)?;
        }
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let lr = r.f64()?;
                let beta1 = r.f64()?;
                let beta2 = r.f64()?;
                let eps = r.f64()?;
                let l2 = r.f64()?;
                let mut m = Vec::new();
                for (name, shape) in &names {
                    m.push(get_tensor(&mut r, &format!("adam.m.{name}"), shape)?);
                }
                let mut v = Vec::new();
                for (name, shape) in &names {
                    v.push(get_tensor(&mut r, &format!("adam.v.{name}"), shape)?);
                }
                Some(AdamState { m, v, step, lr, beta1, beta2, eps, l2 })
            }
            f => return Err(r.format_err("adam flag 0 or 1", f.to_string())),
        };
        r.expect_eof()?;
        Ok(Self { header, params, adam })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_reader(Reader::open(path)?)
    }
}

fn read_header<R: Read>(r: &mut Reader<R>) -> Result<CheckpointHeader> {
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.format_err(format!("version {CHECKPOINT_VERSION}"), version.to_string()));
    }
    let pb = r.u8()?;
    let precision = Precision::from_bytes(pb).ok_or_else(|| r.format_err("precision 4 or 8", pb.to_string()))?;
    let spec_hash: [u8; 32] = r.bytes(32)?.try_into().unwrap();
    let config_digest: [u8; 32] = r.bytes(32)?.try_into().unwrap();
    let epoch = r.u32()?;
    let label = r.string16()?;
    let json = r.string32()?;
    let spec: NetworkSpec =
        serde_json::from_str(&json).map_err(|e| r.format_err("network spec JSON", e.to_string()))?;
    if spec.hash() != spec_hash {
        return Err(r.format_err("spec hash matching embedded spec", "mismatch".to_string()));
    }
    Ok(CheckpointHeader { version, precision, spec_hash, config_digest, epoch, label, spec })
}

/// Reads only the header of a checkpoint file.
pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    read_header(&mut Reader::open(path)?)
}

/// Writes to any sink; used by tests that avoid the filesystem.
pub fn write_checkpoint<T: Real, W: Write>(ck: &Checkpoint<T>, mut w: W) -> Result<()> {
    w.write_all(&ck.to_bytes())?;
    Ok(())
}
