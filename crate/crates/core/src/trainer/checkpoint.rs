//! Binary checkpoint codec.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"CPFG1"                       5 bytes
//! digest  config hash                    32 bytes
//! count   u32                            number of tensors
//! tensor  name_len u32, name utf-8 bytes,
//!         rank u32, dims rank x u64,
//!         values numel x f64 (row-major)
//! ```
//!
//! A trainer checkpoint stores every parameter in canonical order, then the
//! Adam moments as `<name>.m` / `<name>.v`, then a one-element `adam.t`
//! tensor holding the completed step count.

use crate::model::{ModelParameters, ParamSpec, ParamTensor};
use crate::trainer::OptimState;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 5] = b"CPFG1";
/// Sanity cap: no tensor in this project comes close to this many elements.
const MAX_NUMEL: u64 = 1 << 30;
const MAX_RANK: u32 = 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected CPFG1")]
    BadMagic,
    #[error("file ends mid-record")]
    Truncated,
    #[error("trailing bytes after final tensor")]
    TrailingBytes,
    #[error("tensor name is not valid utf-8")]
    BadName,
    #[error("malformed tensor header: {0}")]
    Malformed(String),
    #[error("checkpoint does not match expected layout: {0}")]
    LayoutMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RawCheckpoint {
    pub digest: [u8; 32],
    pub tensors: Vec<RawTensor>,
}

fn write_tensor<W: Write>(w: &mut W, name: &str, shape: &[usize], values: &[f64]) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Serialize parameters plus optimizer state to `path`, embedding the
/// 32-byte configuration digest for provenance checks on load.
pub fn save_checkpoint(
    path: &Path,
    params: &ModelParameters,
    optim: &OptimState,
    digest: [u8; 32],
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&digest)?;
    let count = params.tensors.len() as u32 * 3 + 1;
    w.write_all(&count.to_le_bytes())?;
    for t in &params.tensors {
        write_tensor(&mut w, &t.name, &t.shape, &t.values)?;
    }
    for (k, t) in params.tensors.iter().enumerate() {
        write_tensor(&mut w, &format!("{}.m", t.name), &t.shape, &optim.m[k])?;
        write_tensor(&mut w, &format!("{}.v", t.name), &t.shape, &optim.v[k])?;
    }
    write_tensor(&mut w, "adam.t", &[1], &[optim.t as f64])?;
    w.flush()?;
    Ok(())
}

struct Cursor<R> {
    r: R,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>, CheckpointError> {
        let mut buf = vec![0u8; n];
        self.r
            .read_exact(&mut buf)
            .map_err(|_| CheckpointError::Truncated)?;
        Ok(buf)
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        let b = self.bytes(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        let b = self.bytes(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

/// Parse a checkpoint file without interpreting tensor roles.
pub fn load_checkpoint(path: &Path) -> Result<RawCheckpoint, CheckpointError> {
    let mut c = Cursor { r: BufReader::new(std::fs::File::open(path)?) };
    let magic = c.bytes(5)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let digest: [u8; 32] = c.bytes(32)?.try_into().expect("32 bytes");
    let count = c.u32()?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name =
            String::from_utf8(c.bytes(name_len)?).map_err(|_| CheckpointError::BadName)?;
        let rank = c.u32()?;
        if rank > MAX_RANK {
            return Err(CheckpointError::Malformed(format!(
                "tensor {name} has rank {rank}"
            )));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let d = c.u64()?;
            numel = numel.saturating_mul(d.max(1));
            shape.push(d as usize);
        }
        if numel > MAX_NUMEL {
            return Err(CheckpointError::Malformed(format!(
                "tensor {name} claims {numel} elements"
            )));
        }
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(c.f64()?);
        }
        tensors.push(RawTensor { name, shape, values });
    }
    let mut probe = [0u8; 1];
    match c.r.read(&mut probe) {
        Ok(0) => Ok(RawCheckpoint { digest, tensors }),
        Ok(_) => Err(CheckpointError::TrailingBytes),
        Err(e) => Err(CheckpointError::Io(e)),
    }
}

/// Rebuild `(parameters, optimizer)` from a raw checkpoint, validating the
/// tensor names and shapes against the expected canonical layout.
pub fn restore_state(
    raw: &RawCheckpoint,
    specs: &[ParamSpec],
) -> Result<(ModelParameters, OptimState), CheckpointError> {
    let n = specs.len();
    if raw.tensors.len() != 3 * n + 1 {
        return Err(CheckpointError::LayoutMismatch(format!(
            "expected {} tensors, found {}",
            3 * n + 1,
            raw.tensors.len()
        )));
    }
    let check = |t: &RawTensor, name: &str, shape: &[usize]| -> Result<(), CheckpointError> {
        if t.name != name {
            return Err(CheckpointError::LayoutMismatch(format!(
                "expected tensor {name}, found {}",
                t.name
            )));
        }
        if t.shape != shape {
            return Err(CheckpointError::LayoutMismatch(format!(
                "tensor {name}: expected shape {shape:?}, found {:?}",
                t.shape
            )));
        }
        Ok(())
    };
    let mut tensors = Vec::with_capacity(n);
    for (spec, t) in specs.iter().zip(&raw.tensors) {
        check(t, &spec.name, &spec.shape)?;
        tensors.push(ParamTensor {
            name: spec.name.clone(),
            shape: spec.shape.clone(),
            values: t.values.clone(),
            decay: spec.decay,
        });
    }
    let mut m = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for (k, spec) in specs.iter().enumerate() {
        let tm = &raw.tensors[n + 2 * k];
        let tv = &raw.tensors[n + 2 * k + 1];
        check(tm, &format!("{}.m", spec.name), &spec.shape)?;
        check(tv, &format!("{}.v", spec.name), &spec.shape)?;
        m.push(tm.values.clone());
        v.push(tv.values.clone());
    }
    let tt = &raw.tensors[3 * n];
    check(tt, "adam.t", &[1])?;
    let steps = tt.values[0];
    if !(steps.is_finite() && steps >= 0.0 && steps.fract() == 0.0) {
        return Err(CheckpointError::LayoutMismatch(format!(
            "adam.t must be a non-negative integer, found {steps}"
        )));
    }
    Ok((
        ModelParameters { tensors },
        OptimState { m, v, t: steps as u64 },
    ))
}
