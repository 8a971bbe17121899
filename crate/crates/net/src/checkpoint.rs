//! Checkpoint file format.
//!
//! Layout (little-endian):
//!   magic `"QNT1"` | u32 version | u32 levels | u32 stages | u64 seed |
//!   u32 n_widths | u32 widths[] | f64 validation loss (NaN if unset) |
//!   u32 n_entries | entries | f32 payload.
//!
//! Each manifest entry is `u16 name_len | name | u32 ndims | u64 dims[] |
//!   u64 offset | u64 len` with offsets counted in floats from the payload
//! start. Parameters are stored in declaration order: trainable tensors of
//! every stage first, then batch-norm running statistics.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use hpqsm_core::{sc, Scalar};

use crate::unet::UnetConfig;
use crate::{NetError, Prognet, Result};

pub const MAGIC: [u8; 4] = *b"QNT1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct CheckpointMeta {
    pub levels: usize,
    pub widths: Vec<usize>,
    pub stages: usize,
    pub seed: u64,
    /// Validation loss of the stored (32-bit quantized) parameters.
    pub val_loss: Option<f64>,
}

struct Entry {
    name: String,
    dims: Vec<usize>,
    offset: u64,
    len: u64,
}

fn collect<S: Scalar>(net: &mut Prognet<S>) -> Vec<(String, Vec<S>)> {
    let mut out: Vec<(String, Vec<S>)> = Vec::new();
    net.visit_trainable(&mut |name, w, _| out.push((name, w.clone())));
    net.visit_state(&mut |name, s| out.push((name, s.clone())));
    out
}

/// Round every parameter and statistic through 32-bit floats, exactly
/// matching what a save/load round trip produces.
pub fn quantize_params_f32<S: Scalar>(net: &mut Prognet<S>) {
    let q = |v: &mut Vec<S>| {
        for x in v.iter_mut() {
            *x = sc((x.as_f64() as f32) as f64);
        }
    };
    net.visit_trainable(&mut |_, w, _| q(w));
    net.visit_state(&mut |_, s| q(s));
}

pub fn save<S: Scalar>(net: &mut Prognet<S>, path: &Path, val_loss: Option<f64>) -> Result<()> {
    let cfg = net.config().clone();
    let tensors = collect(net);
    let f = File::create(path).map_err(|e| NetError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(f);
    let io_err = |e| NetError::io(path.display().to_string(), e);

    w.write_all(&MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(cfg.levels as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(net.num_stages() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&net.seed().to_le_bytes()).map_err(io_err)?;
    w.write_all(&(cfg.widths.len() as u32).to_le_bytes()).map_err(io_err)?;
    for &width in &cfg.widths {
        w.write_all(&(width as u32).to_le_bytes()).map_err(io_err)?;
    }
    w.write_all(&val_loss.unwrap_or(f64::NAN).to_le_bytes()).map_err(io_err)?;

    w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io_err)?;
    let mut offset = 0u64;
    for (name, data) in &tensors {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes()).map_err(io_err)?;
        w.write_all(bytes).map_err(io_err)?;
        // flat length as the single dimension
        w.write_all(&1u32.to_le_bytes()).map_err(io_err)?;
        w.write_all(&(data.len() as u64).to_le_bytes()).map_err(io_err)?;
        w.write_all(&offset.to_le_bytes()).map_err(io_err)?;
        w.write_all(&(data.len() as u64).to_le_bytes()).map_err(io_err)?;
        offset += data.len() as u64;
    }
    for (_, data) in &tensors {
        for v in data {
            w.write_all(&(v.as_f64() as f32).to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

fn read_exact_buf<R: Read>(r: &mut R, n: usize, path: &Path) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|e| NetError::io(path.display().to_string(), e))?;
    Ok(buf)
}

macro_rules! read_le {
    ($r:expr, $path:expr, $ty:ty) => {{
        let buf = read_exact_buf($r, std::mem::size_of::<$ty>(), $path)?;
        <$ty>::from_le_bytes(buf.try_into().unwrap())
    }};
}

pub fn load<S: Scalar>(path: &Path) -> Result<(Prognet<S>, CheckpointMeta)> {
    let f = File::open(path).map_err(|e| NetError::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(f);
    let magic = read_exact_buf(&mut r, 4, path)?;
    if magic != MAGIC {
        return Err(NetError::checkpoint(path.display().to_string(), "bad magic, expected QNT1"));
    }
    let version = read_le!(&mut r, path, u32);
    if version != VERSION {
        return Err(NetError::checkpoint(
            path.display().to_string(),
            format!("unsupported version {version}"),
        ));
    }
    let levels = read_le!(&mut r, path, u32) as usize;
    let stages = read_le!(&mut r, path, u32) as usize;
    let seed = read_le!(&mut r, path, u64);
    let n_widths = read_le!(&mut r, path, u32) as usize;
    let mut widths = Vec::with_capacity(n_widths);
    for _ in 0..n_widths {
        widths.push(read_le!(&mut r, path, u32) as usize);
    }
    let val_loss_raw = read_le!(&mut r, path, f64);
    let val_loss = if val_loss_raw.is_nan() { None } else { Some(val_loss_raw) };

    let n_entries = read_le!(&mut r, path, u32) as usize;
    let mut entries = Vec::with_capacity(n_entries);
    for _ in 0..n_entries {
        let name_len = read_le!(&mut r, path, u16) as usize;
        let name = String::from_utf8(read_exact_buf(&mut r, name_len, path)?)
            .map_err(|_| NetError::checkpoint(path.display().to_string(), "non-utf8 name"))?;
        let ndims = read_le!(&mut r, path, u32) as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(read_le!(&mut r, path, u64) as usize);
        }
        let offset = read_le!(&mut r, path, u64);
        let len = read_le!(&mut r, path, u64);
        entries.push(Entry { name, dims, offset, len });
    }

    let total: u64 = entries.iter().map(|e| e.len).sum();
    let mut payload_bytes = Vec::new();
    r.read_to_end(&mut payload_bytes)
        .map_err(|e| NetError::io(path.display().to_string(), e))?;
    if payload_bytes.len() as u64 != total * 4 {
        return Err(NetError::checkpoint(
            path.display().to_string(),
            format!("payload size {} bytes, expected {}", payload_bytes.len(), total * 4),
        ));
    }
    let payload: Vec<f32> = payload_bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();

    let cfg = UnetConfig { levels, widths: widths.clone(), in_channels: 2 };
    let mut net = Prognet::<S>::new(cfg, stages, seed)?;

    let mut index: HashMap<String, (u64, u64)> = HashMap::new();
    for e in &entries {
        let flat: usize = e.dims.iter().product();
        if flat as u64 != e.len {
            return Err(NetError::checkpoint(
                path.display().to_string(),
                format!("entry {} dims inconsistent with length", e.name),
            ));
        }
        index.insert(e.name.clone(), (e.offset, e.len));
    }
    let mut missing: Vec<String> = Vec::new();
    let mut fill = |name: String, v: &mut Vec<S>| {
        match index.get(&name) {
            Some(&(offset, len)) if len as usize == v.len() => {
                for (i, slot) in v.iter_mut().enumerate() {
                    *slot = sc(payload[offset as usize + i] as f64);
                }
            }
            _ => missing.push(name),
        }
    };
    net.visit_trainable(&mut |name, w, _| fill(name, w));
    net.visit_state(&mut |name, s| fill(name, s));
    if !missing.is_empty() {
        return Err(NetError::checkpoint(
            path.display().to_string(),
            format!("missing or mis-shaped tensors: {missing:?}"),
        ));
    }
    let meta = CheckpointMeta { levels, widths, stages, seed, val_loss };
    Ok((net, meta))
}
