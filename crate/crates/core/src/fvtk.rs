//! "FVTK" little-endian binary containers.
//!
//! Two layouts share the magic; the version field tells them apart:
//!
//! * version 1 — feature dump: `FVTK, u32 version, u32 rows, u32 cols,
//!   u32 dim`, then `rows*cols*dim` f32 values.
//! * version 2 — named tensors: `FVTK, u32 version, u32 count`, then per
//!   record `u32 name_len, name bytes, u32 rank, u32 dims[rank], f32 data`.
//!
//! Values are stored at 32-bit precision and widened back to f64 on read.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use crate::adapter::{AdapterConfig, AdapterParams};
use crate::encoder::TokenGrid;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FVTK";
pub const VERSION_GRID: u32 = 1;
pub const VERSION_TENSORS: u32 = 2;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, values: impl Iterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Domain(format!("FVTK: truncated {what}")))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f32s(r: &mut impl Read, count: usize, what: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Domain(format!("FVTK: truncated {what}")))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn check_header(r: &mut impl Read, expect_version: u32) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Domain("FVTK: file too short for magic".into()))?;
    if magic != MAGIC {
        return Err(Error::Domain("FVTK: bad magic".into()));
    }
    let version = read_u32(r, "version")?;
    if version != expect_version {
        return Err(Error::Domain(format!(
            "FVTK: version {version}, expected {expect_version}"
        )));
    }
    Ok(())
}

/// Serializes a feature grid (version 1).
pub fn grid_to_bytes(grid: &TokenGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + grid.data().len() * 4);
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION_GRID);
    put_u32(&mut out, grid.rows() as u32);
    put_u32(&mut out, grid.cols() as u32);
    put_u32(&mut out, grid.dim() as u32);
    put_f32s(&mut out, grid.data().iter().copied());
    out
}

pub fn grid_from_bytes(bytes: &[u8]) -> Result<TokenGrid> {
    let mut r = Cursor::new(bytes);
    check_header(&mut r, VERSION_GRID)?;
    let rows = read_u32(&mut r, "rows")? as usize;
    let cols = read_u32(&mut r, "cols")? as usize;
    let dim = read_u32(&mut r, "dim")? as usize;
    let data = read_f32s(&mut r, rows * cols * dim, "grid data")?;
    TokenGrid::new(rows, cols, dim, data)
}

pub fn write_grid(grid: &TokenGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, grid_to_bytes(grid)).map_err(|e| Error::io(path, e))
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<TokenGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    grid_from_bytes(&bytes)
}

/// One named tensor in a version-2 container.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f64>,
}

impl TensorRecord {
    pub fn new(name: &str, dims: &[u32], data: &[f64]) -> Self {
        debug_assert_eq!(dims.iter().product::<u32>() as usize, data.len());
        TensorRecord {
            name: name.to_string(),
            dims: dims.to_vec(),
            data: data.to_vec(),
        }
    }
}

pub fn tensors_to_bytes(records: &[TensorRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION_TENSORS);
    put_u32(&mut out, records.len() as u32);
    for rec in records {
        put_u32(&mut out, rec.name.len() as u32);
        out.extend_from_slice(rec.name.as_bytes());
        put_u32(&mut out, rec.dims.len() as u32);
        for &d in &rec.dims {
            put_u32(&mut out, d);
        }
        put_f32s(&mut out, rec.data.iter().copied());
    }
    out
}

pub fn tensors_from_bytes(bytes: &[u8]) -> Result<Vec<TensorRecord>> {
    let mut r = Cursor::new(bytes);
    check_header(&mut r, VERSION_TENSORS)?;
    let count = read_u32(&mut r, "record count")? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r, "name length")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)
            .map_err(|_| Error::Domain("FVTK: truncated tensor name".into()))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Domain("FVTK: tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r, "rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(&mut r, "dims")?);
        }
        let len = dims.iter().product::<u32>() as usize;
        let data = read_f32s(&mut r, len, "tensor data")?;
        records.push(TensorRecord { name, dims, data });
    }
    Ok(records)
}

/// Writes adapter parameters as a named-tensor container.
pub fn save_adapter_params(params: &AdapterParams, cfg: &AdapterConfig, path: impl AsRef<Path>) -> Result<()> {
    let d = cfg.shuffled_dim() as u32;
    let h = cfg.hidden_dim as u32;
    let out = cfg.out_dim as u32;
    let records = vec![
        TensorRecord::new("ln_gain", &[d], &params.ln_gain),
        TensorRecord::new("ln_bias", &[d], &params.ln_bias),
        TensorRecord::new("w1", &[d, h], &params.w1),
        TensorRecord::new("b1", &[h], &params.b1),
        TensorRecord::new("w2", &[h, h], &params.w2),
        TensorRecord::new("b2", &[h], &params.b2),
        TensorRecord::new("w3", &[h, out], &params.w3),
        TensorRecord::new("b3", &[out], &params.b3),
    ];
    let path = path.as_ref();
    fs::write(path, tensors_to_bytes(&records)).map_err(|e| Error::io(path, e))
}

/// Reads adapter parameters back (at f32 precision) and checks the shapes
/// against the config.
pub fn load_adapter_params(cfg: &AdapterConfig, path: impl AsRef<Path>) -> Result<AdapterParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let records = tensors_from_bytes(&bytes)?;
    let find = |name: &str| -> Result<Vec<f64>> {
        records
            .iter()
            .find(|r| r.name == name)
            .map(|r| r.data.clone())
            .ok_or_else(|| Error::Domain(format!("FVTK: missing tensor '{name}'")))
    };
    let params = AdapterParams {
        ln_gain: find("ln_gain")?,
        ln_bias: find("ln_bias")?,
        w1: find("w1")?,
        b1: find("b1")?,
        w2: find("w2")?,
        b2: find("b2")?,
        w3: find("w3")?,
        b3: find("b3")?,
    };
    adapter_shapes_ok(&params, cfg)?;
    Ok(params)
}

fn adapter_shapes_ok(params: &AdapterParams, cfg: &AdapterConfig) -> Result<()> {
    let d = cfg.shuffled_dim();
    let h = cfg.hidden_dim;
    let out = cfg.out_dim;
    if params.ln_gain.len() != d
        || params.w1.len() != d * h
        || params.w2.len() != h * h
        || params.w3.len() != h * out
        || params.b3.len() != out
    {
        return Err(Error::Domain("FVTK: adapter tensor shapes do not match config".into()));
    }
    Ok(())
}
