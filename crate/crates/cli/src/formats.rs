//! Binary tensor fixtures and weight checkpoints. Layouts are documented
//! byte by byte in `FORMATS.md`.

use std::io::{self, Read, Write};

use dite_core::layers::{Module, Param};
use dite_core::{Real, Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DITECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn write_shape(w: &mut impl Write, s: Shape) -> io::Result<()> {
    for d in s.dims() {
        let d = u32::try_from(d).map_err(|_| invalid("dimension exceeds u32"))?;
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

fn read_shape(r: &mut impl Read) -> io::Result<Shape> {
    let mut d = [0usize; 4];
    for v in &mut d {
        *v = read_u32(r)? as usize;
    }
    Ok(Shape::new(d[0], d[1], d[2], d[3]))
}

/// Element width of fixture data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Writes a fixture: four little-endian `u32` dimensions (N, C, H, W) and
/// the elements in NCHW order, little-endian.
pub fn write_fixture<T: Real>(
    w: &mut impl Write,
    t: &Tensor<T>,
    precision: Precision,
) -> io::Result<()> {
    write_shape(w, t.shape())?;
    for &v in t.data() {
        match precision {
            Precision::F32 => w.write_all(&(v.as_f64() as f32).to_le_bytes())?,
            Precision::F64 => w.write_all(&v.as_f64().to_le_bytes())?,
        }
    }
    Ok(())
}

/// Reads a fixture; the element width follows from the file length.
pub fn read_fixture(bytes: &[u8]) -> io::Result<(Tensor<f64>, Precision)> {
    if bytes.len() < 16 {
        return Err(invalid("fixture shorter than its 16-byte header"));
    }
    let shape = read_shape(&mut &bytes[..16])?;
    let body = &bytes[16..];
    let n = shape.numel();
    let precision = match n {
        0 if body.is_empty() => Precision::F32,
        _ if body.len() == 4 * n => Precision::F32,
        _ if body.len() == 8 * n => Precision::F64,
        _ => {
            return Err(invalid(format!(
                "fixture body has {} bytes, {shape} needs {} (f32) or {} (f64)",
                body.len(),
                4 * n,
                8 * n
            )))
        }
    };
    let data: Vec<f64> = match precision {
        Precision::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Precision::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    let t = Tensor::from_vec(shape, data).map_err(|e| invalid(e.to_string()))?;
    Ok((t, precision))
}

/// Writes every parameter and buffer of `m` in visiting order.
pub fn write_checkpoint<T: Real, M: Module<T>>(w: &mut impl Write, m: &M) -> io::Result<()> {
    let mut params: Vec<(String, Tensor<T>)> = Vec::new();
    m.visit(&mut |p: &Param<T>| params.push((p.name().to_string(), p.value.clone())));
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in &params {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write_shape(w, t.shape())?;
        for &v in t.data() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub tensor: Tensor<f32>,
}

pub fn read_checkpoint(r: &mut impl Read) -> io::Result<Vec<CheckpointEntry>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(invalid("not a checkpoint (bad magic)"));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(invalid(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(r)?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| invalid("parameter name is not UTF-8"))?;
        let shape = read_shape(r)?;
        let mut body = vec![0u8; 4 * shape.numel()];
        r.read_exact(&mut body)?;
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::from_vec(shape, data).map_err(|e| invalid(e.to_string()))?;
        entries.push(CheckpointEntry { name, tensor });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(invalid("trailing bytes after the last entry"));
    }
    Ok(entries)
}

/// Loads checkpoint entries into `m` by name. Every parameter of `m` must be
/// present with its exact shape; unknown names are rejected.
pub fn load_checkpoint<M: Module<f32>>(m: &mut M, entries: &[CheckpointEntry]) -> io::Result<()> {
    let mut by_name: std::collections::HashMap<&str, &Tensor<f32>> = entries
        .iter()
        .map(|e| (e.name.as_str(), &e.tensor))
        .collect();
    if by_name.len() != entries.len() {
        return Err(invalid("duplicate parameter names"));
    }
    let mut err = None;
    m.visit_mut(&mut |p| {
        if err.is_some() {
            return;
        }
        match by_name.remove(p.name()) {
            Some(t) if t.shape() == p.shape() => p.value = t.clone(),
            Some(t) => {
                err = Some(format!(
                    "{}: checkpoint shape {} but model has {}",
                    p.name(),
                    t.shape(),
                    p.shape()
                ))
            }
            None => err = Some(format!("{}: missing from checkpoint", p.name())),
        }
    });
    if let Some(e) = err {
        return Err(invalid(e));
    }
    if let Some(name) = by_name.keys().next() {
        return Err(invalid(format!("{name}: not a parameter of this model")));
    }
    Ok(())
}
