//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian `u32`:
//! `"RGUE"`, version byte `1`, tensor count, then per tensor the name
//! length, UTF-8 name bytes, rank, extents, and the raw `f32` values.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::param::ParamSet;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RGUE";
pub const CHECKPOINT_VERSION: u8 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn write_checkpoint(params: &ParamSet<f32>, mut w: impl Write) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&[CHECKPOINT_VERSION])?;
    put_u32(&mut w, params.len())?;
    for p in params.iter() {
        put_u32(&mut w, p.name.len())?;
        w.write_all(p.name.as_bytes())?;
        put_u32(&mut w, p.value.rank())?;
        for &e in p.value.shape() {
            put_u32(&mut w, e)?;
        }
        let mut buf = Vec::with_capacity(p.value.len() * 4);
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<ParamSet<f32>> {
    let mut head = [0u8; 5];
    r.read_exact(&mut head)
        .map_err(|_| Error::Checkpoint("file too short for header".into()))?;
    if &head[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    if head[4] != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", head[4])));
    }
    let count = get_u32(&mut r)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = get_u32(&mut r)?;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|_| Error::Checkpoint("truncated name".into()))?;
        let name =
            String::from_utf8(name).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?;
        let rank = get_u32(&mut r)?;
        let shape = (0..rank).map(|_| get_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)
            .map_err(|_| Error::Checkpoint(format!("truncated data for `{name}`")))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.insert(name, Tensor::new(&shape, data)?)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(params)
}
