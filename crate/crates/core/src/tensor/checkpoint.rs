//! "FCKP" v1 checkpoint layout:
//!
//! ```text
//! b"FCKP", u32 LE tensor count, then per tensor:
//!   u16 LE name length, UTF-8 name,
//!   u8 dtype (0 = f32, 1 = f64), u8 rank, rank × u64 LE dims,
//!   raw little-endian data
//! ```

use std::io::{Read, Write};

use super::{ParameterStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"FCKP";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CheckpointDtype {
    F32,
    #[default]
    F64,
}

impl CheckpointDtype {
    fn tag(self) -> u8 {
        match self {
            CheckpointDtype::F32 => 0,
            CheckpointDtype::F64 => 1,
        }
    }
}

pub fn write_checkpoint(store: &ParameterStore, out: &mut impl Write, dtype: CheckpointDtype) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&MAGIC);
    let count = u32::try_from(store.len()).map_err(|_| Error::Format("too many tensors".into()))?;
    bytes.extend_from_slice(&count.to_le_bytes());
    for (name, t) in store.named_values() {
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name `{name}` too long")))?;
        bytes.extend_from_slice(&len.to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        bytes.push(dtype.tag());
        let rank = u8::try_from(t.shape().len()).map_err(|_| Error::Format("rank > 255".into()))?;
        bytes.push(rank);
        for &d in t.shape() {
            bytes.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match dtype {
            CheckpointDtype::F32 => t.data().iter().for_each(|v| bytes.extend_from_slice(&(*v as f32).to_le_bytes())),
            CheckpointDtype::F64 => t.data().iter().for_each(|v| bytes.extend_from_slice(&v.to_le_bytes())),
        }
    }
    out.write_all(&bytes)?;
    Ok(())
}

fn take<const N: usize>(input: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    input
        .read_exact(&mut b)
        .map_err(|_| Error::Format(format!("truncated checkpoint while reading {what}")))?;
    Ok(b)
}

/// Reads every `(name, tensor)` pair, in file order.
pub fn read_checkpoint(input: &mut impl Read) -> Result<Vec<(String, Tensor)>> {
    if take::<4>(input, "magic")? != MAGIC {
        return Err(Error::Format("not an FCKP checkpoint".into()));
    }
    let count = u32::from_le_bytes(take(input, "count")?);
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = u16::from_le_bytes(take(input, "name length")?) as usize;
        let mut name = vec![0u8; len];
        input
            .read_exact(&mut name)
            .map_err(|_| Error::Format("truncated tensor name".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let [dtype] = take::<1>(input, "dtype")?;
        let [rank] = take::<1>(input, "rank")?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(input, "dims")?) as usize);
        }
        let n: usize = shape.iter().product();
        let width = match dtype {
            0 => 4,
            1 => 8,
            other => return Err(Error::Format(format!("unknown dtype tag {other} for `{name}`"))),
        };
        let mut raw = vec![0u8; n * width];
        input
            .read_exact(&mut raw)
            .map_err(|_| Error::Format(format!("truncated data for `{name}`")))?;
        let data = if width == 4 {
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect()
        } else {
            raw.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect()
        };
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}
