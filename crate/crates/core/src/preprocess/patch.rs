use std::io::{Read, Write};

use crate::error::{Error, Result};

/// A standardized signal cut into `C × P` non-overlapping patches of length `L`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    channels: usize,
    patches: usize,
    patch_len: usize,
    source_rate_hz: f64,
    values: Vec<f64>,
}

const MAGIC: [u8; 4] = *b"FEGP";

impl PatchGrid {
    /// `values` is `[channel][patch][sample]`, flattened.
    pub fn new(channels: usize, patches: usize, patch_len: usize, source_rate_hz: f64, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || patches == 0 || patch_len == 0 {
            return Err(Error::Empty(format!(
                "patch grid {channels}×{patches}×{patch_len} has no cells"
            )));
        }
        if values.len() != channels * patches * patch_len {
            return Err(Error::Shape {
                op: "PatchGrid::new",
                lhs: vec![channels, patches, patch_len],
                rhs: vec![values.len()],
            });
        }
        if !(source_rate_hz > 0.0 && source_rate_hz.is_finite()) {
            return Err(Error::InvalidData(format!("bad rate {source_rate_hz}")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data {
                channel: i / (patches * patch_len),
                index: i % (patches * patch_len),
            });
        }
        Ok(Self {
            channels,
            patches,
            patch_len,
            source_rate_hz,
            values,
        })
    }

    pub fn zeros(channels: usize, patches: usize, patch_len: usize, source_rate_hz: f64) -> Result<Self> {
        Self::new(
            channels,
            patches,
            patch_len,
            source_rate_hz,
            vec![0.0; channels * patches * patch_len],
        )
    }

    /// Stacks per-channel, per-patch slices.
    pub fn from_patches(patches: Vec<Vec<Vec<f64>>>, source_rate_hz: f64) -> Result<Self> {
        let c = patches.len();
        let p = patches.first().map_or(0, Vec::len);
        let l = patches.first().and_then(|ch| ch.first()).map_or(0, Vec::len);
        let mut values = Vec::with_capacity(c * p * l);
        for ch in &patches {
            if ch.len() != p {
                return Err(Error::InvalidData("ragged patch counts".into()));
            }
            for patch in ch {
                if patch.len() != l {
                    return Err(Error::InvalidData("ragged patch lengths".into()));
                }
                values.extend_from_slice(patch);
            }
        }
        Self::new(c, p, l, source_rate_hz, values)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    pub fn patch_len(&self) -> usize {
        self.patch_len
    }

    pub fn source_rate_hz(&self) -> f64 {
        self.source_rate_hz
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn patch(&self, channel: usize, patch: usize) -> &[f64] {
        let start = (channel * self.patches + patch) * self.patch_len;
        &self.values[start..start + self.patch_len]
    }

    /// Patches `start..start + len` of every channel.
    pub fn slice_patches(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.patches {
            return Err(Error::Index(format!(
                "patches {start}..{} of {}",
                start + len,
                self.patches
            )));
        }
        let mut values = Vec::with_capacity(self.channels * len * self.patch_len);
        for c in 0..self.channels {
            for p in start..start + len {
                values.extend_from_slice(self.patch(c, p));
            }
        }
        Self::new(self.channels, len, self.patch_len, self.source_rate_hz, values)
    }

    /// Cuts the grid into consecutive, non-overlapping samples of `len` patches.
    pub fn split_samples(&self, len: usize) -> Result<Vec<Self>> {
        if len == 0 {
            return Err(Error::Config("samples need at least one patch".into()));
        }
        (0..self.patches / len)
            .map(|i| self.slice_patches(i * len, len))
            .collect()
    }

    pub fn permute_channels(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.channels {
            return Err(Error::Index("permutation length".into()));
        }
        let block = self.patches * self.patch_len;
        let mut values = Vec::with_capacity(self.values.len());
        for &c in perm {
            if c >= self.channels {
                return Err(Error::Index(format!("channel {c}")));
            }
            values.extend_from_slice(&self.values[c * block..(c + 1) * block]);
        }
        Self::new(self.channels, self.patches, self.patch_len, self.source_rate_hz, values)
    }

    /// Writes the "FEGP" layout: magic, u32 C, u32 P, u32 L, f64 rate, then
    /// `C·P·L` f32 little-endian values.
    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        let mut bytes = Vec::with_capacity(24 + self.values.len() * 4);
        bytes.extend_from_slice(&MAGIC);
        for dim in [self.channels, self.patches, self.patch_len] {
            let d = u32::try_from(dim).map_err(|_| Error::Format("dimension overflows u32".into()))?;
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        bytes.extend_from_slice(&self.source_rate_hz.to_le_bytes());
        for &v in &self.values {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut header = [0u8; 24];
        input
            .read_exact(&mut header)
            .map_err(|_| Error::Format("truncated FEGP header".into()))?;
        if header[..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:02x?}", &header[..4])));
        }
        let dim = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (c, p, l) = (dim(0), dim(1), dim(2));
        let rate = f64::from_le_bytes(header[16..24].try_into().unwrap());
        let n = c
            .checked_mul(p)
            .and_then(|v| v.checked_mul(l))
            .ok_or_else(|| Error::Format("grid too large".into()))?;
        let mut raw = vec![0u8; n * 4];
        input
            .read_exact(&mut raw)
            .map_err(|_| Error::Format("truncated FEGP data".into()))?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Self::new(c, p, l, rate, values).map_err(|e| match e {
            Error::Data { .. } | Error::Format(_) => e,
            other => Error::Format(other.to_string()),
        })
    }

    pub fn write_file(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fegp_round_trip() {
        let values: Vec<f64> = (0..2 * 3 * 4).map(|i| i as f32 as f64 * 0.25).collect();
        let g = PatchGrid::new(2, 3, 4, 250.0, values).unwrap();
        let mut bytes = Vec::new();
        g.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"FEGP");
        assert_eq!(bytes.len(), 24 + 24 * 4);
        assert_eq!(PatchGrid::read_from(&mut &bytes[..]).unwrap(), g);
    }

    #[test]
    fn patch_indexing() {
        let values: Vec<f64> = (0..2 * 3 * 2).map(|i| i as f64).collect();
        let g = PatchGrid::new(2, 3, 2, 250.0, values).unwrap();
        assert_eq!(g.patch(1, 2), [10.0, 11.0]);
        let s = g.slice_patches(1, 2).unwrap();
        assert_eq!(s.patch(0, 0), [2.0, 3.0]);
        assert_eq!(g.split_samples(2).unwrap().len(), 1);
    }
}
