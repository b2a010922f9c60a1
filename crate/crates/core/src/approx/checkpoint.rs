//! Binary parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! | bytes | field                                  |
//! |-------|----------------------------------------|
//! | 8     | magic `ECCPARAM`                       |
//! | 4     | format version (u32, currently 1)      |
//! | 4     | architecture tag (u32: 0 tabular, 1 hidden) |
//! | 8×4   | feature_dim, hidden_dim, n_actions, n_atoms (u64) |
//! | 8×2   | z_min, z_max (f64)                     |
//! | 8     | init seed (u64)                        |
//! | 8     | weight count (u64)                     |
//! | 8×n   | weights (f64)                          |

use std::io::{Read, Write};
use std::path::Path;

use super::{ApproximatorParams, Architecture, Dims};
use crate::categorical::Support;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ECCPARAM";
const VERSION: u32 = 1;

fn arch_tag(arch: Architecture) -> u32 {
    match arch {
        Architecture::TabularLogits => 0,
        Architecture::OneHiddenLayer => 1,
    }
}

pub fn write_checkpoint<W: Write>(params: &ApproximatorParams, mut w: W) -> Result<()> {
    let d = params.dims();
    let mut buf = Vec::with_capacity(80 + 8 * params.weights().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&arch_tag(params.architecture()).to_le_bytes());
    for v in [d.feature_dim, d.hidden_dim, d.n_actions, d.n_atoms] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    buf.extend_from_slice(&params.support().z_min().to_le_bytes());
    buf.extend_from_slice(&params.support().z_max().to_le_bytes());
    buf.extend_from_slice(&params.seed().to_le_bytes());
    buf.extend_from_slice(&(params.weights().len() as u64).to_le_bytes());
    for w in params.weights() {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(slice.try_into().expect("slice length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("dimension overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ApproximatorParams> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if &c.take::<8>()? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let arch = match c.u32()? {
        0 => Architecture::TabularLogits,
        1 => Architecture::OneHiddenLayer,
        t => return Err(Error::Checkpoint(format!("unknown architecture tag {t}"))),
    };
    let dims = Dims {
        feature_dim: c.usize()?,
        hidden_dim: c.usize()?,
        n_actions: c.usize()?,
        n_atoms: c.usize()?,
    };
    let support = Support::new(c.f64()?, c.f64()?, dims.n_atoms)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let seed = c.u64()?;
    let count = c.usize()?;
    if count != dims.weight_count(arch) {
        return Err(Error::Checkpoint(format!(
            "weight count {count} does not match dims ({})",
            dims.weight_count(arch)
        )));
    }
    let weights = (0..count).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    ApproximatorParams::from_weights(arch, dims, support, seed, weights)
        .map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_checkpoint(params: &ApproximatorParams, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(params, std::io::BufWriter::new(file))
}

pub fn load_checkpoint(path: &Path) -> Result<ApproximatorParams> {
    read_checkpoint(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ApproximatorParams {
        let dims = Dims {
            feature_dim: 3,
            hidden_dim: 4,
            n_actions: 2,
            n_atoms: 5,
        };
        let s = Support::new(-1.0, 2.5, 5).unwrap();
        ApproximatorParams::init(Architecture::OneHiddenLayer, dims, s, 42).unwrap()
    }

    #[test]
    fn round_trip() {
        let p = sample();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(buf.len(), 8 + 4 + 4 + 32 + 16 + 8 + 8 + 8 * p.weights().len());
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), p);
    }

    #[test]
    fn corrupted_inputs_are_rejected() {
        let p = sample();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad[..]).is_err());
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(read_checkpoint(&bad[..]).is_err());
        let mut long = buf;
        long.push(0);
        assert!(read_checkpoint(&long[..]).is_err());
    }
}
