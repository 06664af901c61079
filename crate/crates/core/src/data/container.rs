//! Binary dataset container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "DRDS"
//! version    u32      1
//! dim        u32
//! classes    u32
//! n          u32
//! has_signal u8       1 if every example records a signal block
//! has_null   u8       1 if every example records a null region
//! features   n*dim    f32, row-major
//! labels     n        u32
//! signal     n        u32            (only if has_signal)
//! null       n times: u32 count, then count u32 coordinates (only if has_null)
//! ```
//!
//! Features are stored as `f32`; generator provenance is not stored.

use std::io::{Read, Write};
use std::sync::Arc;

use super::{Dataset, Example};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"DRDS";
const VERSION: u32 = 1;

pub fn write_dataset<W: Write>(data: &Dataset, mut out: W) -> Result<()> {
    let exs = data.examples();
    let has_signal = exs.iter().all(|e| e.signal_block.is_some());
    let has_null = exs.iter().all(|e| e.null_region.is_some());
    out.write_all(MAGIC)?;
    for v in [VERSION, data.dim() as u32, data.classes() as u32, exs.len() as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&[u8::from(has_signal), u8::from(has_null)])?;
    let mut buf = Vec::with_capacity(exs.len() * data.dim() * 4);
    for ex in exs {
        for &v in &ex.features {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for ex in exs {
        buf.extend_from_slice(&(ex.label as u32).to_le_bytes());
    }
    if has_signal {
        for ex in exs {
            buf.extend_from_slice(&(ex.signal_block.unwrap() as u32).to_le_bytes());
        }
    }
    if has_null {
        for ex in exs {
            let region = ex.null_region.as_deref().unwrap();
            buf.extend_from_slice(&(region.len() as u32).to_le_bytes());
            for &c in region {
                buf.extend_from_slice(&(c as u32).to_le_bytes());
            }
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Truncated(format!("dataset container: {what}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_dataset<R: Read>(mut input: R) -> Result<Dataset> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::Truncated("dataset container: magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::WrongMagic {
            expected: u32::from_be_bytes(*MAGIC),
            found: u32::from_be_bytes(magic),
        });
    }
    let version = read_u32(&mut input, "version")?;
    if version != VERSION {
        return Err(Error::InvalidConfig(format!("unsupported container version {version}")));
    }
    let dim = read_u32(&mut input, "dim")? as usize;
    let classes = read_u32(&mut input, "classes")? as usize;
    let n = read_u32(&mut input, "n")? as usize;
    let mut flags = [0u8; 2];
    input
        .read_exact(&mut flags)
        .map_err(|_| Error::Truncated("dataset container: flags".into()))?;
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let mut raw = vec![0u8; dim * 4];
        input
            .read_exact(&mut raw)
            .map_err(|_| Error::Truncated("dataset container: features".into()))?;
        let features = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        examples.push(Example::new(features, 0));
    }
    for ex in examples.iter_mut() {
        ex.label = read_u32(&mut input, "labels")? as usize;
    }
    if flags[0] == 1 {
        for ex in examples.iter_mut() {
            ex.signal_block = Some(read_u32(&mut input, "signal blocks")? as usize);
        }
    }
    if flags[1] == 1 {
        let mut previous: Option<Arc<[usize]>> = None;
        for ex in examples.iter_mut() {
            let count = read_u32(&mut input, "null region")? as usize;
            let region = (0..count)
                .map(|_| read_u32(&mut input, "null region").map(|c| c as usize))
                .collect::<Result<Vec<_>>>()?;
            // share storage between consecutive identical regions
            let shared = match &previous {
                Some(p) if **p == region[..] => p.clone(),
                _ => Arc::from(region),
            };
            previous = Some(shared.clone());
            ex.null_region = Some(shared);
        }
    }
    Dataset::new(examples, dim, classes, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_synthetic, BlockSpec};

    #[test]
    fn round_trips_synthetic_data() {
        let spec = BlockSpec::scalar(6, 0.25).unwrap();
        let data = sample_synthetic(&spec, 40, 1).unwrap();
        let mut bytes = Vec::new();
        write_dataset(&data, &mut bytes).unwrap();
        let back = read_dataset(&bytes[..]).unwrap();
        assert_eq!(back.len(), 40);
        assert_eq!(back.dim(), 6);
        for (a, b) in data.examples().iter().zip(back.examples()) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.signal_block, b.signal_block);
            assert_eq!(a.null_region, b.null_region);
            for (x, y) in a.features.iter().zip(&b.features) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
    }

    #[test]
    fn rejects_foreign_and_truncated_input() {
        assert!(matches!(read_dataset(&b"NOPE...."[..]), Err(Error::WrongMagic { .. })));
        let spec = BlockSpec::scalar(2, 0.0).unwrap();
        let mut bytes = Vec::new();
        write_dataset(&sample_synthetic(&spec, 3, 0).unwrap(), &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(read_dataset(&bytes[..]), Err(Error::Truncated(_))));
    }
}
