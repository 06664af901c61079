//! Model checkpoints.
//!
//! ```text
//! magic    4 bytes "DRMP"
//! version  u32 LE  1
//! layers   u32 LE  L
//! arch     (L+1) u32 LE widths, input first
//! per layer: out*in f64 LE weights (row-major), then out f64 LE biases
//! ```

use std::io::{Read, Write};

use super::{Dense, MlpParams};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"DRMP";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &MlpParams, mut out: W) -> Result<()> {
    let arch = params.arch();
    let mut buf = Vec::with_capacity(16 + 8 * params.num_params());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.layers().len() as u32).to_le_bytes());
    for w in arch {
        buf.extend_from_slice(&(w as u32).to_le_bytes());
    }
    for layer in params.layers() {
        for v in layer.weight.iter().chain(&layer.bias) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

fn truncated(what: &str) -> Error {
    Error::Truncated(format!("checkpoint: {what}"))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| truncated(what))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut raw = vec![0u8; n * 8];
    r.read_exact(&mut raw).map_err(|_| truncated("parameters"))?;
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<MlpParams> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(|_| truncated("magic"))?;
    if &magic != MAGIC {
        return Err(Error::WrongMagic {
            expected: u32::from_be_bytes(*MAGIC),
            found: u32::from_be_bytes(magic),
        });
    }
    let version = read_u32(&mut input, "version")?;
    if version != VERSION {
        return Err(Error::InvalidConfig(format!("unsupported checkpoint version {version}")));
    }
    let n_layers = read_u32(&mut input, "layer count")? as usize;
    let arch = (0..=n_layers)
        .map(|_| read_u32(&mut input, "architecture").map(|w| w as usize))
        .collect::<Result<Vec<_>>>()?;
    let layers = arch
        .windows(2)
        .map(|w| {
            let weight = read_f64s(&mut input, w[0] * w[1])?;
            let bias = read_f64s(&mut input, w[1])?;
            Dense::new(w[1], w[0], weight, bias)
        })
        .collect::<Result<Vec<_>>>()?;
    MlpParams::new(layers)
}
