//! The block distribution: `d` blocks of size `d̃`; one of the first `d/2`
//! blocks carries `y·u*`, every block carries `η·g` with `g` uniform on the
//! unit ball.

use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, Example, Layout};
use crate::rng::{rng_from_seed, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub block_dim: usize,
    pub num_blocks: usize,
    pub noise: f64,
    pub signal_dir: Vec<f64>,
}

impl BlockSpec {
    pub fn new(block_dim: usize, num_blocks: usize, noise: f64, signal_dir: Vec<f64>) -> Result<Self> {
        let spec = Self {
            block_dim,
            num_blocks,
            noise,
            signal_dir,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `d̃ = 1`, `u* = 1`.
    pub fn scalar(num_blocks: usize, noise: f64) -> Result<Self> {
        Self::new(1, num_blocks, noise, vec![1.0])
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_dim == 0 {
            return Err(Error::InvalidConfig("block_dim must be positive".into()));
        }
        if self.num_blocks == 0 || self.num_blocks % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "num_blocks must be a positive even integer, got {}",
                self.num_blocks
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::InvalidConfig(format!("noise must be >= 0, got {}", self.noise)));
        }
        if self.signal_dir.len() != self.block_dim {
            return Err(Error::DimensionMismatch {
                expected: self.block_dim,
                actual: self.signal_dir.len(),
            });
        }
        let norm = crate::stats::norm2(&self.signal_dir);
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "signal direction must be a unit vector (norm {norm})"
            )));
        }
        Ok(())
    }

    /// Input dimension `d·d̃`.
    pub fn dim(&self) -> usize {
        self.block_dim * self.num_blocks
    }

    pub fn signal_blocks(&self) -> usize {
        self.num_blocks / 2
    }

    pub fn block_range(&self, block: usize) -> std::ops::Range<usize> {
        block * self.block_dim..(block + 1) * self.block_dim
    }

    /// Coordinates of the noise blocks `d/2..d`.
    pub fn noise_coords(&self) -> Vec<usize> {
        (self.signal_blocks() * self.block_dim..self.dim()).collect()
    }
}

/// Class index of a signed label: `+1 ↔ 1`, `−1 ↔ 0`.
pub fn class_of_sign(positive: bool) -> usize {
    usize::from(positive)
}

/// Builds one example from explicit draws. `noise_draws[i]` is `g_i`.
pub fn compose_synthetic(
    spec: &BlockSpec,
    positive: bool,
    block: usize,
    noise_draws: &[Vec<f64>],
) -> Result<Example> {
    spec.validate()?;
    if block >= spec.signal_blocks() {
        return Err(Error::IndexOutOfRange {
            index: block,
            dim: spec.signal_blocks(),
        });
    }
    if noise_draws.len() != spec.num_blocks {
        return Err(Error::DimensionMismatch {
            expected: spec.num_blocks,
            actual: noise_draws.len(),
        });
    }
    let y = if positive { 1.0 } else { -1.0 };
    let mut features = vec![0.0; spec.dim()];
    for (i, g) in noise_draws.iter().enumerate() {
        if g.len() != spec.block_dim {
            return Err(Error::DimensionMismatch {
                expected: spec.block_dim,
                actual: g.len(),
            });
        }
        let range = spec.block_range(i);
        for (k, slot) in features[range].iter_mut().enumerate() {
            let noise = if spec.noise == 0.0 { 0.0 } else { spec.noise * g[k] };
            *slot = if i == block { y * spec.signal_dir[k] + noise } else { noise };
        }
    }
    Ok(Example {
        features,
        label: class_of_sign(positive),
        signal_block: Some(block),
        null_region: Some(Arc::from(spec.noise_coords())),
    })
}

pub(crate) fn unit_ball(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = crate::stats::norm2(&g);
        if norm > 0.0 {
            let radius = rng.random::<f64>().powf(1.0 / dim as f64);
            return g.into_iter().map(|v| v * radius / norm).collect();
        }
    }
}

pub fn sample_synthetic(spec: &BlockSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be >= 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let null: Arc<[usize]> = Arc::from(spec.noise_coords());
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let positive = rng.random::<bool>();
        let block = rng.random_range(0..spec.signal_blocks());
        let draws: Vec<Vec<f64>> = (0..spec.num_blocks)
            .map(|_| unit_ball(spec.block_dim, &mut rng))
            .collect();
        let mut ex = compose_synthetic(spec, positive, block, &draws)?;
        ex.null_region = Some(null.clone());
        examples.push(ex);
    }
    Dataset::new(examples, spec.dim(), 2, Some(Layout::Synthetic(spec.clone())))
}
