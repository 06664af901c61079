use crate::{Error, Result};

/// Set of kept coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    coords: Vec<usize>,
    dim: usize,
}

impl MaskSet {
    pub fn new(mut coords: Vec<usize>, dim: usize) -> Result<Self> {
        coords.sort_unstable();
        if let Some(&bad) = coords.iter().find(|&&c| c >= dim) {
            return Err(Error::IndexOutOfRange { index: bad, dim });
        }
        if coords.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("mask set has duplicate coordinates".into()));
        }
        Ok(Self { coords, dim })
    }

    pub fn full(dim: usize) -> Self {
        Self {
            coords: (0..dim).collect(),
            dim,
        }
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            coords: Vec::new(),
            dim,
        }
    }

    pub fn coords(&self) -> &[usize] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn contains(&self, c: usize) -> bool {
        self.coords.binary_search(&c).is_ok()
    }

    pub fn intersection(&self, other: &MaskSet) -> MaskSet {
        MaskSet {
            coords: self
                .coords
                .iter()
                .copied()
                .filter(|&c| other.contains(c))
                .collect(),
            dim: self.dim.min(other.dim),
        }
    }
}

/// Keeps the coordinates in `keep` and zeroes everything else.
pub fn unmask(x: &[f64], keep: &MaskSet) -> Result<Vec<f64>> {
    if keep.dim() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: keep.dim(),
            actual: x.len(),
        });
    }
    let mut out = vec![0.0; x.len()];
    for &c in keep.coords() {
        out[c] = x[c];
    }
    Ok(out)
}
