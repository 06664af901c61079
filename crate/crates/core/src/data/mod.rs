//! Datasets: the synthetic block distribution, BlockMNIST-style images,
//! IDX ingestion, a binary container format and the unmasking operator.

mod container;
mod glyph;
mod idx;
mod images;
mod mask;
pub(crate) mod synthetic;

use std::sync::Arc;

pub use container::{read_dataset, write_dataset};
pub use glyph::{make_glyph, make_null_patch, Matrix};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx, IdxImages};
pub use images::{assemble_block_images, BlockImageConfig, GlyphSource, Placement};
pub use mask::{unmask, MaskSet};
pub use synthetic::{compose_synthetic, sample_synthetic, BlockSpec};

use crate::{Error, Result};

/// One labeled instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
    /// Ground-truth signal block (0-based): a block index of the synthetic
    /// distribution, or 0 = top / 1 = bottom for block images.
    pub signal_block: Option<usize>,
    /// Sorted coordinates of the class-independent region.
    pub null_region: Option<Arc<[usize]>>,
}

impl Example {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self {
            features,
            label,
            signal_block: None,
            null_region: None,
        }
    }
}

/// Which generator produced a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Layout {
    Synthetic(BlockSpec),
    Image(BlockImageConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    dim: usize,
    classes: usize,
    layout: Option<Layout>,
}

impl Dataset {
    pub fn new(
        examples: Vec<Example>,
        dim: usize,
        classes: usize,
        layout: Option<Layout>,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::InvalidConfig("dataset must be non-empty".into()));
        }
        if classes == 0 {
            return Err(Error::InvalidConfig("dataset needs at least one class".into()));
        }
        for ex in &examples {
            if ex.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: ex.features.len(),
                });
            }
            if ex.label >= classes {
                return Err(Error::LabelOutOfRange {
                    label: ex.label,
                    classes,
                });
            }
            if let Some(region) = &ex.null_region {
                if let Some(&bad) = region.iter().find(|&&i| i >= dim) {
                    return Err(Error::IndexOutOfRange { index: bad, dim });
                }
            }
        }
        Ok(Self {
            examples,
            dim,
            classes,
            layout,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layout(&self) -> Option<&Layout> {
        self.layout.as_ref()
    }

    /// Number of model outputs: one logit for binary tasks.
    pub fn output_dim(&self) -> usize {
        if self.classes == 2 {
            1
        } else {
            self.classes
        }
    }

    /// Valid input range for adversarial perturbations (images only).
    pub fn pixel_range(&self) -> Option<(f64, f64)> {
        match &self.layout {
            Some(Layout::Image(cfg)) => Some(cfg.pixel_range),
            _ => None,
        }
    }

    /// `(rows, cols)` of image datasets.
    pub fn image_shape(&self) -> Option<(usize, usize)> {
        match &self.layout {
            Some(Layout::Image(cfg)) => Some((2 * cfg.block_h, cfg.block_w)),
            _ => None,
        }
    }

    /// Coordinates of the ground-truth signal block of example `i`, if known.
    pub fn signal_coords(&self, i: usize) -> Option<Vec<usize>> {
        let block = self.examples.get(i)?.signal_block?;
        let size = match &self.layout {
            Some(Layout::Synthetic(spec)) => spec.block_dim,
            Some(Layout::Image(cfg)) => cfg.block_h * cfg.block_w,
            None => return None,
        };
        Some((block * size..(block + 1) * size).collect())
    }

    /// Same examples with features replaced; labels and bookkeeping are kept.
    pub fn map_features<F>(&self, mut f: F) -> Result<Dataset>
    where
        F: FnMut(usize, &Example) -> Result<Vec<f64>>,
    {
        let examples = self
            .examples
            .iter()
            .enumerate()
            .map(|(i, ex)| {
                Ok(Example {
                    features: f(i, ex)?,
                    ..ex.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(examples, self.dim, self.classes, self.layout.clone())
    }

    /// Fraction of examples in the most frequent class.
    pub fn majority_rate(&self) -> f64 {
        let mut counts = vec![0usize; self.classes];
        for ex in &self.examples {
            counts[ex.label] += 1;
        }
        *counts.iter().max().unwrap() as f64 / self.len() as f64
    }
}
