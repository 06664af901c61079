//! BlockMNIST-style images: a signal block showing the class digit stacked
//! vertically with a class-independent null patch.

use std::path::PathBuf;
use std::sync::Arc;

use rand::Rng as _;

use super::glyph::{make_glyph, make_null_patch, Matrix};
use super::idx::load_idx;
use super::{Dataset, Example, Layout};
use crate::rng::rng_from_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Signal block on top or bottom with equal probability.
    RandomTopOrBottom,
    /// Signal block always on top (BlockMNIST-Top).
    FixedTop,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GlyphSource {
    ProceduralGlyphs,
    IdxFiles { images: PathBuf, labels: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockImageConfig {
    pub block_h: usize,
    pub block_w: usize,
    pub placement: Placement,
    pub glyph_source: GlyphSource,
    /// Digit shown for each class.
    pub class_digits: Vec<u8>,
    pub pixel_range: (f64, f64),
}

impl Default for BlockImageConfig {
    fn default() -> Self {
        Self {
            block_h: 28,
            block_w: 28,
            placement: Placement::RandomTopOrBottom,
            glyph_source: GlyphSource::ProceduralGlyphs,
            class_digits: vec![0, 1],
            pixel_range: (0.0, 1.0),
        }
    }
}

impl BlockImageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_digits.is_empty() {
            return Err(Error::InvalidConfig("class_digits must be non-empty".into()));
        }
        let mut sorted = self.class_digits.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("class_digits must be distinct".into()));
        }
        if let Some(&d) = sorted.iter().find(|&&d| d > 9) {
            return Err(Error::InvalidConfig(format!("digit {d} out of range")));
        }
        if self.pixel_range.0 >= self.pixel_range.1 {
            return Err(Error::InvalidConfig("pixel_range must be increasing".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        2 * self.block_h * self.block_w
    }

    /// Flattened coordinates of the top (0) or bottom (1) block.
    pub fn block_coords(&self, block: usize) -> Vec<usize> {
        let size = self.block_h * self.block_w;
        (block * size..(block + 1) * size).collect()
    }
}

/// Per-class pools of signal images.
enum SignalPool {
    Procedural(Vec<Matrix>),
    Idx { images: Vec<Vec<f64>>, by_class: Vec<Vec<usize>> },
}

impl SignalPool {
    fn build(cfg: &BlockImageConfig) -> Result<Self> {
        match &cfg.glyph_source {
            GlyphSource::ProceduralGlyphs => Ok(SignalPool::Procedural(
                cfg.class_digits
                    .iter()
                    .map(|&d| make_glyph(d, cfg.block_h, cfg.block_w))
                    .collect::<Result<_>>()?,
            )),
            GlyphSource::IdxFiles { images, labels } => {
                let (idx, digits) = load_idx(images, labels)?;
                if idx.rows != cfg.block_h || idx.cols != cfg.block_w {
                    return Err(Error::InvalidConfig(format!(
                        "IDX images are {}x{} but blocks are {}x{}",
                        idx.rows, idx.cols, cfg.block_h, cfg.block_w
                    )));
                }
                let mut by_class = Vec::with_capacity(cfg.class_digits.len());
                for &d in &cfg.class_digits {
                    let members: Vec<usize> = digits
                        .iter()
                        .enumerate()
                        .filter(|(_, &l)| l == d)
                        .map(|(i, _)| i)
                        .collect();
                    if members.is_empty() {
                        return Err(Error::MissingDigit(d));
                    }
                    by_class.push(members);
                }
                Ok(SignalPool::Idx {
                    images: idx.images,
                    by_class,
                })
            }
        }
    }

    fn draw<'a>(&'a self, class: usize, rng: &mut crate::rng::Rng) -> &'a [f64] {
        match self {
            SignalPool::Procedural(glyphs) => &glyphs[class].data,
            SignalPool::Idx { images, by_class } => {
                let members = &by_class[class];
                &images[members[rng.random_range(0..members.len())]]
            }
        }
    }
}

pub fn assemble_block_images(cfg: &BlockImageConfig, n: usize, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be >= 1".into()));
    }
    let patch = make_null_patch(cfg.block_h, cfg.block_w)?;
    let pool = SignalPool::build(cfg)?;
    let null_regions: [Arc<[usize]>; 2] = [
        Arc::from(cfg.block_coords(0)),
        Arc::from(cfg.block_coords(1)),
    ];
    let classes = cfg.class_digits.len();
    let mut rng = rng_from_seed(seed);
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.random_range(0..classes);
        let top = match cfg.placement {
            Placement::RandomTopOrBottom => rng.random::<bool>(),
            Placement::FixedTop => true,
        };
        let signal = pool.draw(class, &mut rng);
        let mut features = Vec::with_capacity(cfg.dim());
        let (signal_block, null_block) = if top { (0, 1) } else { (1, 0) };
        if top {
            features.extend_from_slice(signal);
            features.extend_from_slice(&patch.data);
        } else {
            features.extend_from_slice(&patch.data);
            features.extend_from_slice(signal);
        }
        examples.push(Example {
            features,
            label: class,
            signal_block: Some(signal_block),
            null_region: Some(null_regions[null_block].clone()),
        });
    }
    Dataset::new(examples, cfg.dim(), classes, Some(Layout::Image(cfg.clone())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(placement: Placement) -> BlockImageConfig {
        BlockImageConfig {
            block_h: 14,
            block_w: 14,
            placement,
            ..Default::default()
        }
    }

    #[test]
    fn fixed_top_places_signal_on_top() {
        let data = assemble_block_images(&small(Placement::FixedTop), 10, 0).unwrap();
        assert_eq!(data.dim(), 392);
        for ex in data.examples() {
            assert_eq!(ex.signal_block, Some(0));
            assert_eq!(ex.null_region.as_deref().unwrap()[0], 196);
        }
    }

    #[test]
    fn random_placement_is_balanced() {
        let data = assemble_block_images(&small(Placement::RandomTopOrBottom), 10_000, 5).unwrap();
        let top = data
            .examples()
            .iter()
            .filter(|e| e.signal_block == Some(0))
            .count();
        // binomial(10000, 1/2) has sd 0.005; 0.02 is four sd
        assert!((top as f64 / 1e4 - 0.5).abs() <= 0.02);
    }

    #[test]
    fn null_block_is_the_patch_for_every_label() {
        let cfg = BlockImageConfig {
            class_digits: (0..10).collect(),
            ..small(Placement::RandomTopOrBottom)
        };
        let patch = make_null_patch(14, 14).unwrap();
        let data = assemble_block_images(&cfg, 300, 2).unwrap();
        assert_eq!(data.classes(), 10);
        for ex in data.examples() {
            let null: Vec<f64> = ex
                .null_region
                .as_deref()
                .unwrap()
                .iter()
                .map(|&c| ex.features[c])
                .collect();
            assert_eq!(null, patch.data);
            let sig = data.signal_coords(0).unwrap();
            assert_eq!(sig.len(), 196);
        }
    }

    #[test]
    fn signal_block_shows_class_glyph() {
        let cfg = small(Placement::RandomTopOrBottom);
        let data = assemble_block_images(&cfg, 20, 4).unwrap();
        for ex in data.examples() {
            let glyph = make_glyph(cfg.class_digits[ex.label], 14, 14).unwrap();
            let b = ex.signal_block.unwrap();
            assert_eq!(&ex.features[b * 196..(b + 1) * 196], &glyph.data[..]);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = small(Placement::FixedTop);
        cfg.class_digits = vec![3, 3];
        assert!(assemble_block_images(&cfg, 5, 0).is_err());
        cfg.class_digits = vec![];
        assert!(assemble_block_images(&cfg, 5, 0).is_err());
    }
}
