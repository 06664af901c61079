//! Big-endian IDX containers as used by MNIST.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// Row-major pixels scaled to `[0, 1]`.
    pub images: Vec<Vec<f64>>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let chunk = self.take(4, what)?;
        Ok(u32::from_be_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]))
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Truncated(format!(
                "{what}: need {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len().saturating_sub(self.pos)
            ))),
        }
    }
}

fn check_magic(found: u32, expected: u32) -> Result<()> {
    if found != expected {
        return Err(Error::WrongMagic { expected, found });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let mut cur = Cursor { bytes, pos: 0 };
    check_magic(cur.u32("magic")?, IMAGE_MAGIC)?;
    let n = cur.u32("image count")? as usize;
    let rows = cur.u32("rows")? as usize;
    let cols = cur.u32("cols")? as usize;
    let size = rows * cols;
    let pixels = cur.take(n * size, "pixel payload")?;
    let images = pixels
        .chunks_exact(size.max(1))
        .take(n)
        .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect();
    Ok(IdxImages { rows, cols, images })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut cur = Cursor { bytes, pos: 0 };
    check_magic(cur.u32("magic")?, LABEL_MAGIC)?;
    let n = cur.u32("label count")? as usize;
    Ok(cur.take(n, "label payload")?.to_vec())
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<(IdxImages, Vec<u8>)> {
    let imgs = parse_idx_images(&fs::read(images)?)?;
    let labs = parse_idx_labels(&fs::read(labels)?)?;
    if imgs.images.len() != labs.len() {
        return Err(Error::CountMismatch {
            images: imgs.images.len(),
            labels: labs.len(),
        });
    }
    Ok((imgs, labs))
}

/// Encodes images (raw bytes, row-major) and labels as IDX files.
pub fn write_idx(rows: usize, cols: usize, images: &[Vec<u8>], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGE_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    for im in images {
        assert_eq!(im.len(), rows * cols, "image size does not match header");
        img.extend_from_slice(im);
    }
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_handcrafted_image() {
        let bytes = [0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 255, 0, 0, 255];
        let parsed = parse_idx_images(&bytes).unwrap();
        assert_eq!((parsed.rows, parsed.cols), (2, 2));
        assert_eq!(parsed.images, vec![vec![1.0, 0.0, 0.0, 1.0]]);
    }

    #[test]
    fn wrong_magic_is_reported() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 255, 0, 0, 255];
        assert!(matches!(
            parse_idx_images(&bytes),
            Err(Error::WrongMagic { expected: 2051, found: 2049 })
        ));
    }

    #[test]
    fn truncated_payload_is_reported() {
        let bytes = [0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 255, 0, 0, 255];
        assert!(matches!(parse_idx_images(&bytes), Err(Error::Truncated(_))));
        assert!(matches!(parse_idx_labels(&[0, 0, 8]), Err(Error::Truncated(_))));
    }

    #[test]
    fn count_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (img, _) = write_idx(2, 2, &vec![vec![0u8; 4]; 4], &[0; 4]);
        let (_, lab) = write_idx(2, 2, &[], &[1; 5]);
        let (pi, pl) = (dir.path().join("img"), dir.path().join("lab"));
        fs::write(&pi, img).unwrap();
        fs::write(&pl, lab).unwrap();
        assert!(matches!(
            load_idx(&pi, &pl),
            Err(Error::CountMismatch { images: 4, labels: 5 })
        ));
    }

    proptest! {
        #[test]
        fn writer_round_trips(rows in 1usize..5, cols in 1usize..5, seed in prop::collection::vec(any::<u8>(), 0..60)) {
            let size = rows * cols;
            let images: Vec<Vec<u8>> = seed.chunks_exact(size).map(|c| c.to_vec()).collect();
            let labels: Vec<u8> = (0..images.len()).map(|i| (i % 10) as u8).collect();
            let (ib, lb) = write_idx(rows, cols, &images, &labels);
            let parsed = parse_idx_images(&ib).unwrap();
            prop_assert_eq!(parsed.images.len(), images.len());
            for (a, b) in parsed.images.iter().zip(&images) {
                let back: Vec<u8> = a.iter().map(|v| (v * 255.0).round() as u8).collect();
                prop_assert_eq!(&back, b);
            }
            prop_assert_eq!(parse_idx_labels(&lb).unwrap(), labels);
        }
    }
}
