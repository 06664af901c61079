//! Procedural image blocks: the class-independent null patch and a stroke
//! font for digits, so image experiments run without external data.

use std::f64::consts::PI;

use crate::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
}

const MIN_SIDE: usize = 8;

fn check_size(h: usize, w: usize) -> Result<()> {
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(Error::InvalidConfig(format!(
            "block must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Square outline inset by a quarter of the block on each side, plus both
/// diagonals of that square. Lines are one pixel wide at intensity 1.
pub fn make_null_patch(h: usize, w: usize) -> Result<Matrix> {
    check_size(h, w)?;
    let (top, left) = (h / 4, w / 4);
    let (bottom, right) = (h - 1 - top, w - 1 - left);
    let mut m = Matrix::zeros(h, w);
    for c in left..=right {
        m.set(top, c, 1.0);
        m.set(bottom, c, 1.0);
    }
    for r in top..=bottom {
        m.set(r, left, 1.0);
        m.set(r, right, 1.0);
    }
    let (rh, cw) = (bottom - top, right - left);
    let steps = rh.max(cw);
    for t in 0..=steps {
        let r = top + (t * rh + steps / 2) / steps;
        let dc = (t * cw + steps / 2) / steps;
        m.set(r, left + dc, 1.0);
        m.set(r, right - dc, 1.0);
    }
    Ok(m)
}

type Stroke = Vec<(f64, f64)>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64) -> Stroke {
    const SEGMENTS: usize = 24;
    (0..=SEGMENTS)
        .map(|t| {
            let a = (from_deg + (to_deg - from_deg) * t as f64 / SEGMENTS as f64) * PI / 180.0;
            (cx + rx * a.cos(), cy - ry * a.sin())
        })
        .collect()
}

fn chain(parts: &[Stroke]) -> Stroke {
    parts.iter().flatten().copied().collect()
}

/// Polylines in unit coordinates (x right, y down).
fn strokes(digit: u8) -> Vec<Stroke> {
    match digit {
        0 => vec![arc(0.5, 0.5, 0.28, 0.38, 0.0, 360.0)],
        1 => vec![vec![(0.45, 0.22), (0.66, 0.1), (0.66, 0.9)]],
        2 => vec![chain(&[
            arc(0.5, 0.3, 0.24, 0.2, 170.0, -40.0),
            vec![(0.22, 0.88), (0.8, 0.88)],
        ])],
        3 => vec![
            arc(0.5, 0.3, 0.24, 0.19, 160.0, -90.0),
            arc(0.5, 0.69, 0.26, 0.2, 90.0, -160.0),
        ],
        4 => vec![vec![(0.62, 0.9), (0.62, 0.1), (0.18, 0.64), (0.84, 0.64)]],
        5 => vec![chain(&[
            vec![(0.78, 0.1), (0.3, 0.1), (0.26, 0.46)],
            arc(0.48, 0.66, 0.28, 0.23, 135.0, -150.0),
        ])],
        6 => {
            let mut hook = arc(0.72, 0.55, 0.44, 0.45, 80.0, 180.0);
            hook.pop();
            vec![chain(&[hook, arc(0.5, 0.68, 0.25, 0.21, 180.0, 540.0)])]
        }
        7 => vec![vec![(0.18, 0.1), (0.82, 0.1), (0.38, 0.9)]],
        8 => vec![
            arc(0.5, 0.28, 0.2, 0.17, 0.0, 360.0),
            arc(0.5, 0.7, 0.26, 0.2, 0.0, 360.0),
        ],
        9 => vec![
            arc(0.5, 0.32, 0.25, 0.21, 0.0, 360.0),
            arc(0.28, 0.45, 0.47, 0.45, 0.0, -100.0),
        ],
        _ => unreachable!(),
    }
}

const STROKE_WIDTH: f64 = 0.12;

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// Renders a digit as thick strokes scaled to the block. Pixels within half
/// a stroke width of a stroke are 1, all others 0.
pub fn make_glyph(digit: u8, h: usize, w: usize) -> Result<Matrix> {
    if digit > 9 {
        return Err(Error::InvalidConfig(format!("digit must be in 0..=9, got {digit}")));
    }
    check_size(h, w)?;
    let strokes = strokes(digit);
    let mut m = Matrix::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let p = ((c as f64 + 0.5) / w as f64, (r as f64 + 0.5) / h as f64);
            let hit = strokes.iter().any(|s| {
                s.windows(2)
                    .any(|seg| segment_distance(p, seg[0], seg[1]) <= STROKE_WIDTH / 2.0)
            });
            if hit {
                m.set(r, c, 1.0);
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    fn lit(m: &Matrix) -> BTreeSet<(usize, usize)> {
        (0..m.rows)
            .flat_map(|r| (0..m.cols).map(move |c| (r, c)))
            .filter(|&(r, c)| m.get(r, c) != 0.0)
            .collect()
    }

    fn expected_patch(lo: usize, hi: usize) -> BTreeSet<(usize, usize)> {
        let mut s = BTreeSet::new();
        for i in lo..=hi {
            s.insert((lo, i));
            s.insert((hi, i));
            s.insert((i, lo));
            s.insert((i, hi));
            s.insert((i, i));
            s.insert((i, lo + hi - i));
        }
        s
    }

    #[test]
    fn null_patch_28() {
        let m = make_null_patch(28, 28).unwrap();
        assert_eq!(lit(&m), expected_patch(7, 20));
        assert!(m.data.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn null_patch_8() {
        assert_eq!(lit(&make_null_patch(8, 8).unwrap()), expected_patch(2, 5));
    }

    #[test]
    fn null_patch_is_deterministic() {
        assert_eq!(make_null_patch(14, 14).unwrap(), make_null_patch(14, 14).unwrap());
        assert!(make_null_patch(7, 14).is_err());
    }

    #[test]
    fn one_is_a_vertical_stroke_on_the_right() {
        let m = make_glyph(1, 28, 28).unwrap();
        let pixels = lit(&m);
        let right = pixels.iter().filter(|&&(_, c)| c >= 14).count();
        assert!(right as f64 > 0.8 * pixels.len() as f64);
        // a column in the right half is lit across most of the height
        let best_col = (14..28)
            .map(|c| (0..28).filter(|&r| m.get(r, c) > 0.0).count())
            .max()
            .unwrap();
        assert!(best_col >= 20);
    }

    #[test]
    fn distinct_digits_differ_in_ten_percent_of_pixels() {
        for size in [28usize, 14] {
            let glyphs: Vec<_> = (0..10).map(|d| make_glyph(d, size, size).unwrap()).collect();
            for a in 0..10 {
                for b in a + 1..10 {
                    let diff = glyphs[a]
                        .data
                        .iter()
                        .zip(&glyphs[b].data)
                        .filter(|(x, y)| (**x > 0.5) != (**y > 0.5))
                        .count();
                    assert!(
                        diff as f64 >= 0.10 * (size * size) as f64,
                        "digits {a},{b} at {size}: {diff} differing pixels"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_and_one_differ() {
        let (z, o) = (make_glyph(0, 28, 28).unwrap(), make_glyph(1, 28, 28).unwrap());
        let diff = z.data.iter().zip(&o.data).filter(|(a, b)| a != b).count();
        assert!(diff >= 79);
    }

    #[test]
    fn glyphs_are_deterministic_and_bounded() {
        let g = make_glyph(7, 20, 16).unwrap();
        assert_eq!(g, make_glyph(7, 20, 16).unwrap());
        assert!(g.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(make_glyph(10, 28, 28).is_err());
    }
}
