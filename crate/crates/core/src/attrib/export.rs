use std::io::Write;

use super::{AttributionOrder, AttributionScores};
use crate::{Error, Result};

/// `coordinate,score,rank` rows in coordinate order.
pub fn write_attribution_csv<W: Write>(
    scores: &AttributionScores,
    order: &AttributionOrder,
    mut out: W,
) -> Result<()> {
    if scores.scores.len() != order.len() {
        return Err(Error::DimensionMismatch {
            expected: order.len(),
            actual: scores.scores.len(),
        });
    }
    writeln!(out, "coordinate,score,rank")?;
    for (c, (s, r)) in scores.scores.iter().zip(order.ranks()).enumerate() {
        writeln!(out, "{c},{s},{r}")?;
    }
    Ok(())
}

/// Binary PGM of `|scores|`, scaled so the largest magnitude maps to 255.
pub fn write_heatmap_pgm<W: Write>(
    scores: &[f64],
    rows: usize,
    cols: usize,
    mut out: W,
) -> Result<()> {
    if rows * cols != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: rows * cols,
            actual: scores.len(),
        });
    }
    let max = scores.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let pixels: Vec<u8> = scores
        .iter()
        .map(|s| {
            if max > 0.0 {
                (s.abs() / max * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    write!(out, "P5\n{cols} {rows}\n255\n")?;
    out.write_all(&pixels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attrib::rank_values;
    use crate::nn::GradTarget;

    #[test]
    fn csv_lists_ranks_per_coordinate() {
        let s = AttributionScores {
            scores: vec![0.1, 0.9, 0.5],
            scheme: "t".into(),
            target: GradTarget::LogitOfPredictedLabel,
        };
        let order = rank_values(&s.scores).unwrap();
        let mut buf = Vec::new();
        write_attribution_csv(&s, &order, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "coordinate,score,rank\n0,0.1,2\n1,0.9,0\n2,0.5,1\n"
        );
    }

    #[test]
    fn pgm_scales_magnitudes() {
        let mut buf = Vec::new();
        write_heatmap_pgm(&[0.0, -2.0, 1.0, 2.0, 0.5, 0.0], 2, 3, &mut buf).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&buf[..header.len()], header);
        assert_eq!(&buf[header.len()..], &[0, 255, 128, 255, 64, 0]);
        assert!(write_heatmap_pgm(&[1.0], 2, 2, Vec::new()).is_err());
    }
}
