use crate::data::BlockSpec;
use crate::nn::MlpParams;
use crate::stats::{norm2, pearson};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub pass: bool,
    pub block_norms: Vec<f64>,
    /// `(max − min) / max` over the signal blocks.
    pub signal_spread: f64,
    /// Largest noise-block norm relative to the largest block norm.
    pub noise_ratio: f64,
}

/// Equal, positive norms on the signal blocks and (relatively) vanishing
/// norms on the noise blocks.
pub fn block_structure_check(grad: &[f64], spec: &BlockSpec, tol: f64) -> Result<BlockCheck> {
    if grad.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            actual: grad.len(),
        });
    }
    let block_norms: Vec<f64> = (0..spec.num_blocks)
        .map(|j| norm2(&grad[spec.block_range(j)]))
        .collect();
    let (signal, noise) = block_norms.split_at(spec.signal_blocks());
    let max = block_norms.iter().copied().fold(0.0, f64::max);
    let smax = signal.iter().copied().fold(0.0, f64::max);
    let smin = signal.iter().copied().fold(f64::INFINITY, f64::min);
    let nmax = noise.iter().copied().fold(0.0, f64::max);
    let (signal_spread, noise_ratio) = if max > 0.0 {
        ((smax - smin) / smax.max(f64::MIN_POSITIVE), nmax / max)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Ok(BlockCheck {
        pass: max > 0.0 && smax > 0.0 && signal_spread < tol && nmax < tol * max,
        block_norms,
        signal_spread,
        noise_ratio,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitDiagnostic {
    /// Largest coordinate magnitude of the normalized first-layer row.
    pub alignment: f64,
    /// Magnitude of the unit's outgoing weight(s).
    pub outer_weight: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RichRegime {
    pub units: Vec<UnitDiagnostic>,
    pub negative_bias_fraction: f64,
    /// Pearson correlation of alignment and outer-weight magnitude.
    pub alignment_weight_correlation: Option<f64>,
}

/// Per-unit alignment with the coordinate axes, outgoing weight magnitude and
/// bias for a one-hidden-layer network.
pub fn rich_regime_diagnostics(params: &MlpParams) -> Result<RichRegime> {
    let layers = params.layers();
    if layers.len() != 2 {
        return Err(Error::InvalidConfig(format!(
            "expected one hidden layer, got architecture {:?}",
            params.arch()
        )));
    }
    let (hidden, out) = (&layers[0], &layers[1]);
    let units: Vec<UnitDiagnostic> = (0..hidden.out_dim)
        .map(|k| {
            let row = hidden.row(k);
            let n = norm2(row);
            let alignment = if n > 0.0 {
                row.iter().fold(0.0f64, |m, v| m.max(v.abs())) / n
            } else {
                0.0
            };
            let outer: Vec<f64> = (0..out.out_dim).map(|o| out.row(o)[k]).collect();
            UnitDiagnostic {
                alignment,
                outer_weight: norm2(&outer),
                bias: hidden.bias[k],
            }
        })
        .collect();
    let negative = units.iter().filter(|u| u.bias < 0.0).count();
    let a: Vec<f64> = units.iter().map(|u| u.alignment).collect();
    let w: Vec<f64> = units.iter().map(|u| u.outer_weight).collect();
    Ok(RichRegime {
        negative_bias_fraction: negative as f64 / units.len() as f64,
        alignment_weight_correlation: pearson(&a, &w),
        units,
    })
}
