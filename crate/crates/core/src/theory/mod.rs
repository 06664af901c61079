//! Finite measures over two-layer ReLU neurons, the closed-form max-margin
//! candidates for the block distribution, and numerical checks of their
//! optimality conditions and input-gradient structure.

mod diagnostics;
mod support;

pub use diagnostics::{block_structure_check, rich_regime_diagnostics, BlockCheck, RichRegime, UnitDiagnostic};
pub use support::{
    margin, p_star_points, verify_support_condition, LabeledPoint, MarginFragment, MarginMode,
    MarginReport, RestartRecord, StartKind, Verdict,
};

use crate::data::BlockSpec;
use crate::nn::sigmoid;
use crate::stats::dot;
use crate::{Error, Result};

/// `ReLU(a + b) − ReLU(−a + b)` in closed piecewise form.
pub fn psi(a: f64, b: f64) -> f64 {
    if a >= b.abs() {
        a + b
    } else if a <= -b.abs() {
        a - b
    } else if b >= 0.0 {
        2.0 * a
    } else {
        0.0
    }
}

/// One neuron `x ↦ w·ReLU(⟨r, x⟩ + b)` with its probability mass.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronAtom {
    pub w: f64,
    pub r: Vec<f64>,
    pub b: f64,
    pub mass: f64,
}

impl NeuronAtom {
    pub fn new(w: f64, r: Vec<f64>, b: f64, mass: f64) -> Result<Self> {
        let atom = Self { w, r, b, mass };
        if !(mass > 0.0) {
            return Err(Error::InvalidConfig(format!("atom mass {mass} must be positive")));
        }
        if (atom.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "atom norm {} is not 1",
                atom.norm()
            )));
        }
        Ok(atom)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + dot(&self.r, &self.r) + self.b * self.b).sqrt()
    }

    pub fn pre_activation(&self, x: &[f64]) -> f64 {
        dot(&self.r, x) + self.b
    }

    /// `(w, r, b)` as one vector on the unit sphere.
    pub fn to_vec(&self) -> Vec<f64> {
        std::iter::once(self.w)
            .chain(self.r.iter().copied())
            .chain(std::iter::once(self.b))
            .collect()
    }
}

/// A finitely supported probability measure over neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    atoms: Vec<NeuronAtom>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<NeuronAtom>) -> Result<Self> {
        let Some(first) = atoms.first() else {
            return Err(Error::InvalidConfig("measure needs at least one atom".into()));
        };
        let dim = first.r.len();
        if let Some(a) = atoms.iter().find(|a| a.r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: a.r.len(),
            });
        }
        let total: f64 = atoms.iter().map(|a| a.mass).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!("masses sum to {total}, not 1")));
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[NeuronAtom] {
        &self.atoms
    }

    pub fn input_dim(&self) -> usize {
        self.atoms[0].r.len()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }
}

/// `Σ mass·w·ReLU(⟨r, x⟩ + b)`.
pub fn measure_output(nu: &DiscreteMeasure, x: &[f64]) -> Result<f64> {
    nu.check(x)?;
    Ok(nu
        .atoms
        .iter()
        .map(|a| a.mass * a.w * a.pre_activation(x).max(0.0))
        .sum())
}

/// Logistic loss `log(1 + exp(−y·f(x)))` for `y = ±1`.
pub fn measure_loss(nu: &DiscreteMeasure, x: &[f64], y: f64) -> Result<f64> {
    Ok(crate::nn::softplus(-y * measure_output(nu, x)?))
}

/// Input gradient of [`measure_loss`]; the ReLU derivative at 0 is 0.
pub fn measure_input_gradient(nu: &DiscreteMeasure, x: &[f64], y: f64) -> Result<Vec<f64>> {
    let f = measure_output(nu, x)?;
    let scale = -y * sigmoid(-y * f);
    let mut g = vec![0.0; x.len()];
    for a in &nu.atoms {
        if a.pre_activation(x) > 0.0 {
            let c = scale * a.mass * a.w;
            g.iter_mut().zip(&a.r).for_each(|(gi, ri)| *gi += c * ri);
        }
    }
    Ok(g)
}

/// `d/2` copies of the signal direction followed by `d/2` zero blocks.
pub fn signal_template(spec: &BlockSpec) -> Vec<f64> {
    let mut z = vec![0.0; spec.dim()];
    for j in 0..spec.signal_blocks() {
        z[spec.block_range(j)].copy_from_slice(&spec.signal_dir);
    }
    z
}

/// Closed-form margin `(1 − ηd/2) / (2·√(d/2 + (1 − ηd/2)²))` of the
/// standard candidate.
pub fn standard_margin(spec: &BlockSpec) -> f64 {
    let b = 1.0 - spec.noise * spec.num_blocks as f64 / 2.0;
    b / (2.0 * (spec.num_blocks as f64 / 2.0 + b * b).sqrt())
}

/// The two-atom max-margin measure `½δ(θ₁) + ½δ(θ₂)` with
/// `θ₁ = (1/√2, s·z, (1 − ηd/2)·s)`, `θ₂ = (−1/√2, −s·z, (1 − ηd/2)·s)` and
/// `s = 1/√(2(d/2 + (1 − ηd/2)²))`.
pub fn standard_candidate(spec: &BlockSpec) -> Result<DiscreteMeasure> {
    spec.validate()?;
    let d = spec.num_blocks as f64;
    if spec.noise >= 1.0 / (10.0 * d) {
        return Err(Error::InvalidConfig(format!(
            "noise {} must be below 1/(10d) = {}",
            spec.noise,
            1.0 / (10.0 * d)
        )));
    }
    let b = 1.0 - spec.noise * d / 2.0;
    let s = 1.0 / (2.0 * (d / 2.0 + b * b)).sqrt();
    let z = signal_template(spec);
    let w = std::f64::consts::FRAC_1_SQRT_2;
    DiscreteMeasure::new(vec![
        NeuronAtom::new(w, z.iter().map(|v| s * v).collect(), b * s, 0.5)?,
        NeuronAtom::new(-w, z.iter().map(|v| -s * v).collect(), b * s, 0.5)?,
    ])
}

/// `(1/d)·Σ_i δ(θᵢ) + δ(θ'ᵢ)` over the signal coordinates `i < d/2`, with
/// `θᵢ = (1/√2, (3/√20)·eᵢ, −1/√20)` and `θ'ᵢ = (−1/√2, −(3/√20)·eᵢ, −1/√20)`,
/// for scalar blocks.
pub fn adversarial_candidate(num_blocks: usize) -> Result<DiscreteMeasure> {
    if num_blocks == 0 || num_blocks % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "number of blocks {num_blocks} must be positive and even"
        )));
    }
    let w = std::f64::consts::FRAC_1_SQRT_2;
    let r = 3.0 / 20f64.sqrt();
    let b = -1.0 / 20f64.sqrt();
    let mass = 1.0 / num_blocks as f64;
    let mut atoms = Vec::with_capacity(num_blocks);
    for i in 0..num_blocks / 2 {
        for sign in [1.0, -1.0] {
            let mut dir = vec![0.0; num_blocks];
            dir[i] = sign * r;
            atoms.push(NeuronAtom::new(sign * w, dir, b, mass)?);
        }
    }
    DiscreteMeasure::new(atoms)
}
