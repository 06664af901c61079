//! Attribution schemes: each maps an input to per-coordinate scores, and
//! [`rank`] turns scores into a coordinate ordering (most important first).

mod export;

pub use export::{write_attribution_csv, write_heatmap_pgm};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::{Dataset, MaskSet};
use crate::nn::{predict, GradTarget, MlpParams};
use crate::rng::{rng_from_seed, SeedStream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionScores {
    pub scores: Vec<f64>,
    pub scheme: String,
    pub target: GradTarget,
}

/// A permutation of `0..D`, most important coordinate first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AttributionOrder {
    perm: Vec<usize>,
}

impl AttributionOrder {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidConfig(format!(
                    "not a permutation of 0..{}",
                    perm.len()
                )));
            }
        }
        Ok(Self { perm })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            perm: (0..dim).collect(),
        }
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn reversed(&self) -> Self {
        Self {
            perm: self.perm.iter().rev().copied().collect(),
        }
    }

    /// Rank (0 = most important) of every coordinate.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![0; self.perm.len()];
        for (i, &c) in self.perm.iter().enumerate() {
            r[c] = i;
        }
        r
    }
}

/// Descending order of scores; ties go to the lower coordinate index.
pub fn rank(scores: &AttributionScores) -> Result<AttributionOrder> {
    rank_values(&scores.scores)
}

pub fn rank_values(scores: &[f64]) -> Result<AttributionOrder> {
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("attribution score {i} is NaN")));
    }
    let mut perm: Vec<usize> = (0..scores.len()).collect();
    perm.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    Ok(AttributionOrder { perm })
}

fn finish(g: &[f64], x: &[f64], signed: bool) -> Vec<f64> {
    if signed {
        g.iter()
            .zip(x)
            .map(|(gi, xi)| if *xi == 0.0 { 0.0 } else { xi.signum() * gi })
            .collect()
    } else {
        g.iter().map(|v| v.abs()).collect()
    }
}

/// `|g|`, or `sgn(x) ⊙ g` when `signed`, for the input gradient `g`.
pub fn grad_scores(
    params: &MlpParams,
    x: &[f64],
    target: GradTarget,
    signed: bool,
) -> Result<AttributionScores> {
    let g = params.input_gradient(x, target)?;
    Ok(AttributionScores {
        scores: finish(&g, x, signed),
        scheme: if signed { "signed-gradient" } else { "gradient" }.into(),
        target,
    })
}

/// Mean input gradient at `x + N(0, σ²I)` over `n_samples` draws, scored as
/// in [`grad_scores`]. Signed gradients are averaged before taking magnitudes;
/// the label is the prediction at the unperturbed `x`.
pub fn smoothgrad(
    params: &MlpParams,
    x: &[f64],
    target: GradTarget,
    sigma: f64,
    n_samples: usize,
    seed: u64,
    signed: bool,
) -> Result<AttributionScores> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig("smoothgrad needs n_samples >= 1".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig("smoothgrad sigma must be non-negative".into()));
    }
    let mean = if sigma == 0.0 {
        params.input_gradient(x, target)?
    } else {
        let label = params.predict(x)?;
        let mut rng = rng_from_seed(seed);
        let mut acc = vec![0.0; x.len()];
        let mut noisy = vec![0.0; x.len()];
        for _ in 0..n_samples {
            for (n, xi) in noisy.iter_mut().zip(x) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *n = xi + sigma * z;
            }
            let g = params.input_gradient_at_label(&noisy, label, target)?;
            acc.iter_mut().zip(&g).for_each(|(a, gi)| *a += gi);
        }
        acc.iter_mut().for_each(|a| *a /= n_samples as f64);
        acc
    };
    Ok(AttributionScores {
        scores: finish(&mean, x, signed),
        scheme: "smoothgrad".into(),
        target,
    })
}

/// Signed Integrated Gradients terms `(x − b) ⊙ mean_t ∇(b + t(x − b))`
/// with midpoints `t = (s + ½)/n`. The label is fixed to the prediction at `x`.
pub fn integrated_gradient_terms(
    params: &MlpParams,
    x: &[f64],
    baseline: &[f64],
    target: GradTarget,
    n_steps: usize,
) -> Result<Vec<f64>> {
    if n_steps == 0 {
        return Err(Error::InvalidConfig("integrated gradients needs n_steps >= 1".into()));
    }
    if baseline.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: baseline.len(),
        });
    }
    let label = params.predict(x)?;
    let delta: Vec<f64> = x.iter().zip(baseline).map(|(a, b)| a - b).collect();
    let mut acc = vec![0.0; x.len()];
    let mut point = vec![0.0; x.len()];
    for s in 0..n_steps {
        let t = (s as f64 + 0.5) / n_steps as f64;
        for ((p, b), d) in point.iter_mut().zip(baseline).zip(&delta) {
            *p = b + t * d;
        }
        let g = params.input_gradient_at_label(&point, label, target)?;
        acc.iter_mut().zip(&g).for_each(|(a, gi)| *a += gi);
    }
    Ok(acc
        .iter()
        .zip(&delta)
        .map(|(a, d)| d * a / n_steps as f64)
        .collect())
}

/// Magnitudes of [`integrated_gradient_terms`] against the all-zero baseline.
pub fn integrated_gradients(
    params: &MlpParams,
    x: &[f64],
    target: GradTarget,
    n_steps: usize,
) -> Result<AttributionScores> {
    let terms = integrated_gradient_terms(params, x, &vec![0.0; x.len()], target, n_steps)?;
    Ok(AttributionScores {
        scores: terms.iter().map(|v| v.abs()).collect(),
        scheme: "integrated-gradients".into(),
        target,
    })
}

/// For every pixel, the mean drop in the target over all `patch × patch`
/// windows (stride 1) that cover it, where the window is set to zero.
/// The target label is the prediction at the unoccluded input.
pub fn occlusion(
    params: &MlpParams,
    x: &[f64],
    target: GradTarget,
    patch: usize,
    image_shape: (usize, usize),
) -> Result<AttributionScores> {
    let (rows, cols) = image_shape;
    if rows * cols != x.len() {
        return Err(Error::DimensionMismatch {
            expected: rows * cols,
            actual: x.len(),
        });
    }
    if patch == 0 || patch > rows || patch > cols {
        return Err(Error::InvalidConfig(format!(
            "occlusion patch {patch} does not fit a {rows}x{cols} image"
        )));
    }
    let logits = params.logits(x)?;
    let label = predict(&logits);
    let base = MlpParams::target_value(&logits, label, target)?;
    let mut sum = vec![0.0; x.len()];
    let mut count = vec![0u32; x.len()];
    let mut occluded = x.to_vec();
    for top in 0..=rows - patch {
        for left in 0..=cols - patch {
            let cells = || {
                (top..top + patch).flat_map(move |r| (left..left + patch).map(move |c| r * cols + c))
            };
            cells().for_each(|i| occluded[i] = 0.0);
            let v = MlpParams::target_value(&params.logits(&occluded)?, label, target)?;
            for i in cells() {
                occluded[i] = x[i];
                sum[i] += base - v;
                count[i] += 1;
            }
        }
    }
    Ok(AttributionScores {
        scores: sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect(),
        scheme: "occlusion".into(),
        target,
    })
}

/// Magnitudes of guided backpropagation of the predicted label's logit.
pub fn guided_backprop_scores(params: &MlpParams, x: &[f64]) -> Result<AttributionScores> {
    let g = params.guided_backprop(x)?;
    Ok(AttributionScores {
        scores: g.iter().map(|v| v.abs()).collect(),
        scheme: "guided-backprop".into(),
        target: GradTarget::LogitOfPredictedLabel,
    })
}

/// Uniformly random ordering.
pub fn random_attribution(dim: usize, seed: u64) -> AttributionOrder {
    let mut perm: Vec<usize> = (0..dim).collect();
    perm.shuffle(&mut rng_from_seed(seed));
    AttributionOrder { perm }
}

/// `⌈k·D⌉`, guarding against products like `0.3 · 10 = 3.0000000000000004`.
pub fn mask_size(k: f64, dim: usize) -> Result<usize> {
    if !(k > 0.0 && k <= 1.0) {
        return Err(Error::InvalidConfig(format!("unmasking fraction {k} not in (0, 1]")));
    }
    let raw = k * dim as f64;
    let n = (raw - 1e-9 * raw.max(1.0)).ceil().max(0.0) as usize;
    Ok(n.min(dim))
}

/// First and last `⌈k·D⌉` coordinates of the ordering.
pub fn top_bottom_sets(order: &AttributionOrder, k: f64) -> Result<(MaskSet, MaskSet)> {
    let dim = order.len();
    let n = mask_size(k, dim)?;
    let top = MaskSet::new(order.perm[..n].to_vec(), dim)?;
    let bottom = MaskSet::new(order.perm[dim - n..].to_vec(), dim)?;
    Ok((top, bottom))
}

/// An attribution scheme applied example by example.
#[derive(Debug, Clone, PartialEq)]
pub enum Scheme {
    Gradient { target: GradTarget, signed: bool },
    SmoothGrad { target: GradTarget, sigma: f64, n_samples: usize, signed: bool },
    IntegratedGradients { target: GradTarget, n_steps: usize },
    Occlusion { target: GradTarget, patch: usize },
    GuidedBackprop,
    Random,
    /// Ground-truth signal block first (ascending), remaining coordinates after.
    Oracle,
    /// The oracle ordering reversed.
    AntiOracle,
}

fn target_tag(t: GradTarget) -> &'static str {
    match t {
        GradTarget::LossAtPredictedLabel => "loss",
        GradTarget::LogitOfPredictedLabel => "logit",
    }
}

impl Scheme {
    pub fn id(&self) -> String {
        match self {
            Scheme::Gradient { target, signed } => format!(
                "{}grad-{}",
                if *signed { "signed-" } else { "" },
                target_tag(*target)
            ),
            Scheme::SmoothGrad {
                target,
                sigma,
                signed,
                ..
            } => format!(
                "{}smoothgrad-{}-s{sigma}",
                if *signed { "signed-" } else { "" },
                target_tag(*target)
            ),
            Scheme::IntegratedGradients { target, .. } => format!("ig-{}", target_tag(*target)),
            Scheme::Occlusion { target, patch } => format!("occlusion{patch}-{}", target_tag(*target)),
            Scheme::GuidedBackprop => "guided-backprop".into(),
            Scheme::Random => "random".into(),
            Scheme::Oracle => "oracle".into(),
            Scheme::AntiOracle => "anti-oracle".into(),
        }
    }

    /// Whether the ordering depends on the seed.
    pub fn is_stochastic(&self) -> bool {
        matches!(self, Scheme::Random | Scheme::SmoothGrad { .. })
    }

    /// Whether the ordering depends on a model at all.
    pub fn uses_model(&self) -> bool {
        !matches!(self, Scheme::Random | Scheme::Oracle | Scheme::AntiOracle)
    }

    /// Scores of example `index` of `data`; `None` for schemes that produce
    /// an ordering directly.
    pub fn scores(
        &self,
        params: &MlpParams,
        data: &Dataset,
        index: usize,
        seed: u64,
    ) -> Result<Option<AttributionScores>> {
        let x = &data.examples()[index].features;
        let stream = SeedStream::new(seed).child(&self.id());
        Ok(Some(match self {
            Scheme::Gradient { target, signed } => grad_scores(params, x, *target, *signed)?,
            Scheme::SmoothGrad {
                target,
                sigma,
                n_samples,
                signed,
            } => smoothgrad(params, x, *target, *sigma, *n_samples, stream.seed(index as u64), *signed)?,
            Scheme::IntegratedGradients { target, n_steps } => {
                integrated_gradients(params, x, *target, *n_steps)?
            }
            Scheme::Occlusion { target, patch } => {
                let shape = data.image_shape().ok_or_else(|| {
                    Error::InvalidConfig("occlusion needs an image dataset".into())
                })?;
                occlusion(params, x, *target, *patch, shape)?
            }
            Scheme::GuidedBackprop => guided_backprop_scores(params, x)?,
            Scheme::Random | Scheme::Oracle | Scheme::AntiOracle => return Ok(None),
        }))
    }

    /// Ordering for example `index` of `data`.
    pub fn order(
        &self,
        params: &MlpParams,
        data: &Dataset,
        index: usize,
        seed: u64,
    ) -> Result<AttributionOrder> {
        match self {
            Scheme::Random => {
                let stream = SeedStream::new(seed).child("random");
                Ok(random_attribution(data.dim(), stream.seed(index as u64)))
            }
            Scheme::Oracle | Scheme::AntiOracle => {
                let signal = data.signal_coords(index).ok_or_else(|| {
                    Error::InvalidConfig("oracle ordering needs ground-truth signal blocks".into())
                })?;
                let mut is_signal = vec![false; data.dim()];
                signal.iter().for_each(|&c| is_signal[c] = true);
                let perm = signal
                    .iter()
                    .copied()
                    .chain((0..data.dim()).filter(|&c| !is_signal[c]))
                    .collect();
                let order = AttributionOrder { perm };
                Ok(if *self == Scheme::AntiOracle {
                    order.reversed()
                } else {
                    order
                })
            }
            _ => rank(&self.scores(params, data, index, seed)?.expect("score-based scheme")),
        }
    }
}

/// Orderings for every example of `data`, computed in parallel.
pub fn attribute_dataset(
    params: &MlpParams,
    data: &Dataset,
    scheme: &Scheme,
    seed: u64,
) -> Result<Vec<AttributionOrder>> {
    if scheme.uses_model() && params.input_dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            actual: data.dim(),
        });
    }
    (0..data.len())
        .into_par_iter()
        .map(|i| scheme.order(params, data, i, seed))
        .collect()
}
