//! Margins of a measure and the sphere-ascent check of the optimality
//! certificate: no single neuron may beat the candidate's margin on the
//! dual distribution `p*`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{measure_output, DiscreteMeasure};
use crate::data::{sample_synthetic, BlockSpec};
use crate::rng::SeedStream;
use crate::stats::{dot, norm2};
use crate::{Error, Result};

/// An input with a `±1` label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub x: Vec<f64>,
    pub y: f64,
}

/// `p*`: for every signal block `j` and `y = ±1`, the point `y·ũⱼ` where
/// `ũⱼ` carries `(1 − η)u*` in block `j`, `−ηu*` in the other signal blocks
/// and zeros elsewhere. These are the support points with the smallest
/// margin; at `η = 0` they are the whole support of the distribution.
pub fn p_star_points(spec: &BlockSpec) -> Result<Vec<LabeledPoint>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.num_blocks);
    for j in 0..spec.signal_blocks() {
        let mut u = vec![0.0; spec.dim()];
        for i in 0..spec.signal_blocks() {
            let c = if i == j { 1.0 - spec.noise } else { -spec.noise };
            for (v, s) in u[spec.block_range(i)].iter_mut().zip(&spec.signal_dir) {
                *v = c * s;
            }
        }
        for y in [1.0, -1.0] {
            out.push(LabeledPoint {
                x: u.iter().map(|v| y * v).collect(),
                y,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarginMode {
    /// Enumerate the finite support; only valid without noise.
    ExactSupport,
    /// Enumerate the minimal-margin support points [`p_star_points`].
    WorstCase,
    /// Minimum over `n` fresh samples (an upper bound on the margin).
    Sampled { n: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginFragment {
    pub margin: f64,
    /// `y·f(x)` for every point checked.
    pub per_point: Vec<f64>,
}

pub fn margin(nu: &DiscreteMeasure, spec: &BlockSpec, mode: MarginMode) -> Result<MarginFragment> {
    let points = match mode {
        MarginMode::ExactSupport => {
            if spec.noise != 0.0 {
                return Err(Error::InvalidConfig(
                    "exact support enumeration needs zero noise".into(),
                ));
            }
            p_star_points(spec)?
        }
        MarginMode::WorstCase => p_star_points(spec)?,
        MarginMode::Sampled { n, seed } => sample_synthetic(spec, n, seed)?
            .examples()
            .iter()
            .map(|ex| LabeledPoint {
                x: ex.features.clone(),
                y: crate::nn::signed_label(ex.label),
            })
            .collect(),
    };
    let per_point = points
        .iter()
        .map(|p| Ok(p.y * measure_output(nu, &p.x)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(MarginFragment {
        margin: per_point.iter().copied().fold(f64::INFINITY, f64::min),
        per_point,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartKind {
    CandidateAtom,
    Axis,
    ClassMean,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartRecord {
    pub index: usize,
    pub kind: StartKind,
    pub objective: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginReport {
    /// `E_{p*}[y·f(ν, x)]`.
    pub candidate_margin: f64,
    /// Objective of every candidate atom.
    pub atom_objectives: Vec<f64>,
    pub best_found_objective: f64,
    pub n_restarts: usize,
    pub tolerance: f64,
    pub verdict: Verdict,
    /// `y·f(ν, x)` over the `p*` points.
    pub support_margins: Vec<f64>,
    pub restarts: Vec<RestartRecord>,
    /// Only structured starts were searched.
    pub low_confidence: bool,
}

struct Objective<'a> {
    points: &'a [LabeledPoint],
}

impl Objective<'_> {
    /// `E_{p*}[y·w·ReLU(⟨r, x⟩ + b)]` for `θ = (w, r, b)`.
    fn value(&self, theta: &[f64]) -> f64 {
        let (w, r, b) = split(theta);
        let h: f64 = self
            .points
            .iter()
            .map(|p| p.y * (dot(r, &p.x) + b).max(0.0))
            .sum();
        w * h / self.points.len() as f64
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let (w, r, b) = split(theta);
        let n = self.points.len() as f64;
        let mut g = vec![0.0; theta.len()];
        let last = theta.len() - 1;
        for p in self.points {
            let pre = dot(r, &p.x) + b;
            if pre > 0.0 {
                g[0] += p.y * pre / n;
                let c = w * p.y / n;
                g[1..last].iter_mut().zip(&p.x).for_each(|(gi, xi)| *gi += c * xi);
                g[last] += c;
            }
        }
        g
    }
}

fn split(theta: &[f64]) -> (f64, &[f64], f64) {
    let last = theta.len() - 1;
    (theta[0], &theta[1..last], theta[last])
}

fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let n = norm2(&v);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(v)
}

const MAX_ITERS: usize = 5000;

/// Riemannian gradient ascent on the unit sphere with step halving.
/// Returns the final objective and whether the step size collapsed (a
/// stationary point up to resolution) within the iteration budget.
fn ascend(obj: &Objective, start: Vec<f64>) -> (f64, bool) {
    let mut theta = start;
    let mut value = obj.value(&theta);
    let mut step = 0.5;
    for _ in 0..MAX_ITERS {
        let g = obj.gradient(&theta);
        let radial = dot(&g, &theta);
        let tangent: Vec<f64> = g.iter().zip(&theta).map(|(gi, t)| gi - radial * t).collect();
        if norm2(&tangent) < 1e-14 {
            return (value, true);
        }
        loop {
            let moved = theta.iter().zip(&tangent).map(|(t, d)| t + step * d).collect();
            if let Some(next) = normalize(moved) {
                let v = obj.value(&next);
                if v > value {
                    theta = next;
                    value = v;
                    step = (step * 2.0).min(1.0);
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-12 {
                return (value, true);
            }
        }
    }
    (value, false)
}

/// Searches the unit sphere for a neuron whose `p*`-weighted margin exceeds
/// the candidate's. Starts: the candidate atoms, every ±axis, the class-mean
/// directions and `n_restarts` uniform random points.
///
/// The verdict passes iff the best objective found is at most the
/// candidate's `p*`-averaged margin plus `tol`, every candidate atom reaches
/// the best objective within `tol`, and every support margin is at least
/// the averaged margin minus `tol`. A numerical search is evidence, not a
/// proof; with `n_restarts = 0` the report is flagged low-confidence.
pub fn verify_support_condition(
    nu: &DiscreteMeasure,
    points: &[LabeledPoint],
    n_restarts: usize,
    tol: f64,
    seed: u64,
) -> Result<MarginReport> {
    if points.is_empty() {
        return Err(Error::InvalidConfig("no support points given".into()));
    }
    let dim = nu.input_dim();
    if let Some(p) = points.iter().find(|p| p.x.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: p.x.len(),
        });
    }
    let obj = Objective { points };
    let support_margins = points
        .iter()
        .map(|p| Ok(p.y * measure_output(nu, &p.x)?))
        .collect::<Result<Vec<_>>>()?;
    let candidate_margin = support_margins.iter().sum::<f64>() / points.len() as f64;
    let atom_objectives: Vec<f64> = nu.atoms().iter().map(|a| obj.value(&a.to_vec())).collect();

    let sphere_dim = dim + 2;
    let mut starts: Vec<(StartKind, Vec<f64>)> = nu
        .atoms()
        .iter()
        .map(|a| (StartKind::CandidateAtom, a.to_vec()))
        .collect();
    for i in 0..sphere_dim {
        for sign in [1.0, -1.0] {
            let mut e = vec![0.0; sphere_dim];
            e[i] = sign;
            starts.push((StartKind::Axis, e));
        }
    }
    for y in [1.0, -1.0] {
        let class: Vec<&LabeledPoint> = points.iter().filter(|p| p.y == y).collect();
        if class.is_empty() {
            continue;
        }
        let mut m = vec![0.0; dim];
        for p in &class {
            m.iter_mut().zip(&p.x).for_each(|(a, b)| *a += b / class.len() as f64);
        }
        for bias in [1.0, 0.0, -1.0] {
            let v: Vec<f64> = std::iter::once(y).chain(m.iter().copied()).chain([bias]).collect();
            if let Some(v) = normalize(v) {
                starts.push((StartKind::ClassMean, v));
            }
        }
    }
    let stream = SeedStream::new(seed).child("sphere-starts");
    for i in 0..n_restarts {
        let mut rng = stream.rng(i as u64);
        let v: Vec<f64> = (0..sphere_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if let Some(v) = normalize(v) {
            starts.push((StartKind::Random, v));
        }
    }

    let restarts: Vec<RestartRecord> = starts
        .into_par_iter()
        .enumerate()
        .map(|(index, (kind, start))| {
            let (objective, converged) = ascend(&obj, start);
            RestartRecord {
                index,
                kind,
                objective,
                converged,
            }
        })
        .collect();
    let best_found_objective = restarts
        .iter()
        .map(|r| r.objective)
        .chain(atom_objectives.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);

    let pass = best_found_objective <= candidate_margin + tol
        && atom_objectives.iter().all(|v| *v >= best_found_objective - tol)
        && support_margins.iter().all(|m| *m >= candidate_margin - tol);
    Ok(MarginReport {
        candidate_margin,
        atom_objectives,
        best_found_objective,
        n_restarts,
        tolerance: tol,
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        support_margins,
        restarts,
        low_confidence: n_restarts == 0,
    })
}
