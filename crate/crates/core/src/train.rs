//! Minibatch SGD (momentum, weight decay, step schedule), PGD attacks and
//! PGD adversarial training.
//!
//! Per-minibatch work is split into fixed-size chunks that are reduced in
//! chunk order, so results do not depend on the number of worker threads.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::nn::{loss, loss_and_grad, Gradients, MlpParams};
use crate::rng::{rng_from_seed, SeedStream};
use crate::{Error, Result};

const CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Multiplicative decay applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub max_epochs: usize,
    /// Training stops once the epoch loss falls below this value.
    pub early_stop_loss: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 256,
            lr_decay: 0.75,
            lr_decay_every: 20,
            max_epochs: 500,
            early_stop_loss: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("train: {what}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.lr_decay_every == 0 {
            return bad("lr schedule must decay by a factor in (0, 1] every >= 1 epochs");
        }
        if self.early_stop_loss < 0.0 {
            return bad("early_stop_loss must be non-negative");
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Norm {
    L2,
    Linf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvConfig {
    pub norm: Norm,
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    /// Start from a uniform point of the ℓ∞ box / ℓ2 ball instead of `x`.
    pub random_start: bool,
}

impl AdvConfig {
    /// Eight steps of size `ε/4` from the clean point.
    pub fn new(norm: Norm, epsilon: f64) -> Self {
        Self {
            norm,
            epsilon,
            steps: 8,
            step_size: epsilon / 4.0,
            random_start: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig("adv: epsilon must be non-negative".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("adv: steps must be >= 1".into()));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig("adv: step_size must be non-negative".into()));
        }
        Ok(())
    }

    /// Attack used for robust evaluation: twice the training step count.
    pub fn for_evaluation(&self) -> AdvConfig {
        AdvConfig {
            steps: 2 * self.steps,
            ..self.clone()
        }
    }
}

fn project(x: &mut [f64], x0: &[f64], adv: &AdvConfig, clip: Option<(f64, f64)>) {
    match adv.norm {
        Norm::Linf => {
            for (v, &c) in x.iter_mut().zip(x0) {
                *v = v.clamp(c - adv.epsilon, c + adv.epsilon);
            }
        }
        Norm::L2 => {
            let dist = x
                .iter()
                .zip(x0)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            if dist > adv.epsilon {
                let s = adv.epsilon / dist;
                for (v, &c) in x.iter_mut().zip(x0) {
                    *v = c + (*v - c) * s;
                }
            }
        }
    }
    if let Some((lo, hi)) = clip {
        x.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    }
}

fn random_start_point(x0: &[f64], adv: &AdvConfig) -> Vec<f64> {
    use rand::Rng as _;
    // seeded by the input so the attack stays a pure function
    let seed = x0.iter().fold(0x51_7cc1_b727_220a_u64, |h, v| {
        (h ^ v.to_bits()).wrapping_mul(0x100_0000_01b3)
    });
    let mut rng = rng_from_seed(seed);
    match adv.norm {
        Norm::Linf => x0
            .iter()
            .map(|&c| c + rng.random_range(-1.0..=1.0) * adv.epsilon)
            .collect(),
        Norm::L2 => {
            let dir = crate::data::synthetic::unit_ball(x0.len(), &mut rng);
            x0.iter().zip(dir).map(|(&c, d)| c + adv.epsilon * d).collect()
        }
    }
}

/// Projected gradient ascent on the loss at `label` inside the ε-ball
/// around `x` (and inside `clip`, when given).
pub fn pgd_attack(
    params: &MlpParams,
    x: &[f64],
    label: usize,
    adv: &AdvConfig,
    clip: Option<(f64, f64)>,
) -> Result<Vec<f64>> {
    adv.validate()?;
    let mut cur = if adv.random_start {
        random_start_point(x, adv)
    } else {
        x.to_vec()
    };
    project(&mut cur, x, adv, clip);
    for _ in 0..adv.steps {
        let (_, g) = params.loss_input_gradient(&cur, label)?;
        match adv.norm {
            Norm::Linf => {
                for (v, gi) in cur.iter_mut().zip(&g) {
                    if *gi != 0.0 {
                        *v += adv.step_size * gi.signum();
                    }
                }
            }
            Norm::L2 => {
                let norm = crate::stats::norm2(&g);
                if norm == 0.0 {
                    break;
                }
                for (v, gi) in cur.iter_mut().zip(&g) {
                    *v += adv.step_size * gi / norm;
                }
            }
        }
        project(&mut cur, x, adv, clip);
    }
    Ok(cur)
}

/// One epoch's summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Full-train loss at the end of the epoch; adversarial when training
    /// adversarially.
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub log: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Mean loss and accuracy over a dataset.
pub fn loss_and_accuracy(params: &MlpParams, data: &Dataset) -> Result<(f64, f64)> {
    let parts = data
        .examples()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut l = 0.0;
            let mut correct = 0usize;
            for ex in chunk {
                let logits = params.logits(&ex.features)?;
                l += loss(&logits, ex.label)?;
                correct += usize::from(crate::nn::predict(&logits) == ex.label);
            }
            Ok((l, correct))
        })
        .collect::<Result<Vec<_>>>()?;
    let (l, c) = parts
        .into_iter()
        .fold((0.0, 0), |(a, b), (l, c)| (a + l, b + c));
    Ok((l / data.len() as f64, c as f64 / data.len() as f64))
}

/// Mean loss at PGD outputs computed with the training attack.
pub fn adversarial_loss(params: &MlpParams, data: &Dataset, adv: &AdvConfig) -> Result<f64> {
    let clip = data.pixel_range();
    let parts = data
        .examples()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut l = 0.0;
            for ex in chunk {
                let xa = pgd_attack(params, &ex.features, ex.label, adv, clip)?;
                l += loss(&params.logits(&xa)?, ex.label)?;
            }
            Ok(l)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.iter().sum::<f64>() / data.len() as f64)
}

/// Plain accuracy, or accuracy under a PGD attack with twice the
/// configured number of steps.
pub fn evaluate(params: &MlpParams, data: &Dataset, adv: Option<&AdvConfig>) -> Result<f64> {
    let Some(adv) = adv else {
        return Ok(loss_and_accuracy(params, data)?.1);
    };
    let attack = adv.for_evaluation();
    let clip = data.pixel_range();
    let correct = data
        .examples()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut c = 0usize;
            for ex in chunk {
                let xa = pgd_attack(params, &ex.features, ex.label, &attack, clip)?;
                c += usize::from(params.predict(&xa)? == ex.label);
            }
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(correct.iter().sum::<usize>() as f64 / data.len() as f64)
}

struct Sgd {
    velocity: Gradients,
}

impl Sgd {
    fn step(&mut self, params: &mut MlpParams, grads: &Gradients, lr: f64, cfg: &TrainConfig) {
        for (l, layer) in params.layers_mut().iter_mut().enumerate() {
            let parts = [
                (&mut layer.weight, &grads.weight[l], &mut self.velocity.weight[l]),
                (&mut layer.bias, &grads.bias[l], &mut self.velocity.bias[l]),
            ];
            for (theta, g, v) in parts {
                for ((t, gi), vi) in theta.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                    let d = gi + cfg.weight_decay * *t;
                    *vi = cfg.momentum * *vi + d;
                    *t -= lr * *vi;
                }
            }
        }
    }
}

/// Mean gradient of the loss over `batch` (indices into `data`), evaluated
/// at adversarial points when `adv` is given. Returns the mean loss too.
fn batch_gradient(
    params: &MlpParams,
    data: &Dataset,
    batch: &[usize],
    adv: Option<&AdvConfig>,
) -> Result<(Gradients, f64)> {
    let clip = data.pixel_range();
    let parts = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = Gradients::zeros_like(params);
            let mut total = 0.0;
            for &i in chunk {
                let ex = &data.examples()[i];
                let attacked;
                let x = match adv {
                    Some(a) => {
                        attacked = pgd_attack(params, &ex.features, ex.label, a, clip)?;
                        &attacked
                    }
                    None => &ex.features,
                };
                let (logits, trace) = params.forward(x)?;
                let (l, d) = loss_and_grad(&logits, ex.label)?;
                total += l;
                params.backward(&trace, &d, Some(&mut g), false);
            }
            Ok((g, total))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut iter = parts.into_iter();
    let (mut grads, mut total) = iter.next().expect("batch is non-empty");
    for (g, l) in iter {
        grads.add_assign(&g);
        total += l;
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok((grads, total / n))
}

/// Trains from `init` and returns the final parameters with the per-epoch
/// log. With `adv`, every minibatch is replaced by PGD outputs before the
/// gradient step and early stopping uses the full-train adversarial loss.
pub fn fit(
    init: MlpParams,
    data: &Dataset,
    cfg: &TrainConfig,
    adv: Option<&AdvConfig>,
    test: Option<&Dataset>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Some(a) = adv {
        a.validate()?;
    }
    if init.input_dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: init.input_dim(),
            actual: data.dim(),
        });
    }
    let mut params = init;
    let mut opt = Sgd {
        velocity: Gradients::zeros_like(&params),
    };
    let shuffle = SeedStream::new(cfg.seed).child("shuffle");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut shuffle.rng(epoch as u64));
        for batch in order.chunks(cfg.batch_size) {
            let (grads, batch_loss) = batch_gradient(&params, data, batch, adv)?;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: batch_loss,
                });
            }
            opt.step(&mut params, &grads, lr, cfg);
        }
        let (clean_loss, train_acc) = loss_and_accuracy(&params, data)?;
        let epoch_loss = match adv {
            Some(a) => adversarial_loss(&params, data, a)?,
            None => clean_loss,
        };
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: epoch_loss,
            });
        }
        let test_acc = match test {
            Some(t) => Some(loss_and_accuracy(&params, t)?.1),
            None => None,
        };
        log.push(EpochRecord {
            epoch,
            train_loss: epoch_loss,
            train_acc,
            test_acc,
            lr,
        });
        if epoch_loss < cfg.early_stop_loss {
            return Ok(TrainOutcome {
                params,
                log,
                stopped_early: true,
            });
        }
    }
    Ok(TrainOutcome {
        params,
        log,
        stopped_early: false,
    })
}

/// Seed used for the initial parameters of a training run.
pub fn init_seed(cfg: &TrainConfig) -> u64 {
    SeedStream::new(cfg.seed).child("init").seed(0)
}

pub fn train_standard(arch: &[usize], data: &Dataset, cfg: &TrainConfig) -> Result<MlpParams> {
    let init = MlpParams::init(arch, init_seed(cfg))?;
    Ok(fit(init, data, cfg, None, None)?.params)
}

pub fn train_adversarial(
    arch: &[usize],
    data: &Dataset,
    cfg: &TrainConfig,
    adv: &AdvConfig,
) -> Result<MlpParams> {
    let init = MlpParams::init(arch, init_seed(cfg))?;
    Ok(fit(init, data, cfg, Some(adv), None)?.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, Example};
    use crate::nn::Dense;

    fn linear(w: Vec<f64>, b: f64) -> MlpParams {
        let d = w.len();
        MlpParams::new(vec![Dense::new(1, d, w, vec![b]).unwrap()]).unwrap()
    }

    fn blobs(n: usize, seed: u64) -> Dataset {
        use rand::Rng as _;
        let mut rng = rng_from_seed(seed);
        let examples = (0..n)
            .map(|i| {
                let label = i % 2;
                let c = if label == 1 { 2.0 } else { -2.0 };
                let f = vec![c + rng.random_range(-1.0..1.0), c + rng.random_range(-1.0..1.0)];
                Example::new(f, label)
            })
            .collect();
        Dataset::new(examples, 2, 2, None).unwrap()
    }

    #[test]
    fn default_recipe() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.momentum, c.weight_decay, c.batch_size), (0.1, 0.9, 5e-4, 256));
        assert_eq!((c.lr_decay, c.lr_decay_every, c.max_epochs), (0.75, 20, 500));
        assert_eq!(c.early_stop_loss, 1e-3);
        assert_eq!(c.lr_at(19), 0.1);
        assert!((c.lr_at(40) - 0.1 * 0.5625).abs() < 1e-15);
        let a = AdvConfig::new(Norm::Linf, 0.4);
        assert_eq!((a.steps, a.step_size, a.random_start), (8, 0.1, false));
        assert_eq!(a.for_evaluation().steps, 16);
    }

    #[test]
    fn separable_blobs_are_learned_by_a_linear_model() {
        let data = blobs(200, 1);
        let cfg = TrainConfig {
            max_epochs: 50,
            batch_size: 32,
            ..Default::default()
        };
        let p = train_standard(&[2, 1], &data, &cfg).unwrap();
        assert_eq!(evaluate(&p, &data, None).unwrap(), 1.0);
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let data = blobs(20, 2);
        let cfg = TrainConfig {
            max_epochs: 0,
            ..Default::default()
        };
        let p = train_standard(&[2, 4, 1], &data, &cfg).unwrap();
        assert_eq!(p, MlpParams::init(&[2, 4, 1], init_seed(&cfg)).unwrap());
    }

    #[test]
    fn training_is_deterministic() {
        let data = blobs(100, 3);
        let cfg = TrainConfig {
            max_epochs: 5,
            batch_size: 16,
            seed: 5,
            ..Default::default()
        };
        let a = train_standard(&[2, 8, 1], &data, &cfg).unwrap();
        let b = train_standard(&[2, 8, 1], &data, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weight_decay_shrinks_geometrically_without_data_gradient() {
        // all-zero inputs: the weight gradient vanishes, only decay acts
        let examples = (0..8).map(|i| Example::new(vec![0.0; 3], i % 2)).collect();
        let data = Dataset::new(examples, 3, 2, None).unwrap();
        let cfg = TrainConfig {
            lr: 0.5,
            momentum: 0.0,
            weight_decay: 0.1,
            batch_size: 4,
            max_epochs: 3,
            early_stop_loss: 0.0,
            ..Default::default()
        };
        let init = linear(vec![1.0, -2.0, 4.0], 0.0);
        let out = fit(init, &data, &cfg, None, None).unwrap();
        let factor = (1.0f64 - 0.5 * 0.1).powi(6);
        for (w, w0) in out.params.layers()[0].weight.iter().zip([1.0, -2.0, 4.0]) {
            assert!((w - w0 * factor).abs() < 1e-14);
        }
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let examples = (0..4)
            .map(|i| Example::new(vec![1e200, -1e200], i % 2))
            .collect();
        let data = Dataset::new(examples, 2, 2, None).unwrap();
        let cfg = TrainConfig {
            lr: 1e10,
            max_epochs: 5,
            ..Default::default()
        };
        let err = train_standard(&[2, 1], &data, &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn zero_radius_attack_is_identity() {
        let p = MlpParams::init(&[4, 8, 1], 1).unwrap();
        let x = [0.2, -0.1, 0.5, 0.9];
        for norm in [Norm::Linf, Norm::L2] {
            assert_eq!(pgd_attack(&p, &x, 1, &AdvConfig::new(norm, 0.0), None).unwrap(), x);
        }
    }

    #[test]
    fn one_linf_step_on_a_linear_model_has_closed_form() {
        let w = vec![0.5, -1.0, 0.0, 2.0];
        let p = linear(w.clone(), 0.1);
        let x = [0.3, 0.3, 0.3, 0.3];
        let adv = AdvConfig {
            steps: 1,
            ..AdvConfig::new(Norm::Linf, 0.2)
        };
        // for label 1 the loss gradient is -σ(-f)·w, so its sign is -sign(w)
        let xa = pgd_attack(&p, &x, 1, &adv, None).unwrap();
        let expect: Vec<f64> = x
            .iter()
            .zip(&w)
            .map(|(xi, wi): (&f64, &f64)| if *wi == 0.0 { *xi } else { xi - 0.05 * wi.signum() })
            .collect();
        assert_eq!(xa, expect);
        let before = loss(&p.logits(&x).unwrap(), 1).unwrap();
        let after = loss(&p.logits(&xa).unwrap(), 1).unwrap();
        assert!(after >= before);
    }

    #[test]
    fn attacks_stay_in_the_ball() {
        let p = MlpParams::init(&[6, 16, 3], 4).unwrap();
        let x = [0.1, 0.9, 0.5, 0.0, 1.0, 0.3];
        for norm in [Norm::Linf, Norm::L2] {
            for eps in [0.05, 0.5, 3.0] {
                let adv = AdvConfig {
                    steps: 20,
                    step_size: eps,
                    ..AdvConfig::new(norm, eps)
                };
                for clip in [None, Some((0.0, 1.0))] {
                    let xa = pgd_attack(&p, &x, 2, &adv, clip).unwrap();
                    let d: Vec<f64> = xa.iter().zip(&x).map(|(a, b)| a - b).collect();
                    let dist = match norm {
                        Norm::Linf => d.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                        Norm::L2 => crate::stats::norm2(&d),
                    };
                    assert!(dist <= eps + 1e-12, "{norm:?} {eps}: {dist}");
                    if clip.is_some() {
                        assert!(xa.iter().all(|v| (0.0..=1.0).contains(v)));
                    }
                }
            }
        }
    }

    #[test]
    fn constant_model_on_balanced_data_scores_half() {
        let data = blobs(50, 7);
        let p = linear(vec![0.0, 0.0], 1.0);
        assert_eq!(evaluate(&p, &data, None).unwrap(), 0.5);
    }

    #[test]
    fn zero_radius_robust_accuracy_equals_accuracy() {
        let data = blobs(60, 8);
        let p = MlpParams::init(&[2, 8, 1], 3).unwrap();
        let plain = evaluate(&p, &data, None).unwrap();
        for norm in [Norm::L2, Norm::Linf] {
            let adv = AdvConfig::new(norm, 0.0);
            assert_eq!(evaluate(&p, &data, Some(&adv)).unwrap(), plain);
        }
    }

    #[test]
    fn robust_accuracy_is_non_increasing_in_epsilon() {
        let data = blobs(200, 9);
        let cfg = TrainConfig {
            max_epochs: 20,
            batch_size: 32,
            ..Default::default()
        };
        let p = train_standard(&[2, 16, 1], &data, &cfg).unwrap();
        let mut prev = 1.0;
        for eps in [0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0] {
            let acc = evaluate(&p, &data, Some(&AdvConfig::new(Norm::Linf, eps))).unwrap();
            assert!(acc <= prev + 0.01, "eps {eps}: {acc} > {prev}");
            prev = acc;
        }
        assert!(prev < 0.6);
    }

    #[test]
    fn tiny_radius_adversarial_training_matches_standard_accuracy() {
        let data = blobs(120, 10);
        let cfg = TrainConfig {
            max_epochs: 15,
            batch_size: 32,
            ..Default::default()
        };
        let std = train_standard(&[2, 8, 1], &data, &cfg).unwrap();
        let adv = train_adversarial(&[2, 8, 1], &data, &cfg, &AdvConfig::new(Norm::Linf, 1e-9)).unwrap();
        assert_eq!(evaluate(&std, &data, None).unwrap(), evaluate(&adv, &data, None).unwrap());
    }
}
