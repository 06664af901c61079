//! Mask-retrain-evaluate harness, its no-retraining ablation, the null-region
//! leakage proxy and the gradient initialization-correlation diagnostic.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::attrib::{attribute_dataset, mask_size, top_bottom_sets, AttributionOrder, Scheme};
use crate::data::{unmask, Dataset};
use crate::nn::{GradTarget, MlpParams};
use crate::rng::SeedStream;
use crate::stats::{mean, pearson, rms, std_error};
use crate::train::{evaluate, fit, TrainConfig};
use crate::{Error, Result};

pub const DEFAULT_LEVELS: [f64; 7] = [0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Top,
    Bottom,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Top => "top",
            Side::Bottom => "bottom",
        }
    }
}

/// Every example reduced to the top or bottom `⌈k·D⌉` coordinates of its
/// own ordering; everything else is zeroed.
pub fn build_unmasked_dataset(
    data: &Dataset,
    orders: &[AttributionOrder],
    k: f64,
    side: Side,
) -> Result<Dataset> {
    if orders.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            actual: orders.len(),
        });
    }
    data.map_features(|i, ex| {
        if orders[i].len() != data.dim() {
            return Err(Error::DimensionMismatch {
                expected: data.dim(),
                actual: orders[i].len(),
            });
        }
        let (top, bottom) = top_bottom_sets(&orders[i], k)?;
        unmask(&ex.features, if side == Side::Top { &top } else { &bottom })
    })
}

fn canonical_cmp(a: &crate::data::Example, b: &crate::data::Example) -> Ordering {
    a.label.cmp(&b.label).then_with(|| {
        a.features
            .iter()
            .zip(&b.features)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Test accuracy of a freshly initialized model trained on `train`.
///
/// Examples are put into a canonical order first, so the result does not
/// depend on how the training set happens to be ordered.
pub fn predictive_power(
    train: &Dataset,
    test: &Dataset,
    arch: &[usize],
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut examples = train.examples().to_vec();
    examples.sort_by(canonical_cmp);
    let canonical = Dataset::new(examples, train.dim(), train.classes(), train.layout().cloned())?;
    let init = MlpParams::init(arch, crate::train::init_seed(cfg))?;
    let model = fit(init, &canonical, cfg, None, None)?.params;
    evaluate(&model, test, None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffRoarConfig {
    pub levels: Vec<f64>,
    pub n_seeds: usize,
    /// Architecture of the retrained models.
    pub arch: Vec<usize>,
    pub train: TrainConfig,
    /// Root of the retraining seeds; replicate `r` at level `k` uses the same
    /// seed for the top and bottom side.
    pub seed: u64,
}

impl DiffRoarConfig {
    pub fn new(arch: Vec<usize>, train: TrainConfig) -> Self {
        Self {
            levels: DEFAULT_LEVELS.to_vec(),
            n_seeds: 3,
            arch,
            train,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.levels.iter().any(|k| !(*k > 0.0 && *k <= 1.0)) {
            return Err(Error::InvalidConfig(format!(
                "levels {:?} must be non-empty and lie in (0, 1]",
                self.levels
            )));
        }
        if self.n_seeds == 0 {
            return Err(Error::InvalidConfig("n_seeds must be >= 1".into()));
        }
        self.train.validate()
    }

    pub fn retrain_seed(&self, level: usize, replicate: usize) -> u64 {
        SeedStream::new(self.seed)
            .child("retrain")
            .child(&level.to_string())
            .seed(replicate as u64)
    }
}

/// One retrained (or directly evaluated) accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffRoarRecord {
    pub scheme: String,
    pub model_id: String,
    pub k: f64,
    pub side: Side,
    pub seed: u64,
    pub accuracy: f64,
    pub no_retrain: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffRoarCurve {
    pub scheme: String,
    pub model_id: String,
    pub levels: Vec<f64>,
    pub pred_top: Vec<f64>,
    pub pred_bottom: Vec<f64>,
    /// `pred_top − pred_bottom` per level.
    pub aq: Vec<f64>,
    pub top_stderr: Vec<f64>,
    pub bottom_stderr: Vec<f64>,
    /// Standard error of the per-replicate differences.
    pub aq_stderr: Vec<f64>,
    pub n_seeds: usize,
    pub no_retrain: bool,
    pub records: Vec<DiffRoarRecord>,
}

fn summarize(
    scheme: &str,
    model_id: &str,
    levels: &[f64],
    n_seeds: usize,
    no_retrain: bool,
    records: Vec<DiffRoarRecord>,
) -> DiffRoarCurve {
    let mut curve = DiffRoarCurve {
        scheme: scheme.into(),
        model_id: model_id.into(),
        levels: levels.to_vec(),
        pred_top: vec![],
        pred_bottom: vec![],
        aq: vec![],
        top_stderr: vec![],
        bottom_stderr: vec![],
        aq_stderr: vec![],
        n_seeds,
        no_retrain,
        records,
    };
    for &k in levels {
        let acc = |side: Side| -> Vec<f64> {
            curve
                .records
                .iter()
                .filter(|r| r.k == k && r.side == side)
                .map(|r| r.accuracy)
                .collect()
        };
        let (top, bottom) = (acc(Side::Top), acc(Side::Bottom));
        let diffs: Vec<f64> = top.iter().zip(&bottom).map(|(a, b)| a - b).collect();
        let (t, b) = (mean(&top), mean(&bottom));
        curve.pred_top.push(t);
        curve.pred_bottom.push(b);
        curve.aq.push(t - b);
        curve.top_stderr.push(std_error(&top));
        curve.bottom_stderr.push(std_error(&bottom));
        curve.aq_stderr.push(std_error(&diffs));
    }
    curve
}

/// Frozen orderings of both splits for one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitOrders {
    pub train: Vec<AttributionOrder>,
    pub test: Vec<AttributionOrder>,
}

impl SplitOrders {
    pub fn reversed(&self) -> SplitOrders {
        let rev = |o: &[AttributionOrder]| o.iter().map(|x| x.reversed()).collect();
        SplitOrders {
            train: rev(&self.train),
            test: rev(&self.test),
        }
    }
}

/// Orders of both splits under `scheme`, computed before any retraining.
/// Stochastic schemes get one set per replicate; deterministic schemes a
/// single shared set.
pub fn replicate_orders(
    model: &MlpParams,
    train: &Dataset,
    test: &Dataset,
    scheme: &Scheme,
    n_seeds: usize,
    seed: u64,
) -> Result<Vec<SplitOrders>> {
    let stream = SeedStream::new(seed).child("attribution");
    let n = if scheme.is_stochastic() { n_seeds } else { 1 };
    (0..n)
        .map(|r| {
            let rs = stream.child(&r.to_string());
            Ok(SplitOrders {
                train: attribute_dataset(model, train, scheme, rs.seed(0))?,
                test: attribute_dataset(model, test, scheme, rs.seed(1))?,
            })
        })
        .collect()
}

/// DiffROAR with precomputed orders: for every level, side and replicate,
/// retrain on the unmasked training split and score the unmasked test split.
/// `orders` holds either one shared set or one set per replicate.
pub fn diffroar_with_orders(
    scheme_id: &str,
    model_id: &str,
    train: &Dataset,
    test: &Dataset,
    orders: &[SplitOrders],
    cfg: &DiffRoarConfig,
) -> Result<DiffRoarCurve> {
    cfg.validate()?;
    if orders.len() != 1 && orders.len() != cfg.n_seeds {
        return Err(Error::InvalidConfig(format!(
            "expected 1 or {} order sets, got {}",
            cfg.n_seeds,
            orders.len()
        )));
    }
    let jobs: Vec<(usize, Side, usize)> = (0..cfg.levels.len())
        .flat_map(|l| {
            [Side::Top, Side::Bottom]
                .into_iter()
                .flat_map(move |s| (0..cfg.n_seeds).map(move |r| (l, s, r)))
        })
        .collect();
    let records = jobs
        .into_par_iter()
        .map(|(l, side, r)| {
            let k = cfg.levels[l];
            let o = &orders[r.min(orders.len() - 1)];
            let tr = build_unmasked_dataset(train, &o.train, k, side)?;
            let te = build_unmasked_dataset(test, &o.test, k, side)?;
            let seed = cfg.retrain_seed(l, r);
            let train_cfg = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            Ok(DiffRoarRecord {
                scheme: scheme_id.into(),
                model_id: model_id.into(),
                k,
                side,
                seed,
                accuracy: predictive_power(&tr, &te, &cfg.arch, &train_cfg)?,
                no_retrain: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(scheme_id, model_id, &cfg.levels, cfg.n_seeds, false, records))
}

/// Computes attributions of `model` on both splits, freezes them and runs
/// [`diffroar_with_orders`].
pub fn diffroar_curve(
    train: &Dataset,
    test: &Dataset,
    scheme: &Scheme,
    model: &MlpParams,
    model_id: &str,
    cfg: &DiffRoarConfig,
    attribution_seed: u64,
) -> Result<DiffRoarCurve> {
    let orders = replicate_orders(model, train, test, scheme, cfg.n_seeds, attribution_seed)?;
    diffroar_with_orders(&scheme.id(), model_id, train, test, &orders, cfg)
}

/// Accuracy of `model` itself on the unmasked test split; nothing is retrained.
pub fn diffroar_no_retrain(
    test: &Dataset,
    test_orders: &[AttributionOrder],
    scheme_id: &str,
    model: &MlpParams,
    model_id: &str,
    levels: &[f64],
) -> Result<DiffRoarCurve> {
    let records = levels
        .iter()
        .flat_map(|&k| [Side::Top, Side::Bottom].map(|s| (k, s)))
        .map(|(k, side)| {
            let masked = build_unmasked_dataset(test, test_orders, k, side)?;
            Ok(DiffRoarRecord {
                scheme: scheme_id.into(),
                model_id: model_id.into(),
                k,
                side,
                seed: 0,
                accuracy: evaluate(model, &masked, None)?,
                no_retrain: true,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(scheme_id, model_id, levels, 1, true, records))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeakageCurve {
    pub levels: Vec<f64>,
    /// Mean fraction of the top-k coordinates that fall in the null region.
    pub fraction_in_null: Vec<f64>,
}

pub fn leakage_fraction(
    data: &Dataset,
    orders: &[AttributionOrder],
    levels: &[f64],
) -> Result<LeakageCurve> {
    if orders.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            actual: orders.len(),
        });
    }
    let mut in_null = Vec::with_capacity(data.len());
    for (i, ex) in data.examples().iter().enumerate() {
        let region = ex.null_region.as_ref().ok_or(Error::MissingNullRegion(i))?;
        let mut mark = vec![false; data.dim()];
        region.iter().for_each(|&c| mark[c] = true);
        in_null.push(mark);
    }
    let fraction_in_null = levels
        .iter()
        .map(|&k| {
            let n = mask_size(k, data.dim())?;
            let per_example: Vec<f64> = orders
                .iter()
                .zip(&in_null)
                .map(|(o, mark)| {
                    o.perm()[..n].iter().filter(|&&c| mark[c]).count() as f64 / n as f64
                })
                .collect();
            Ok(mean(&per_example))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LeakageCurve {
        levels: levels.to_vec(),
        fraction_in_null,
    })
}

/// Pearson correlation between pooled input-gradient entries of two models,
/// and the ratio of their root-mean-squares (`final / init`).
pub fn init_correlation(
    init: &MlpParams,
    trained: &MlpParams,
    data: &Dataset,
    target: GradTarget,
) -> Result<(f64, f64)> {
    if init.arch() != trained.arch() {
        return Err(Error::InvalidConfig(format!(
            "architectures differ: {:?} vs {:?}",
            init.arch(),
            trained.arch()
        )));
    }
    let pool = |p: &MlpParams| -> Result<Vec<f64>> {
        let per: Vec<Vec<f64>> = data
            .examples()
            .par_iter()
            .map(|ex| p.input_gradient(&ex.features, target))
            .collect::<Result<_>>()?;
        Ok(per.concat())
    };
    let (a, b) = (pool(init)?, pool(trained)?);
    let (ra, rb) = (rms(&a), rms(&b));
    if ra == 0.0 || rb == 0.0 {
        return Err(Error::Degenerate("input-gradient pool is all zero".into()));
    }
    let r = pearson(&a, &b)
        .ok_or_else(|| Error::Degenerate("input-gradient pool has zero variance".into()))?;
    Ok((r, rb / ra))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attrib::random_attribution;
    use crate::data::{sample_synthetic, BlockSpec, Example};

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            max_epochs: 30,
            batch_size: 32,
            ..Default::default()
        }
    }

    #[test]
    fn unmasking_examples() {
        let spec = BlockSpec::scalar(10, 0.05).unwrap();
        let data = sample_synthetic(&spec, 40, 1).unwrap();
        let orders: Vec<_> = (0..40).map(|i| random_attribution(10, i)).collect();
        assert_eq!(build_unmasked_dataset(&data, &orders, 1.0, Side::Top).unwrap(), data);
        let top = build_unmasked_dataset(&data, &orders, 0.1, Side::Top).unwrap();
        for ((a, b), o) in top.examples().iter().zip(data.examples()).zip(&orders) {
            assert_eq!(a.label, b.label);
            let nz = a.features.iter().filter(|v| **v != 0.0).count();
            assert_eq!(nz, usize::from(b.features[o.perm()[0]] != 0.0));
        }
        assert!(build_unmasked_dataset(&data, &orders[..3], 0.5, Side::Top).is_err());
    }

    #[test]
    fn predictive_power_of_the_signal_coordinate_alone() {
        let spec = BlockSpec::scalar(10, 0.05).unwrap();
        let train = sample_synthetic(&spec, 400, 2).unwrap();
        let test = sample_synthetic(&spec, 200, 3).unwrap();
        let p = MlpParams::init(&[10, 1], 0).unwrap();
        let o = &replicate_orders(&p, &train, &test, &Scheme::Oracle, 3, 0).unwrap()[0];
        let utr = build_unmasked_dataset(&train, &o.train, 0.1, Side::Top).unwrap();
        let ute = build_unmasked_dataset(&test, &o.test, 0.1, Side::Top).unwrap();
        let acc = predictive_power(&utr, &ute, &[10, 32, 1], &small_cfg()).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn all_zero_inputs_give_the_majority_rate() {
        let mk = |n: usize, ones: usize| {
            let ex = (0..n).map(|i| Example::new(vec![0.0; 4], usize::from(i < ones))).collect();
            Dataset::new(ex, 4, 2, None).unwrap()
        };
        let (train, test) = (mk(100, 70), mk(50, 40));
        let acc = predictive_power(&train, &test, &[4, 8, 1], &small_cfg()).unwrap();
        assert_eq!(acc, test.majority_rate());
    }

    #[test]
    fn predictive_power_ignores_example_order() {
        let spec = BlockSpec::scalar(6, 0.1).unwrap();
        let train = sample_synthetic(&spec, 120, 5).unwrap();
        let test = sample_synthetic(&spec, 60, 6).unwrap();
        let mut rev = train.examples().to_vec();
        rev.reverse();
        let reversed = Dataset::new(rev, train.dim(), 2, train.layout().cloned()).unwrap();
        let cfg = TrainConfig {
            max_epochs: 5,
            ..small_cfg()
        };
        assert_eq!(
            predictive_power(&train, &test, &[6, 8, 1], &cfg).unwrap(),
            predictive_power(&reversed, &test, &[6, 8, 1], &cfg).unwrap()
        );
    }

    #[test]
    fn reversing_orders_negates_aq() {
        let spec = BlockSpec::scalar(6, 0.1).unwrap();
        let train = sample_synthetic(&spec, 100, 7).unwrap();
        let test = sample_synthetic(&spec, 60, 8).unwrap();
        let p = MlpParams::init(&[6, 1], 0).unwrap();
        let orders = replicate_orders(&p, &train, &test, &Scheme::Random, 2, 3).unwrap();
        assert_eq!(orders.len(), 2);
        assert_ne!(orders[0], orders[1]);
        let reversed: Vec<_> = orders.iter().map(|o| o.reversed()).collect();
        let cfg = DiffRoarConfig {
            levels: vec![0.2, 0.5],
            n_seeds: 2,
            ..DiffRoarConfig::new(vec![6, 8, 1], TrainConfig { max_epochs: 5, ..small_cfg() })
        };
        let a = diffroar_with_orders("r", "m", &train, &test, &orders, &cfg).unwrap();
        let b = diffroar_with_orders("r", "m", &train, &test, &reversed, &cfg).unwrap();
        assert_eq!(a.pred_top, b.pred_bottom);
        assert_eq!(a.pred_bottom, b.pred_top);
        for (x, y) in a.aq.iter().zip(&b.aq) {
            assert_eq!(*x, -*y);
        }
        for (i, k) in a.levels.iter().enumerate() {
            assert_eq!(a.aq[i], a.pred_top[i] - a.pred_bottom[i], "k={k}");
        }
        assert_eq!(a.records.len(), 2 * 2 * 2);
    }

    #[test]
    fn retrain_seeds_depend_on_level_and_replicate_only() {
        let cfg = DiffRoarConfig::new(vec![2, 1], TrainConfig::default());
        assert_eq!(cfg.levels, DEFAULT_LEVELS);
        assert_eq!(cfg.n_seeds, 3);
        assert_ne!(cfg.retrain_seed(0, 0), cfg.retrain_seed(0, 1));
        assert_ne!(cfg.retrain_seed(0, 0), cfg.retrain_seed(1, 0));
        assert_ne!(cfg.retrain_seed(0, 0), cfg.train.seed);
        let bad = DiffRoarConfig {
            levels: vec![0.0],
            ..cfg.clone()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn no_retrain_at_full_level_is_plain_accuracy() {
        let spec = BlockSpec::scalar(8, 0.05).unwrap();
        let test = sample_synthetic(&spec, 80, 9).unwrap();
        let p = MlpParams::init(&[8, 16, 1], 1).unwrap();
        let orders: Vec<_> = (0..80).map(|i| random_attribution(8, i)).collect();
        let c = diffroar_no_retrain(&test, &orders, "random", &p, "m", &[0.25, 1.0]).unwrap();
        let plain = evaluate(&p, &test, None).unwrap();
        assert_eq!((c.pred_top[1], c.pred_bottom[1], c.aq[1]), (plain, plain, 0.0));
        assert!(c.no_retrain && c.records.iter().all(|r| r.no_retrain));
    }

    #[test]
    fn oracle_without_retraining_on_a_linear_model() {
        // a linear model aligned with the signal: keeping the signal block
        // can only help relative to keeping a noise coordinate
        let spec = BlockSpec::scalar(10, 0.05).unwrap();
        let test = sample_synthetic(&spec, 200, 10).unwrap();
        let w = (0..10).map(|i| if i < 5 { 1.0 } else { 0.0 }).collect();
        let p = MlpParams::new(vec![crate::nn::Dense::new(1, 10, w, vec![0.0]).unwrap()]).unwrap();
        let o = replicate_orders(&p, &test, &test, &Scheme::Oracle, 1, 0).unwrap();
        let c = diffroar_no_retrain(&test, &o[0].test, "oracle", &p, "lin", &DEFAULT_LEVELS).unwrap();
        assert!(c.aq.iter().all(|a| *a >= 0.0), "{:?}", c.aq);
    }

    #[test]
    fn leakage_examples() {
        let mut examples = Vec::new();
        for i in 0..4 {
            let mut e = Example::new(vec![0.0; 6], i % 2);
            e.null_region = Some(vec![3, 4, 5].into());
            examples.push(e);
        }
        let data = Dataset::new(examples, 6, 2, None).unwrap();
        let first = vec![AttributionOrder::new(vec![3, 4, 5, 0, 1, 2]).unwrap(); 4];
        let last: Vec<_> = first.iter().map(|o| o.reversed()).collect();
        let levels = [1.0 / 6.0, 0.5];
        assert_eq!(leakage_fraction(&data, &first, &levels).unwrap().fraction_in_null, [1.0, 1.0]);
        assert_eq!(leakage_fraction(&data, &last, &levels).unwrap().fraction_in_null, [0.0, 0.0]);
        let plain = Dataset::new(vec![Example::new(vec![0.0; 6], 0)], 6, 2, None).unwrap();
        assert!(matches!(
            leakage_fraction(&plain, &first[..1], &levels),
            Err(Error::MissingNullRegion(0))
        ));
    }

    #[test]
    fn random_orders_leak_half() {
        let n = 10_000;
        let examples = (0..n)
            .map(|i| {
                let mut e = Example::new(vec![0.0; 20], i % 2);
                e.null_region = Some((10..20).collect::<Vec<_>>().into());
                e
            })
            .collect();
        let data = Dataset::new(examples, 20, 2, None).unwrap();
        let orders: Vec<_> = (0..n as u64).map(|i| random_attribution(20, i)).collect();
        let curve = leakage_fraction(&data, &orders, &[0.1, 0.3, 0.5]).unwrap();
        for f in curve.fraction_in_null {
            assert!((f - 0.5).abs() < 0.02, "{f}");
        }
        let rev: Vec<_> = orders.iter().map(|o| o.reversed()).collect();
        let a = leakage_fraction(&data, &orders, &[0.5]).unwrap().fraction_in_null[0];
        let b = leakage_fraction(&data, &rev, &[0.5]).unwrap().fraction_in_null[0];
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn init_correlation_examples() {
        let spec = BlockSpec::scalar(10, 0.1).unwrap();
        let data = sample_synthetic(&spec, 200, 11).unwrap();
        let p = MlpParams::init(&[10, 32, 1], 1).unwrap();
        let target = GradTarget::LogitOfPredictedLabel;
        let (r, ratio) = init_correlation(&p, &p, &data, target).unwrap();
        assert!((r - 1.0).abs() < 1e-12 && (ratio - 1.0).abs() < 1e-12);
        let (r, ratio) = init_correlation(&p, &p.scaled(2.0), &data, target).unwrap();
        assert!((r - 1.0).abs() < 1e-12 && (ratio - 4.0).abs() < 1e-12, "{r} {ratio}");
        let big = sample_synthetic(&spec, 2000, 12).unwrap();
        let q = MlpParams::init(&[10, 32, 1], 2).unwrap();
        let (r, _) = init_correlation(&p, &q, &big, target).unwrap();
        assert!(r.abs() < 0.1, "{r}");
        let zero = p.scaled(0.0);
        assert!(matches!(
            init_correlation(&zero, &p, &data, target),
            Err(Error::Degenerate(_))
        ));
    }
}
