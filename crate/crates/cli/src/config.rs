//! Experiment configuration: a TOML file with one optional section per
//! concern. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use diffroar::attrib::Scheme;
use diffroar::data::{BlockImageConfig, BlockSpec, GlyphSource, Placement};
use diffroar::nn::GradTarget;
use diffroar::train::{AdvConfig, Norm, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every derived random stream; `--seed` overrides it.
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub adversarial: Option<AdversarialSection>,
    pub attribution: AttributionSection,
    pub diffroar: DiffRoarSection,
    pub leakage: LeakageSection,
    pub theory: TheorySection,
    pub report: ReportSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    Synthetic,
    BlockImages,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementName {
    Random,
    Top,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub kind: DataKind,
    pub n_train: usize,
    pub n_test: usize,
    pub num_blocks: usize,
    pub block_dim: usize,
    pub noise: f64,
    /// Defaults to the first axis of the block.
    pub signal_dir: Option<Vec<f64>>,
    pub block_h: usize,
    pub block_w: usize,
    pub placement: PlacementName,
    pub class_digits: Vec<u8>,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            kind: DataKind::Synthetic,
            n_train: 2000,
            n_test: 1000,
            num_blocks: 10,
            block_dim: 1,
            noise: 0.0,
            signal_dir: None,
            block_h: 28,
            block_w: 28,
            placement: PlacementName::Random,
            class_digits: vec![0, 1],
            idx_images: None,
            idx_labels: None,
        }
    }
}

impl DataSection {
    pub fn block_spec(&self) -> Result<BlockSpec> {
        let dir = match &self.signal_dir {
            Some(d) => d.clone(),
            None => {
                let mut d = vec![0.0; self.block_dim];
                if let Some(first) = d.first_mut() {
                    *first = 1.0;
                }
                d
            }
        };
        Ok(BlockSpec::new(self.block_dim, self.num_blocks, self.noise, dir)?)
    }

    pub fn image_config(&self) -> Result<BlockImageConfig> {
        let glyph_source = match (&self.idx_images, &self.idx_labels) {
            (Some(images), Some(labels)) => GlyphSource::IdxFiles {
                images: images.clone(),
                labels: labels.clone(),
            },
            (None, None) => GlyphSource::ProceduralGlyphs,
            _ => bail!("data.idx_images and data.idx_labels must be given together"),
        };
        let cfg = BlockImageConfig {
            block_h: self.block_h,
            block_w: self.block_w,
            placement: match self.placement {
                PlacementName::Random => Placement::RandomTopOrBottom,
                PlacementName::Top => Placement::FixedTop,
            },
            glyph_source,
            class_digits: self.class_digits.clone(),
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    /// Load the model under test from a checkpoint instead of training it.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: vec![1024],
            checkpoint: None,
        }
    }
}

pub fn arch(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub max_epochs: usize,
    pub early_stop_loss: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            lr: d.lr,
            momentum: d.momentum,
            weight_decay: d.weight_decay,
            batch_size: d.batch_size,
            lr_decay: d.lr_decay,
            lr_decay_every: d.lr_decay_every,
            max_epochs: d.max_epochs,
            early_stop_loss: d.early_stop_loss,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            lr_decay: self.lr_decay,
            lr_decay_every: self.lr_decay_every,
            max_epochs: self.max_epochs,
            early_stop_loss: self.early_stop_loss,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormName {
    L2,
    Linf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialSection {
    pub norm: NormName,
    pub epsilon: f64,
    pub steps: Option<usize>,
    pub step_size: Option<f64>,
}

impl AdversarialSection {
    pub fn to_config(&self) -> AdvConfig {
        let norm = match self.norm {
            NormName::L2 => Norm::L2,
            NormName::Linf => Norm::Linf,
        };
        let mut adv = AdvConfig::new(norm, self.epsilon);
        if let Some(s) = self.steps {
            adv.steps = s;
        }
        if let Some(s) = self.step_size {
            adv.step_size = s;
        }
        adv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    Gradient,
    SignedGradient,
    Smoothgrad,
    IntegratedGradients,
    Occlusion,
    GuidedBackprop,
    Random,
    Oracle,
    AntiOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetName {
    Loss,
    Logit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionSection {
    pub scheme: SchemeName,
    pub target: TargetName,
    pub sigma: f64,
    pub n_samples: usize,
    pub n_steps: usize,
    pub patch: usize,
    /// Number of test examples whose scores are written out.
    pub dump: usize,
}

impl Default for AttributionSection {
    fn default() -> Self {
        Self {
            scheme: SchemeName::Gradient,
            target: TargetName::Loss,
            sigma: 0.1,
            n_samples: 50,
            n_steps: 32,
            patch: 5,
            dump: 5,
        }
    }
}

impl AttributionSection {
    pub fn scheme(&self) -> Scheme {
        let target = match self.target {
            TargetName::Loss => GradTarget::LossAtPredictedLabel,
            TargetName::Logit => GradTarget::LogitOfPredictedLabel,
        };
        match self.scheme {
            SchemeName::Gradient => Scheme::Gradient { target, signed: false },
            SchemeName::SignedGradient => Scheme::Gradient { target, signed: true },
            SchemeName::Smoothgrad => Scheme::SmoothGrad {
                target,
                sigma: self.sigma,
                n_samples: self.n_samples,
                signed: false,
            },
            SchemeName::IntegratedGradients => Scheme::IntegratedGradients {
                target,
                n_steps: self.n_steps,
            },
            SchemeName::Occlusion => Scheme::Occlusion {
                target,
                patch: self.patch,
            },
            SchemeName::GuidedBackprop => Scheme::GuidedBackprop,
            SchemeName::Random => Scheme::Random,
            SchemeName::Oracle => Scheme::Oracle,
            SchemeName::AntiOracle => Scheme::AntiOracle,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffRoarSection {
    pub levels: Vec<f64>,
    pub n_seeds: usize,
    /// Hidden widths of the retrained models.
    pub hidden: Vec<usize>,
    /// Overrides `train.max_epochs` for retraining.
    pub max_epochs: Option<usize>,
    pub no_retrain: bool,
}

impl Default for DiffRoarSection {
    fn default() -> Self {
        Self {
            levels: diffroar::eval::DEFAULT_LEVELS.to_vec(),
            n_seeds: 3,
            hidden: vec![64],
            max_epochs: None,
            no_retrain: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeakageSection {
    pub levels: Vec<f64>,
}

impl Default for LeakageSection {
    fn default() -> Self {
        Self {
            levels: diffroar::eval::DEFAULT_LEVELS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySection {
    pub num_blocks: usize,
    pub noise: f64,
    pub restarts: usize,
    pub tolerance: f64,
    pub block_tolerance: f64,
    /// Extra sampled points for the gradient block check.
    pub sampled_points: usize,
}

impl Default for TheorySection {
    fn default() -> Self {
        Self {
            num_blocks: 10,
            noise: 0.0,
            restarts: 1000,
            tolerance: 1e-6,
            block_tolerance: 1e-9,
            sampled_points: 200,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Output directories of earlier runs to merge.
    pub inputs: Vec<PathBuf>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg = Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.check_paths(path.parent().unwrap_or(Path::new(".")))?;
        Ok(cfg)
    }

    /// Referenced files must exist; relative paths are taken relative to the
    /// config file.
    fn check_paths(&self, base: &Path) -> Result<()> {
        let paths = [
            self.data.idx_images.as_ref(),
            self.data.idx_labels.as_ref(),
            self.model.checkpoint.as_ref(),
        ];
        for p in paths.into_iter().flatten().chain(&self.report.inputs) {
            let full = base.join(p);
            if !full.exists() {
                bail!("config references missing path {}", full.display());
            }
        }
        Ok(())
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.data.idx_images,
            &mut self.data.idx_labels,
            &mut self.model.checkpoint,
        ]
        .into_iter()
        .flatten()
        {
            *p = base.join(&*p);
        }
        for p in &mut self.report.inputs {
            *p = base.join(&*p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c.data.kind, DataKind::Synthetic);
        assert_eq!(c.train.lr, 0.1);
        assert_eq!(c.diffroar.n_seeds, 3);
        assert!(c.adversarial.is_none());
    }

    #[test]
    fn sections_parse() {
        let c = ExperimentConfig::parse(
            r#"
[data]
kind = "block-images"
block_h = 14
block_w = 14
placement = "top"

[adversarial]
norm = "l2"
epsilon = 2.0

[attribution]
scheme = "smoothgrad"
sigma = 0.3
"#,
        )
        .unwrap();
        assert_eq!(c.data.image_config().unwrap().placement, Placement::FixedTop);
        let adv = c.adversarial.unwrap().to_config();
        assert_eq!((adv.norm, adv.epsilon, adv.step_size), (Norm::L2, 2.0, 0.5));
        assert!(matches!(c.attribution.scheme(), Scheme::SmoothGrad { sigma, .. } if sigma == 0.3));
    }

    #[test]
    fn unknown_key_is_named_with_its_line() {
        let err = ExperimentConfig::parse("[train]\nlr = 0.1\nlearning_rate = 0.2\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("learning_rate"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
    }
}
