//! Dense ReLU networks with exact reverse-mode gradients.
//!
//! A network with `L` layers computes
//! `W_L·ReLU(… ReLU(W_1 x + b_1) …) + b_L`; zero layers of ReLU give a linear
//! model. Binary tasks use a single logit with the logistic loss
//! `log(1 + exp(−y f))`, multiclass tasks use softmax cross-entropy.

mod checkpoint;
mod loss;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use loss::{loss, loss_and_grad, predict, sigmoid, signed_label, softplus};

use rand_distr::{Distribution, Normal};

use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// One affine layer; `weight` is `out × in`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(out_dim: usize, in_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != out_dim * in_dim {
            return Err(Error::DimensionMismatch {
                expected: out_dim * in_dim,
                actual: weight.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(Error::DimensionMismatch {
                expected: out_dim,
                actual: bias.len(),
            });
        }
        Ok(Self {
            out_dim,
            in_dim,
            weight,
            bias,
        })
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.weight[o * self.in_dim..(o + 1) * self.in_dim]
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.bias
                .iter()
                .enumerate()
                .map(|(o, b)| b + crate::stats::dot(self.row(o), x)),
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Dense>,
}

/// Cached intermediates of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    /// Pre-activations of every layer; the last entry is the logits.
    pub pre: Vec<Vec<f64>>,
    /// `ReLU(pre[l])` for every hidden layer.
    pub post: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        self.pre.last().unwrap()
    }
}

/// Parameter gradients with the same shapes as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weight: params.layers.iter().map(|l| vec![0.0; l.weight.len()]).collect(),
            bias: params.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.weight
            .iter_mut()
            .chain(self.bias.iter_mut())
            .flatten()
            .for_each(|x| *x *= c);
    }

    /// All entries, layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weight.iter().zip(&self.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Which scalar an input gradient is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GradTarget {
    /// Loss evaluated at the predicted label.
    LossAtPredictedLabel,
    /// Logit of the predicted label; for a single-logit model this is `ŷ·f`.
    LogitOfPredictedLabel,
}

impl MlpParams {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[1].in_dim != pair[0].out_dim {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].out_dim,
                    actual: pair[1].in_dim,
                });
            }
        }
        if layers
            .iter()
            .any(|l| l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(Self { layers })
    }

    /// He-initialised weights `N(0, 2/fan_in)` and zero biases.
    /// `arch` lists layer widths from input to output.
    pub fn init(arch: &[usize], seed: u64) -> Result<Self> {
        if arch.len() < 2 {
            return Err(Error::InvalidConfig(
                "architecture needs an input and an output width".into(),
            ));
        }
        if arch.contains(&0) {
            return Err(Error::InvalidConfig(format!("zero-width layer in {arch:?}")));
        }
        let mut rng = rng_from_seed(seed);
        let layers = arch
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                let weight = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
                Dense::new(fan_out, fan_in, weight, vec![0.0; fan_out])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn arch(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Every parameter multiplied by `c`.
    pub fn scaled(&self, c: f64) -> MlpParams {
        let mut out = self.clone();
        for l in &mut out.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= c);
        }
        out
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut pre = Vec::with_capacity(n);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(n - 1);
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { x } else { &post[l - 1] };
            let mut z = Vec::with_capacity(layer.out_dim);
            layer.apply(input, &mut z);
            if l + 1 < n {
                post.push(z.iter().map(|&v| v.max(0.0)).collect());
            }
            pre.push(z);
        }
        let logits = pre.last().unwrap().clone();
        Ok((
            logits,
            ForwardTrace {
                input: x.to_vec(),
                pre,
                post,
            },
        ))
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if l + 1 < self.layers.len() {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(predict(&self.logits(x)?))
    }

    /// Reverse pass from `d_logits`. Returns the input gradient and, when
    /// `grads` is given, accumulates parameter gradients into it.
    ///
    /// With `guided`, every ReLU passes only positive upstream gradients of
    /// positively activated units. The ReLU derivative at 0 is 0.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        d_logits: &[f64],
        mut grads: Option<&mut Gradients>,
        guided: bool,
    ) -> Vec<f64> {
        debug_assert_eq!(d_logits.len(), self.output_dim());
        let mut delta = d_logits.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = if l == 0 { &trace.input } else { &trace.post[l - 1] };
            if let Some(g) = grads.as_deref_mut() {
                let gw = &mut g.weight[l];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    row.iter_mut().zip(input).for_each(|(w, &xi)| *w += d * xi);
                }
                g.bias[l].iter_mut().zip(&delta).for_each(|(b, &d)| *b += d);
            }
            let mut upstream = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                upstream
                    .iter_mut()
                    .zip(layer.row(o))
                    .for_each(|(u, &w)| *u += d * w);
            }
            if l > 0 {
                for (u, &z) in upstream.iter_mut().zip(&trace.pre[l - 1]) {
                    if z <= 0.0 || (guided && *u <= 0.0) {
                        *u = 0.0;
                    }
                }
            }
            delta = upstream;
        }
        delta
    }

    /// Parameter gradients and input gradient of the loss at `label`.
    pub fn backprop(&self, x: &[f64], label: usize) -> Result<(Gradients, Vec<f64>)> {
        let (logits, trace) = self.forward(x)?;
        let (_, d_logits) = loss_and_grad(&logits, label)?;
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.backward(&trace, &d_logits, Some(&mut grads), false);
        Ok((grads, input_grad))
    }

    /// Loss and its input gradient at a given label.
    pub fn loss_input_gradient(&self, x: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
        let (logits, trace) = self.forward(x)?;
        let (l, d_logits) = loss_and_grad(&logits, label)?;
        Ok((l, self.backward(&trace, &d_logits, None, false)))
    }

    fn target_seed(logits: &[f64], target: GradTarget) -> Result<Vec<f64>> {
        let pred = predict(logits);
        match target {
            GradTarget::LossAtPredictedLabel => Ok(loss_and_grad(logits, pred)?.1),
            GradTarget::LogitOfPredictedLabel => {
                if logits.len() == 1 {
                    Ok(vec![signed_label(pred)])
                } else {
                    let mut seed = vec![0.0; logits.len()];
                    seed[pred] = 1.0;
                    Ok(seed)
                }
            }
        }
    }

    /// Value of the scalar selected by `target`, with the predicted label
    /// taken from `reference_logits` so that perturbed inputs are scored
    /// against the prediction at the original point.
    pub fn target_value(logits: &[f64], reference_pred: usize, target: GradTarget) -> Result<f64> {
        match target {
            GradTarget::LossAtPredictedLabel => loss(logits, reference_pred),
            GradTarget::LogitOfPredictedLabel => Ok(if logits.len() == 1 {
                signed_label(reference_pred) * logits[0]
            } else {
                logits[reference_pred]
            }),
        }
    }

    pub fn input_gradient(&self, x: &[f64], target: GradTarget) -> Result<Vec<f64>> {
        let (logits, trace) = self.forward(x)?;
        let seed = Self::target_seed(&logits, target)?;
        Ok(self.backward(&trace, &seed, None, false))
    }

    /// Input gradient of the scalar `target` evaluated with a fixed label
    /// rather than the prediction at `x`.
    pub fn input_gradient_at_label(&self, x: &[f64], label: usize, target: GradTarget) -> Result<Vec<f64>> {
        let (logits, trace) = self.forward(x)?;
        let seed = match target {
            GradTarget::LossAtPredictedLabel => loss_and_grad(&logits, label)?.1,
            GradTarget::LogitOfPredictedLabel => {
                if logits.len() == 1 {
                    vec![signed_label(label)]
                } else {
                    let mut s = vec![0.0; logits.len()];
                    s[label] = 1.0;
                    s
                }
            }
        };
        Ok(self.backward(&trace, &seed, None, false))
    }

    /// Guided backpropagation of the predicted label's logit.
    pub fn guided_backprop(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (logits, trace) = self.forward(x)?;
        let seed = Self::target_seed(&logits, GradTarget::LogitOfPredictedLabel)?;
        Ok(self.backward(&trace, &seed, None, true))
    }
}
