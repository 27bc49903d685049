//! Classifiers with hand-written backward passes.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Probability floor inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Weights and biases uniform in `±1/sqrt(inputs)`.
    pub fn init(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((outputs, inputs), |_| rng.uniform_in(-bound, bound)),
            bias: Array1::from_shape_fn(outputs, |_| rng.uniform_in(-bound, bound)),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Parameter gradients and the gradient with respect to `x`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>) -> (LinearGrad, Array2<f64>) {
        let grad = LinearGrad {
            weight: dy.t().dot(x),
            bias: dy.sum_axis(Axis(0)),
        };
        (grad, dy.dot(&self.weight))
    }
}

/// Per-feature batch normalization over the batch axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrad {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Normalizes with batch statistics and updates the running estimates.
    pub fn forward_train(&mut self, x: &Array2<f64>) -> (Array2<f64>, BatchNormCache) {
        let n = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = x - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = &centered * &inv_std;
        let unbiased = if n > 1.0 { &var * (n / (n - 1.0)) } else { var.clone() };
        let m = self.momentum;
        self.running_mean = &self.running_mean * (1.0 - m) + &mean * m;
        self.running_var = &self.running_var * (1.0 - m) + &unbiased * m;
        let y = &xhat * &self.gamma + &self.beta;
        (y, BatchNormCache { xhat, inv_std })
    }

    pub fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let inv_std = self.running_var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        (x - &self.running_mean) * &inv_std * &self.gamma + &self.beta
    }

    pub fn backward(&self, cache: &BatchNormCache, dy: &Array2<f64>) -> (BatchNormGrad, Array2<f64>) {
        let n = dy.nrows() as f64;
        let grad = BatchNormGrad {
            gamma: (dy * &cache.xhat).sum_axis(Axis(0)),
            beta: dy.sum_axis(Axis(0)),
        };
        let dxhat = dy * &self.gamma;
        let sum = dxhat.sum_axis(Axis(0));
        let dot = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let dx = (dxhat * n - &sum - &cache.xhat * &dot) * &(&cache.inv_std / n);
        (grad, dx)
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through a ReLU given its input.
pub fn relu_backward(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// Row-wise softmax.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Floors a probability at [`PROB_FLOOR`]; NaN passes through.
fn floored(p: f64) -> f64 {
    if p < PROB_FLOOR {
        PROB_FLOOR
    } else {
        p
    }
}

/// `−ln p[label]` with the probability floored at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -floored(probs[label]).ln()
}

/// Binary cross entropy of a probability `score` for a 0/1 `label`.
pub fn bce(score: f64, label: f64) -> f64 {
    -(label * floored(score).ln() + (1.0 - label) * floored(1.0 - score).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// Logistic regression: one affine layer.
    Lr,
    /// One hidden layer of 800 units with batch norm and ReLU.
    Fc800,
}

impl Architecture {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Lr => "lr",
            Self::Fc800 => "fc800",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "lr" => Ok(Self::Lr),
            "fc800" | "fc" => Ok(Self::Fc800),
            other => Err(Error::InvalidArgument(format!("unknown architecture `{other}`"))),
        }
    }
}

pub const FC_HIDDEN: usize = 800;

/// Classifier over flattened embeddings. With one output the model is a
/// binary classifier emitting a sigmoid score; otherwise a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub architecture: Architecture,
    pub hidden: Option<(Linear, BatchNorm)>,
    pub output: Linear,
}

#[derive(Debug, Clone)]
pub struct ClassifierCache {
    input: Array2<f64>,
    hidden: Option<(Array2<f64>, BatchNormCache, Array2<f64>, Array2<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrad {
    pub hidden: Option<(LinearGrad, BatchNormGrad)>,
    pub output: LinearGrad,
}

impl ClassifierGrad {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        if let Some((lin, bn)) = &self.hidden {
            out.extend([
                lin.weight.as_slice().expect("contiguous"),
                lin.bias.as_slice().expect("contiguous"),
                bn.gamma.as_slice().expect("contiguous"),
                bn.beta.as_slice().expect("contiguous"),
            ]);
        }
        out.push(self.output.weight.as_slice().expect("contiguous"));
        out.push(self.output.bias.as_slice().expect("contiguous"));
        out
    }
}

impl Classifier {
    pub fn new(architecture: Architecture, inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        match architecture {
            Architecture::Lr => Self {
                architecture,
                hidden: None,
                output: Linear::init(inputs, outputs, rng),
            },
            Architecture::Fc800 => Self {
                architecture,
                hidden: Some((Linear::init(inputs, FC_HIDDEN, rng), BatchNorm::new(FC_HIDDEN))),
                output: Linear::init(FC_HIDDEN, outputs, rng),
            },
        }
    }

    pub fn inputs(&self) -> usize {
        match &self.hidden {
            Some((lin, _)) => lin.inputs(),
            None => self.output.inputs(),
        }
    }

    pub fn outputs(&self) -> usize {
        self.output.outputs()
    }

    pub fn is_binary(&self) -> bool {
        self.outputs() == 1
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.inputs() {
            return Err(Error::ShapeMismatch {
                expected: vec![x.nrows(), self.inputs()],
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Logits in evaluation mode (running batch-norm statistics).
    pub fn logits(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(match &self.hidden {
            Some((lin, bn)) => self.output.forward(&relu(&bn.forward_eval(&lin.forward(x)))),
            None => self.output.forward(x),
        })
    }

    /// Logits in training mode; batch norm uses and updates batch statistics.
    pub fn logits_train(&mut self, x: &Array2<f64>) -> Result<(Array2<f64>, ClassifierCache)> {
        self.check_input(x)?;
        let (features, hidden) = match &mut self.hidden {
            Some((lin, bn)) => {
                let pre = lin.forward(x);
                let (normed, bn_cache) = bn.forward_train(&pre);
                let act = relu(&normed);
                (act.clone(), Some((pre, bn_cache, normed, act)))
            }
            None => (x.clone(), None),
        };
        let logits = self.output.forward(&features);
        Ok((
            logits,
            ClassifierCache {
                input: x.clone(),
                hidden,
            },
        ))
    }

    /// Class probabilities (softmax) or binary scores (sigmoid), eval mode.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.probabilities(&self.logits(x)?))
    }

    pub fn probabilities(&self, logits: &Array2<f64>) -> Array2<f64> {
        if self.is_binary() {
            logits.mapv(sigmoid)
        } else {
            softmax(logits)
        }
    }

    pub fn backward(&self, cache: &ClassifierCache, dlogits: &Array2<f64>) -> (ClassifierGrad, Array2<f64>) {
        match (&self.hidden, &cache.hidden) {
            (Some((lin, bn)), Some((_pre, bn_cache, normed, act))) => {
                let (out_grad, dact) = self.output.backward(act, dlogits);
                let dnormed = relu_backward(normed, &dact);
                let (bn_grad, dpre) = bn.backward(bn_cache, &dnormed);
                let (lin_grad, dx) = lin.backward(&cache.input, &dpre);
                (
                    ClassifierGrad {
                        hidden: Some((lin_grad, bn_grad)),
                        output: out_grad,
                    },
                    dx,
                )
            }
            _ => {
                let (out_grad, dx) = self.output.backward(&cache.input, dlogits);
                (
                    ClassifierGrad {
                        hidden: None,
                        output: out_grad,
                    },
                    dx,
                )
            }
        }
    }

    /// Trainable parameters in the same order as [`ClassifierGrad::slices`].
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        if let Some((lin, bn)) = &mut self.hidden {
            out.push(lin.weight.as_slice_mut().expect("contiguous"));
            out.push(lin.bias.as_slice_mut().expect("contiguous"));
            out.push(bn.gamma.as_slice_mut().expect("contiguous"));
            out.push(bn.beta.as_slice_mut().expect("contiguous"));
        }
        out.push(self.output.weight.as_slice_mut().expect("contiguous"));
        out.push(self.output.bias.as_slice_mut().expect("contiguous"));
        out
    }

    /// Named parameter and running-statistic arrays, for checkpoints.
    pub fn named_arrays(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        let mut push = |name: &str, shape: &[usize], data: &[f64]| {
            out.push((name.to_string(), shape.to_vec(), data.to_vec()));
        };
        if let Some((lin, bn)) = &self.hidden {
            push("hidden.weight", lin.weight.shape(), lin.weight.as_slice().expect("contiguous"));
            push("hidden.bias", lin.bias.shape(), lin.bias.as_slice().expect("contiguous"));
            push("bn.gamma", bn.gamma.shape(), bn.gamma.as_slice().expect("contiguous"));
            push("bn.beta", bn.beta.shape(), bn.beta.as_slice().expect("contiguous"));
            push("bn.running_mean", bn.running_mean.shape(), bn.running_mean.as_slice().expect("contiguous"));
            push("bn.running_var", bn.running_var.shape(), bn.running_var.as_slice().expect("contiguous"));
        }
        push("output.weight", self.output.weight.shape(), self.output.weight.as_slice().expect("contiguous"));
        push("output.bias", self.output.bias.shape(), self.output.bias.as_slice().expect("contiguous"));
        out
    }
}

/// Mean loss over a batch and its gradient with respect to the logits.
///
/// For softmax outputs this is cross entropy against class indices; for a
/// binary classifier it is BCE against labels in {0, 1}.
pub fn loss_and_grad(probs: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let n = labels.len() as f64;
    let mut grad = probs.clone();
    let mut loss = 0.0;
    if probs.ncols() == 1 {
        for (i, &y) in labels.iter().enumerate() {
            let p = probs[[i, 0]];
            loss += bce(p, y as f64);
            grad[[i, 0]] = (p - y as f64) / n;
        }
    } else {
        for (i, &y) in labels.iter().enumerate() {
            loss += cross_entropy(probs.row(i).as_slice().expect("contiguous"), y);
            grad[[i, y]] -= 1.0;
        }
        grad /= n;
    }
    (loss / n, grad)
}

pub fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Predicted class per row; binary scores threshold at 0.5.
pub fn predictions(probs: &Array2<f64>) -> Vec<usize> {
    if probs.ncols() == 1 {
        probs.column(0).iter().map(|&p| usize::from(p >= 0.5)).collect()
    } else {
        probs.rows().into_iter().map(argmax).collect()
    }
}
