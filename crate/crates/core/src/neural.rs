//! Small dense ReLU networks with hand-written reverse mode, a Gaussian
//! barrier head and first-order optimizers.

use std::f64::consts::{E, PI};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Feed-forward network: affine and ReLU layers, affine output.
/// Weights are stored `fan_in × fan_out` so a batch is `X · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Parameter-shaped buffer for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.weights.iter_mut().for_each(|w| *w *= k);
        self.biases.iter_mut().for_each(|b| *b *= k);
    }

    /// `self += k · other`.
    pub fn add_scaled(&mut self, other: &Gradients, k: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.scaled_add(k, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.scaled_add(k, b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Flat view in layer order, weights before biases.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }
}

/// Activations kept by a batched forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the input, `acts[l]` the post-ReLU output of layer `l`.
    acts: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Mlp {
    /// Uniform `±1/√fan_in` weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Mlp::zeros(sizes)?;
        for w in &mut net.weights {
            let bound = 1.0 / (w.nrows() as f64).sqrt();
            let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            w.mapv_inplace(|_| u.sample(rng));
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(
                "layer_sizes",
                format!("need at least two positive sizes, got {sizes:?}"),
            ));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            weights: sizes.windows(2).map(|s| Array2::zeros((s[0], s[1]))).collect(),
            biases: sizes[1..].iter().map(|&n| Array1::zeros(n)).collect(),
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|s| s[0] * s[1] + s[1]).sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// One output row per input row.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let last = self.weights.len() - 1;
        let mut h = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.dot(w) + b;
            if l < last {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(h)
    }

    pub fn forward_trace(&self, x: ArrayView2<'_, f64>) -> Result<Trace> {
        self.check_input(x.ncols())?;
        let last = self.weights.len() - 1;
        let mut acts = vec![x.to_owned()];
        let mut output = Array2::zeros((0, 0));
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut h = acts[l].dot(w) + b;
            if l < last {
                h.mapv_inplace(|v| v.max(0.0));
                acts.push(h);
            } else {
                output = h;
            }
        }
        Ok(Trace { acts, output })
    }

    /// Gradient of `output · upstream` for a single input.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<Gradients> {
        self.check_input(input.len())?;
        if upstream.len() != self.output_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.output_dim(),
                actual: upstream.len(),
            });
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        let u = ArrayView2::from_shape((1, upstream.len()), upstream).expect("row vector");
        let trace = self.forward_trace(x)?;
        let mut g = Gradients::zeros_like(self);
        self.accumulate_backward(&trace, u, &mut g)?;
        Ok(g)
    }

    /// Add the gradient of `Σ_rows output_r · upstream_r` into `g`.
    pub fn accumulate_backward(&self, trace: &Trace, upstream: ArrayView2<'_, f64>, g: &mut Gradients) -> Result<()> {
        if upstream.dim() != trace.output.dim() {
            return Err(Error::ShapeMismatch {
                expected: trace.output.len(),
                actual: upstream.len(),
            });
        }
        let mut delta = upstream.to_owned();
        for l in (0..self.weights.len()).rev() {
            let a = &trace.acts[l];
            g.weights[l] += &a.t().dot(&delta);
            g.biases[l] += &delta.sum_axis(Axis(0));
            if l > 0 {
                let mut prev = delta.dot(&self.weights[l].t());
                prev.zip_mut_with(a, |d, &act| {
                    if act <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, n: usize) -> Result<()> {
        if n != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim(),
                actual: n,
            });
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> MlpCheckpoint {
        MlpCheckpoint {
            layer_sizes: self.sizes.clone(),
            weights: self.weights.iter().map(|w| w.iter().copied().collect()).collect(),
            biases: self.biases.iter().map(|b| b.to_vec()).collect(),
        }
    }

    pub fn from_checkpoint(ck: &MlpCheckpoint) -> Result<Self> {
        let mut net = Mlp::zeros(&ck.layer_sizes)?;
        let n_layers = net.weights.len();
        if ck.weights.len() != n_layers || ck.biases.len() != n_layers {
            return Err(Error::ShapeMismatch {
                expected: n_layers,
                actual: ck.weights.len().min(ck.biases.len()),
            });
        }
        for l in 0..n_layers {
            let (r, c) = net.weights[l].dim();
            if ck.weights[l].len() != r * c {
                return Err(Error::ShapeMismatch {
                    expected: r * c,
                    actual: ck.weights[l].len(),
                });
            }
            if ck.biases[l].len() != c {
                return Err(Error::ShapeMismatch {
                    expected: c,
                    actual: ck.biases[l].len(),
                });
            }
            net.weights[l] = Array2::from_shape_vec((r, c), ck.weights[l].clone()).expect("checked shape");
            net.biases[l] = Array1::from_vec(ck.biases[l].clone());
        }
        if !net.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        Ok(net)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_checkpoint()).expect("plain data serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Mlp::from_checkpoint(&serde_json::from_str(s)?)
    }
}

/// On-disk network: layer sizes plus row-major weight and bias arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpCheckpoint {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Two independent normals `N(μ₁, σ₁)`, `N(μ₂, σ₂)` read off a 4-vector
/// `(μ₁, s₁, μ₂, s₂)` with `σ = softplus(s) + σ_min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianHead {
    pub mu1: f64,
    pub sigma1: f64,
    pub mu2: f64,
    pub sigma2: f64,
}

const LN_2PI: f64 = 1.8378770664093453;

impl GaussianHead {
    pub fn from_raw(raw: &[f64], sigma_min: f64) -> Self {
        GaussianHead {
            mu1: raw[0],
            sigma1: softplus(raw[1]) + sigma_min,
            mu2: raw[2],
            sigma2: softplus(raw[3]) + sigma_min,
        }
    }

    pub fn log_prob(&self, g1: f64, g2: f64) -> f64 {
        let z1 = (g1 - self.mu1) / self.sigma1;
        let z2 = (g2 - self.mu2) / self.sigma2;
        -LN_2PI - self.sigma1.ln() - self.sigma2.ln() - 0.5 * (z1 * z1 + z2 * z2)
    }

    pub fn entropy(&self) -> f64 {
        0.5 * ((2.0 * PI * E * self.sigma1 * self.sigma1).ln() + (2.0 * PI * E * self.sigma2 * self.sigma2).ln())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let n1: f64 = StandardNormal.sample(rng);
        let n2: f64 = StandardNormal.sample(rng);
        (self.mu1 + self.sigma1 * n1, self.mu2 + self.sigma2 * n2)
    }

    /// `∂ log p(g₁, g₂) / ∂raw`.
    pub fn log_prob_grad_raw(raw: &[f64], sigma_min: f64, g1: f64, g2: f64) -> [f64; 4] {
        let h = GaussianHead::from_raw(raw, sigma_min);
        let d1 = g1 - h.mu1;
        let d2 = g2 - h.mu2;
        let s1 = h.sigma1 * h.sigma1;
        let s2 = h.sigma2 * h.sigma2;
        [
            d1 / s1,
            (-1.0 / h.sigma1 + d1 * d1 / (s1 * h.sigma1)) * sigmoid(raw[1]),
            d2 / s2,
            (-1.0 / h.sigma2 + d2 * d2 / (s2 * h.sigma2)) * sigmoid(raw[3]),
        ]
    }

    /// `∂ entropy / ∂raw`.
    pub fn entropy_grad_raw(raw: &[f64], sigma_min: f64) -> [f64; 4] {
        let h = GaussianHead::from_raw(raw, sigma_min);
        [0.0, sigmoid(raw[1]) / h.sigma1, 0.0, sigmoid(raw[3]) / h.sigma2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub kind: OptimizerKind,
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig {
            lr,
            kind: OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
        }
    }

    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig {
            lr,
            kind: OptimizerKind::Sgd,
        }
    }
}

/// Gradient ascent with optional Adam moments.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, net: &Mlp) -> Self {
        Optimizer {
            config,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// Move `net` along `+grad`. A non-finite gradient leaves everything
    /// untouched and returns an error.
    pub fn step(&mut self, net: &mut Mlp, grad: &Gradients) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        let lr = self.config.lr;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (w, g) in net.weights.iter_mut().zip(&grad.weights) {
                    w.scaled_add(lr, g);
                }
                for (b, g) in net.biases.iter_mut().zip(&grad.biases) {
                    b.scaled_add(lr, g);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                let upd = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p += lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                };
                for l in 0..net.weights.len() {
                    ndarray::Zip::from(&mut net.weights[l])
                        .and(&grad.weights[l])
                        .and(&mut self.m.weights[l])
                        .and(&mut self.v.weights[l])
                        .for_each(|p, &g, m, v| upd(p, g, m, v));
                    ndarray::Zip::from(&mut net.biases[l])
                        .and(&grad.biases[l])
                        .and(&mut self.m.biases[l])
                        .and(&mut self.v.biases[l])
                        .for_each(|p, &g, m, v| upd(p, g, m, v));
                }
            }
        }
        Ok(())
    }
}
