//! Dense MLPs with hand-derived backward passes, Adam and global-norm
//! gradient clipping.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `in × out`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            w: Array2::zeros((input, output)),
            b: Array1::zeros(output),
        }
    }

    fn he(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / input as f64).sqrt()).expect("valid std");
        Linear {
            w: Array2::from_shape_simple_fn((input, output), || normal.sample(rng)),
            b: Array1::zeros(output),
        }
    }
}

/// Fully connected network; ReLU on hidden layers, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`, He-normal weights, zero biases.
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Self {
        Mlp {
            layers: dims.windows(2).map(|d| Linear::he(d[0], d[1], rng)).collect(),
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Mlp {
            layers: dims.windows(2).map(|d| Linear::zeros(d[0], d[1])).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.w.nrows(), l.w.ncols()))
                .collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.w.nrows())
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.ncols())
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(|l| l.w.ncols()));
        d
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.w) + &layer.b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(h);
            h = z;
        }
        (h, MlpCache { inputs })
    }

    /// Forward pass from the first layer's pre-activation `z0 = x·W0 + b0`,
    /// for callers that assemble it more cheaply than a full product.
    pub fn forward_from_first(&self, z0: Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = vec![Array2::zeros((0, 0))];
        let mut h = z0;
        for layer in self.layers.iter().skip(1) {
            h.mapv_inplace(|v| v.max(0.0));
            let z = h.dot(&layer.w) + &layer.b;
            inputs.push(h);
            h = z;
        }
        (h, MlpCache { inputs })
    }

    pub fn predict(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward(x).0
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input.
    pub fn backward(&self, cache: &MlpCache, d_out: &Array2<f64>, grads: &mut Mlp) -> Array2<f64> {
        self.backward_down_to(0, cache, d_out, grads)
    }

    /// Backward pass for a cache from [`Mlp::forward_from_first`]: fills
    /// gradients of layers `1..` and returns the gradient with respect to
    /// the first layer's pre-activation.
    pub fn backward_to_first(&self, cache: &MlpCache, d_out: &Array2<f64>, grads: &mut Mlp) -> Array2<f64> {
        self.backward_down_to(1, cache, d_out, grads)
    }

    fn backward_down_to(&self, stop: usize, cache: &MlpCache, d_out: &Array2<f64>, grads: &mut Mlp) -> Array2<f64> {
        let mut delta = d_out.clone();
        for i in (stop..self.layers.len()).rev() {
            let input = &cache.inputs[i];
            grads.layers[i].w += &input.t().dot(&delta);
            grads.layers[i].b += &delta.sum_axis(Axis(0));
            let mut d_in = delta.dot(&self.layers[i].w.t());
            if i > 0 {
                // input of layer i is relu(pre-activation of layer i-1)
                ndarray::Zip::from(&mut d_in).and(input).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = d_in;
        }
        delta
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice().expect("standard layout"), l.b.as_slice().expect("standard layout")])
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.w.as_slice_mut().expect("standard layout"),
                    l.b.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Mlp,
    pub v: Mlp,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &Mlp) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` with `grads`.
pub fn adam_step(params: &mut Mlp, grads: &Mlp, state: &mut AdamState, lr: f64, cfg: AdamConfig) -> Result<()> {
    if params.dims() != grads.dims() || params.dims() != state.m.dims() {
        return Err(Error::ShapeMismatch(format!(
            "params {:?}, grads {:?}, state {:?}",
            params.dims(),
            grads.dims(),
            state.m.dims()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let gs = grads.slices();
    let ms = state.m.slices_mut();
    let vs = state.v.slices_mut();
    for (((p, g), m), v) in params.slices_mut().into_iter().zip(gs).zip(ms).zip(vs) {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

pub fn global_norm(grads: &[&Mlp]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.slices())
        .flat_map(|s| s.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut Mlp], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.slices())
        .flat_map(|s| s.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for s in g.slices_mut() {
                s.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    norm
}
