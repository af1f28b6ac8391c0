//! Dense feed-forward networks with exact reverse-mode gradients and Adam.
//!
//! Parameters live in one flat vector (per layer: the `out × in` row-major
//! weight matrix, then the bias), which is also the layout of gradients and
//! optimizer moments. Batches are row-major `batch × features` slices.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => libm::tanh(x),
            Activation::Sigmoid => 1.0 / (1.0 + libm::exp(-x)),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            "identity" => Activation::Identity,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl LayerShape {
    fn weights(&self) -> usize {
        self.input * self.output
    }

    fn params(&self) -> usize {
        self.weights() + self.output
    }
}

static STAMPS: AtomicU64 = AtomicU64::new(1);

fn next_stamp() -> u64 {
    STAMPS.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<LayerShape>,
    params: Vec<f64>,
    /// Changes whenever parameters change; ties caches to a parameter state.
    stamp: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.params == other.params
    }
}

/// Layer inputs and outputs recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stamp: u64,
    batch: usize,
    /// `values[0]` is the input, `values[l + 1]` the output of layer `l`.
    values: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("cache holds the input")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Same layout as the network parameters.
    pub params: Vec<f64>,
    /// `batch × input_dim`.
    pub input: Vec<f64>,
}

impl DenseNet {
    /// Weights uniform in ±sqrt(6 / (fan_in + fan_out)), biases zero.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("a network needs at least two positive dims".into()));
        }
        check_dim(dims.len() - 1, activations.len())?;
        let layers: Vec<LayerShape> = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| LayerShape {
                input: w[0],
                output: w[1],
                activation,
            })
            .collect();
        let mut params = Vec::with_capacity(layers.iter().map(LayerShape::params).sum());
        for l in &layers {
            let limit = libm::sqrt(6.0 / (l.input + l.output) as f64);
            params.extend((0..l.weights()).map(|_| rng.random_range(-limit..=limit)));
            params.extend(core::iter::repeat_n(0.0, l.output));
        }
        Ok(DenseNet {
            layers,
            params,
            stamp: next_stamp(),
        })
    }

    /// Rebuilds a network from stored shapes and parameters.
    pub fn from_parts(layers: Vec<LayerShape>, params: Vec<f64>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("a network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            check_dim(w[0].output, w[1].input)?;
        }
        check_dim(layers.iter().map(LayerShape::params).sum(), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite network parameter".into()));
        }
        Ok(DenseNet {
            layers,
            params,
            stamp: next_stamp(),
        })
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Mutable access to the parameters; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.stamp = next_stamp();
        &mut self.params
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(x, 1)?.values.pop().expect("output"))
    }

    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Result<ForwardCache> {
        check_dim(batch * self.input_dim(), x.len())?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.to_vec());
        let mut offset = 0;
        for l in &self.layers {
            let w = &self.params[offset..offset + l.weights()];
            let b = &self.params[offset + l.weights()..offset + l.params()];
            offset += l.params();
            let input = values.last().expect("input");
            let mut out = vec![0.0; batch * l.output];
            for yr in out.chunks_exact_mut(l.output) {
                yr.copy_from_slice(b);
            }
            // out += input · Wᵀ
            gemm(batch, l.input, l.output, input, (l.input, 1), w, (1, l.input), &mut out, l.output);
            for y in out.iter_mut() {
                *y = l.activation.apply(*y);
            }
            values.push(out);
        }
        Ok(ForwardCache {
            stamp: self.stamp,
            batch,
            values,
        })
    }

    /// Reverse pass. `upstream` is dL/d(output), `batch × output_dim`;
    /// gradients are summed over the batch.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Gradients> {
        self.backward_impl(cache, upstream, true, true)
    }

    /// As [`DenseNet::backward`] but skips the input gradient.
    pub fn backward_params(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Vec<f64>> {
        Ok(self.backward_impl(cache, upstream, true, false)?.params)
    }

    /// Only the gradient with respect to the input.
    pub fn backward_input(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Vec<f64>> {
        Ok(self.backward_impl(cache, upstream, false, true)?.input)
    }

    fn backward_impl(&self, cache: &ForwardCache, upstream: &[f64], want_params: bool, want_input: bool) -> Result<Gradients> {
        if cache.stamp != self.stamp || cache.values.len() != self.layers.len() + 1 {
            return Err(Error::InvalidCache);
        }
        let batch = cache.batch;
        check_dim(batch * self.output_dim(), upstream.len())?;

        let mut grads = if want_params { vec![0.0; self.params.len()] } else { Vec::new() };
        let mut delta = upstream.to_vec();
        let mut offset = self.params.len();
        let mut input_grad = Vec::new();
        for (li, l) in self.layers.iter().enumerate().rev() {
            offset -= l.params();
            let w = &self.params[offset..offset + l.weights()];
            let x = &cache.values[li];
            let y = &cache.values[li + 1];
            for (d, &yv) in delta.iter_mut().zip(y) {
                *d *= l.activation.derivative_from_output(yv);
            }
            let need_dx = li > 0 || want_input;
            let mut dx = if need_dx { vec![0.0; batch * l.input] } else { Vec::new() };
            if want_params {
                let (gw, gb) = grads[offset..offset + l.params()].split_at_mut(l.weights());
                for dr in delta.chunks_exact(l.output) {
                    for (g, d) in gb.iter_mut().zip(dr) {
                        *g += d;
                    }
                }
                // gW += Δᵀ · X
                gemm(l.output, batch, l.input, &delta, (1, l.output), x, (l.input, 1), gw, l.input);
            }
            if need_dx {
                // dX = Δ · W
                gemm(batch, l.output, l.input, &delta, (l.output, 1), w, (l.input, 1), &mut dx, l.input);
            }
            if li == 0 {
                input_grad = dx;
            } else {
                delta = dx;
            }
        }
        Ok(Gradients {
            params: grads,
            input: input_grad,
        })
    }

    /// Applies one Adam step to the parameters.
    pub fn adam_step(&mut self, grads: &[f64], state: &mut AdamState) -> Result<()> {
        state.step(self.params_mut(), grads)
    }
}

/// `c (m×n, row stride ldc) += a (m×k) · b (k×n)`, with `a` and `b` given by
/// (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    ldc: usize,
) {
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= m * ldc);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: the strides and extents above describe in-bounds views of
    // `a`, `b` and `c`, and `c` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            config,
        }
    }

    /// Bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_dim(self.m.len(), params.len())?;
        check_dim(self.m.len(), grads.len())?;
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - libm::pow(beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(beta2, self.step as f64);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (libm::sqrt(v_hat) + eps);
        }
        Ok(())
    }
}

pub const BCE_EPS: f64 = 1e-7;

/// Loss `−[y log p + (1−y) log(1−p)]` and its derivative in `p`, both at
/// `p` clamped to `[ε, 1−ε]`.
pub fn binary_cross_entropy(prediction: f64, label: f64) -> (f64, f64) {
    let p = prediction.clamp(BCE_EPS, 1.0 - BCE_EPS);
    let loss = -(label * libm::log(p) + (1.0 - label) * libm::log(1.0 - p));
    let grad = -label / p + (1.0 - label) / (1.0 - p);
    (loss, grad)
}
