//! Small fully connected networks with hand-written reverse mode.
//!
//! Hidden layers use a continuously differentiable activation; the output layer
//! is linear. Single-sample evaluation (used inside ODE right-hand sides) works on
//! slices, batched evaluation (used by training) on column-major matrices with one
//! sample per column.
//!
//! # Weight file format
//!
//! ```text
//! bytes 0..8     magic  b"RLBUSMLP"
//! bytes 8..12    header length L, u32 little-endian
//! bytes 12..12+L JSON header (UTF-8): {"layers":[in,h1,..,out],"activation":"tanh",
//!                "param_count":P, "output_scale": optional metadata}
//! then           P little-endian f64 parameters, layer by layer: weight matrix in
//!                row-major order (out × in), then the bias vector
//! ```

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const MAGIC: &[u8; 8] = b"RLBUSMLP";

/// Upper bound on the number of dense layers.
pub const MAX_LAYERS: usize = 16;

#[derive(Default)]
struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Scratch> = std::cell::RefCell::new(Scratch::default());
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("network shape error: {0}")]
    Shape(String),
    #[error("weight file error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Silu,
}

impl Activation {
    pub fn id(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Silu => "silu",
        }
    }

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Silu => z / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and the activation `a`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
        }
    }
}

/// Optional scaling metadata carried in the weight-file header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct OutputScale {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    layers: Vec<usize>,
    activation: Activation,
    param_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_scale: Option<OutputScale>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    activation: Activation,
}

/// Per-layer values retained by a single-sample forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    /// Activations of the hidden layers.
    post: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Batched forward cache: one sample per column.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    input: DMatrix<f64>,
    pre: Vec<DMatrix<f64>>,
    post: Vec<DMatrix<f64>>,
    pub output: DMatrix<f64>,
}

/// Parameter gradients with the layout of [`Mlp::params`].
pub type Gradient = Vec<f64>;

impl Mlp {
    /// Randomly initialised network, `U(-1/√fan_in, 1/√fan_in)` for weights and biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], activation: Activation, rng: &mut R) -> Result<Self, NnError> {
        if widths.len() < 2 || widths.len() > MAX_LAYERS + 1 || widths.iter().any(|&w| w == 0) {
            return Err(NnError::Shape(format!("invalid layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                Dense {
                    w: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound)),
                    b: DVector::from_fn(fan_out, |_, _| rng.random_range(-bound..bound)),
                }
            })
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn from_layers(layers: Vec<Dense>, activation: Activation) -> Result<Self, NnError> {
        if layers.is_empty() || layers.len() > MAX_LAYERS {
            return Err(NnError::Shape(format!("network needs 1..={MAX_LAYERS} layers")));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.b.len() != l.w.nrows() {
                return Err(NnError::Shape(format!("layer {i}: bias length {} vs {} rows", l.b.len(), l.w.nrows())));
            }
            if i > 0 && layers[i - 1].w.nrows() != l.w.ncols() {
                return Err(NnError::Shape(format!("layer {i}: input width mismatch")));
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.w.nrows()).unwrap_or(0)
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.w.nrows())).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flat parameters: per layer the weights (column-major) then the biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(l.b.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), NnError> {
        if params.len() != self.param_count() {
            return Err(NnError::Shape(format!("expected {} parameters, got {}", self.param_count(), params.len())));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.as_mut_slice().copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = l.b.len();
            l.b.as_mut_slice().copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    fn dense_into(layer: &Dense, x: &[f64], out: &mut Vec<f64>) {
        let rows = layer.w.nrows();
        out.clear();
        out.extend_from_slice(layer.b.as_slice());
        let w = layer.w.as_slice();
        for (j, &xj) in x.iter().enumerate() {
            let col = &w[j * rows..(j + 1) * rows];
            for (o, &wij) in out.iter_mut().zip(col) {
                *o += wij * xj;
            }
        }
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            Self::dense_into(layer, &cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Writes the first `out.len()` outputs for input `x`, using per-thread
    /// scratch buffers instead of fresh allocations.
    pub fn forward_head(&self, x: &[f64], out: &mut [f64]) {
        SCRATCH.with(|cell| {
            let scratch = &mut *cell.borrow_mut();
            let (cur, next) = (&mut scratch.a, &mut scratch.b);
            cur.clear();
            cur.extend_from_slice(x);
            let last = self.layers.len() - 1;
            for (i, layer) in self.layers.iter().enumerate() {
                Self::dense_into(layer, cur, next);
                if i < last {
                    next.iter_mut().for_each(|v| *v = self.activation.apply(*v));
                }
                std::mem::swap(cur, next);
            }
            out.copy_from_slice(&cur[..out.len()]);
        })
    }

    /// Like [`Self::forward_head`], also writing the input Jacobian of those
    /// outputs row-major into `jac` (`out.len() × input_dim`).
    pub fn jacobian_head(&self, x: &[f64], out: &mut [f64], jac: &mut [f64]) {
        let n_in = self.input_dim();
        debug_assert_eq!(jac.len(), out.len() * n_in);
        SCRATCH.with(|cell| {
            let scratch = &mut *cell.borrow_mut();
            let Scratch { a: acts, b: derivs, c: grad, d: next } = scratch;
            // acts: input then each hidden activation, concatenated; derivs: the
            // matching activation derivatives.
            acts.clear();
            derivs.clear();
            acts.extend_from_slice(x);
            let last = self.layers.len() - 1;
            let mut offsets = [0usize; MAX_LAYERS];
            let mut start = 0;
            for (i, layer) in self.layers.iter().enumerate() {
                Self::dense_into(layer, &acts[start..], next);
                if i < last {
                    start = acts.len();
                    offsets[i] = start;
                    for z in next.iter() {
                        let a = self.activation.apply(*z);
                        acts.push(a);
                        derivs.push(self.activation.derivative(*z, a));
                    }
                } else {
                    out.copy_from_slice(&next[..out.len()]);
                }
            }
            for r in 0..out.len() {
                grad.clear();
                grad.resize(self.output_dim(), 0.0);
                grad[r] = 1.0;
                for i in (0..self.layers.len()).rev() {
                    let w = &self.layers[i].w;
                    let rows = w.nrows();
                    let ws = w.as_slice();
                    next.clear();
                    next.extend((0..w.ncols()).map(|j| {
                        ws[j * rows..(j + 1) * rows].iter().zip(grad.iter()).map(|(p, q)| p * q).sum::<f64>()
                    }));
                    if i > 0 {
                        let d0 = offsets[i - 1] - n_in;
                        for (k, v) in next.iter_mut().enumerate() {
                            *v *= derivs[d0 + k];
                        }
                    }
                    std::mem::swap(grad, next);
                }
                jac[r * n_in..(r + 1) * n_in].copy_from_slice(&grad[..n_in]);
            }
        })
    }

    /// Single-sample forward pass keeping what reverse mode needs.
    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(last);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(last);
        let mut output = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { post[i - 1].as_slice() };
            let mut z = Vec::new();
            Self::dense_into(layer, input, &mut z);
            if i < last {
                let a = z.iter().map(|&v| self.activation.apply(v)).collect();
                pre.push(z);
                post.push(a);
            } else {
                output = z;
            }
        }
        Trace { pre, post, output }
    }

    /// Vector-Jacobian product `seedᵀ ∂output/∂input` for a traced sample.
    pub fn input_vjp(&self, trace: &Trace, seed: &[f64]) -> Vec<f64> {
        let mut g = seed.to_vec();
        let mut next = Vec::new();
        for i in (0..self.layers.len()).rev() {
            let w = &self.layers[i].w;
            let rows = w.nrows();
            let ws = w.as_slice();
            next.clear();
            next.extend((0..w.ncols()).map(|j| {
                let col = &ws[j * rows..(j + 1) * rows];
                col.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>()
            }));
            if i > 0 {
                let (z, a) = (&trace.pre[i - 1], &trace.post[i - 1]);
                for (k, v) in next.iter_mut().enumerate() {
                    *v *= self.activation.derivative(z[k], a[k]);
                }
            }
            std::mem::swap(&mut g, &mut next);
        }
        g
    }

    /// Jacobian of the first `rows` outputs w.r.t. the input, row-major `rows × in`.
    pub fn input_jacobian(&self, trace: &Trace, rows: usize) -> Vec<Vec<f64>> {
        let mut seed = vec![0.0; self.output_dim()];
        (0..rows)
            .map(|r| {
                seed.iter_mut().for_each(|s| *s = 0.0);
                seed[r] = 1.0;
                self.input_vjp(trace, &seed)
            })
            .collect()
    }

    /// Batched forward pass; `x` is `in × batch`.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> BatchTrace {
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(last);
        let mut post: Vec<DMatrix<f64>> = Vec::with_capacity(last);
        let mut output = DMatrix::zeros(0, 0);
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { &post[i - 1] };
            let mut z = &layer.w * input;
            for mut col in z.column_iter_mut() {
                col += &layer.b;
            }
            if i < last {
                let a = z.map(|v| self.activation.apply(v));
                pre.push(z);
                post.push(a);
            } else {
                output = z;
            }
        }
        BatchTrace { input: x.clone(), pre, post, output }
    }

    /// Reverse pass for a batch. `d_out` is `∂L/∂output` (`out × batch`). Returns
    /// the parameter gradient (summed over the batch) and `∂L/∂input`.
    pub fn backward_batch(&self, trace: &BatchTrace, d_out: &DMatrix<f64>) -> (Gradient, DMatrix<f64>) {
        let n_layers = self.layers.len();
        let mut per_layer: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(n_layers);
        let mut delta = d_out.clone();
        for i in (0..n_layers).rev() {
            let input = if i == 0 { &trace.input } else { &trace.post[i - 1] };
            let dw = &delta * input.transpose();
            let db = delta.column_sum();
            per_layer.push((dw, db));
            let mut d_in = self.layers[i].w.tr_mul(&delta);
            if i > 0 {
                let (z, a) = (&trace.pre[i - 1], &trace.post[i - 1]);
                for ((d, &zv), &av) in d_in.iter_mut().zip(z.iter()).zip(a.iter()) {
                    *d *= self.activation.derivative(zv, av);
                }
            }
            delta = d_in;
        }
        per_layer.reverse();
        let mut grad = Vec::with_capacity(self.param_count());
        for (dw, db) in per_layer {
            grad.extend_from_slice(dw.as_slice());
            grad.extend_from_slice(db.as_slice());
        }
        (grad, delta)
    }

    /// Writes the weight file described in the module docs.
    pub fn write_to<W: Write>(&self, mut w: W, output_scale: Option<OutputScale>) -> Result<(), NnError> {
        let header = Header {
            layers: self.widths(),
            activation: self.activation,
            param_count: self.param_count(),
            output_scale,
        };
        let text = serde_json::to_string(&header).map_err(|e| NnError::Format(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&(text.len() as u32).to_le_bytes())?;
        w.write_all(text.as_bytes())?;
        for l in &self.layers {
            for r in 0..l.w.nrows() {
                for c in 0..l.w.ncols() {
                    w.write_all(&l.w[(r, c)].to_le_bytes())?;
                }
            }
            for v in l.b.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a weight file; returns the network and any scaling metadata.
    pub fn read_from<R: Read>(mut r: R) -> Result<(Self, Option<OutputScale>), NnError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Format("bad magic".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut text = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut text)?;
        let header: Header = serde_json::from_slice(&text).map_err(|e| NnError::Format(e.to_string()))?;
        if header.layers.len() < 2 || header.layers.iter().any(|&w| w == 0) {
            return Err(NnError::Format(format!("bad layer widths {:?}", header.layers)));
        }
        let mut read_f64 = || -> Result<f64, NnError> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let mut layers = Vec::new();
        let mut count = 0;
        for pair in header.layers.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let mut w = DMatrix::zeros(fan_out, fan_in);
            for row in 0..fan_out {
                for col in 0..fan_in {
                    w[(row, col)] = read_f64()?;
                }
            }
            let b = DVector::from_iterator(fan_out, (0..fan_out).map(|_| read_f64()).collect::<Result<Vec<_>, _>>()?);
            count += w.len() + b.len();
            layers.push(Dense { w, b });
        }
        if count != header.param_count {
            return Err(NnError::Format(format!("header declares {} parameters, layers hold {count}", header.param_count)));
        }
        Ok((Self::from_layers(layers, header.activation)?, header.output_scale))
    }
}

/// Adam on a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(size: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; size], v: vec![0.0; size], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        if self.lr == 0.0 {
            return;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}
