//! Dense feedforward networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat vector, layer by layer, each layer stored as
//! a row-major `out × in` weight matrix followed by its bias. Keeping them
//! flat makes the optimizer, soft target updates and serialization trivial.

mod adam;
mod io;
mod loss;

pub use adam::AdamState;
pub use io::{load_params, net_from_bytes, net_to_bytes, save_params, NET_FORMAT_VERSION};
pub use loss::{grad, log_softmax2, CustomLoss, Loss};

pub(crate) mod io_util {
    pub(crate) use super::io::{fnv1a, put_bytes, put_f64s, Cursor};
}

use crate::error::{Error, Result};
use crate::seed::SimRng;
use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Identity,
    Tanh,
    Softmax,
}

impl Head {
    pub(crate) fn code(self) -> u8 {
        match self {
            Head::Identity => 0,
            Head::Tanh => 1,
            Head::Softmax => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Head> {
        match c {
            0 => Some(Head::Identity),
            1 => Some(Head::Tanh),
            2 => Some(Head::Softmax),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    sizes: Vec<usize>,
    params: Vec<f64>,
    head: Head,
    dropout: f64,
}

/// Activations kept by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every layer (`inputs[0]` is the batch itself).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of every hidden layer.
    pre: Vec<Array2<f64>>,
    /// Inverted-dropout multipliers per hidden layer, if dropout was active.
    masks: Vec<Option<Array2<f64>>>,
    /// Raw output before the head.
    pub logits: Array2<f64>,
    /// Output after the head.
    pub output: Array2<f64>,
}

impl DenseNet {
    /// He-uniform weights (`U(±√(6/fan_in))`), zero biases.
    pub fn new(sizes: &[usize], head: Head, dropout: f64, rng: &mut SimRng) -> Result<Self> {
        let mut net = Self::zeros(sizes, head, dropout)?;
        let mut off = 0;
        for l in 0..net.num_layers() {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            for w in &mut net.params[off..off + fan_in * fan_out] {
                *w = rng.random_range(-bound..bound);
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], head: Head, dropout: f64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        if head == Head::Softmax && sizes[sizes.len() - 1] != 2 {
            return Err(Error::Shape("softmax head needs exactly 2 outputs".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Shape(format!("dropout {dropout} outside [0, 1)")));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
            head,
            dropout,
        })
    }

    /// Rebuilds a net from its parts, checking the parameter count.
    pub fn from_parts(sizes: &[usize], head: Head, dropout: f64, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes, head, dropout)?;
        if params.len() != net.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters for sizes {sizes:?}, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn set_dropout(&mut self, p: f64) {
        self.dropout = p;
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Multiplies the output layer's weights and bias by `s`. Used to start
    /// a policy near zero or a classifier at exactly uniform output.
    pub fn scale_output_layer(&mut self, s: f64) {
        let l = self.num_layers() - 1;
        let (off, len) = (self.layer_offset(l), self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1]);
        for p in &mut self.params[off..off + len] {
            *p *= s;
        }
    }

    fn layer_offset(&self, l: usize) -> usize {
        (0..l).map(|k| self.sizes[k] * self.sizes[k + 1] + self.sizes[k + 1]).sum()
    }

    fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let off = self.layer_offset(l);
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let w = ArrayView2::from_shape((o, i), &self.params[off..off + o * i]).expect("layer shape");
        let b = ArrayView1::from(&self.params[off + o * i..off + o * i + o]);
        (w, b)
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_size() {
            return Err(Error::Shape(format!("input has {cols} features, net expects {}", self.input_size())));
        }
        Ok(())
    }

    /// Single-sample forward. Dropout is active only when `train` is set.
    pub fn forward(&self, x: &[f64], train: bool, rng: &mut SimRng) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let xb = ArrayView2::from_shape((1, x.len()), x).expect("row");
        let out = if train && self.dropout > 0.0 {
            self.forward_cached(xb, Some(rng))?.output
        } else {
            self.forward_batch(xb)?
        };
        Ok(out.into_raw_vec_and_offset().0)
    }

    /// Evaluation-mode forward over a batch (one sample per row).
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut h = x.to_owned();
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            let mut z = h.dot(&w.t());
            z += &b;
            if l + 1 < self.num_layers() {
                z.mapv_inplace(relu);
            }
            h = z;
        }
        apply_head(self.head, &mut h);
        Ok(h)
    }

    /// Allocation-light evaluation forward for one sample, without ndarray.
    /// Matches [`forward_batch`](Self::forward_batch) up to summation order.
    pub fn forward_one(&self, x: &[f64], scratch: &mut (Vec<f64>, Vec<f64>)) -> Vec<f64> {
        let (a, b) = scratch;
        a.clear();
        a.extend_from_slice(x);
        let mut off = 0;
        for l in 0..self.num_layers() {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + o * i];
            let bias = &self.params[off + o * i..off + o * i + o];
            b.clear();
            for r in 0..o {
                let row = &w[r * i..(r + 1) * i];
                let mut s = bias[r];
                for (wv, av) in row.iter().zip(a.iter()) {
                    s += wv * av;
                }
                b.push(if l + 1 < self.num_layers() { relu(s) } else { s });
            }
            std::mem::swap(a, b);
            off += o * i + o;
        }
        let mut out = Array2::from_shape_vec((1, a.len()), a.clone()).expect("row");
        apply_head(self.head, &mut out);
        out.into_raw_vec_and_offset().0
    }

    /// Training forward that records what [`backward`](Self::backward)
    /// needs. Dropout masks are drawn only when `rng` is given.
    pub fn forward_cached(&self, x: ArrayView2<'_, f64>, mut rng: Option<&mut SimRng>) -> Result<ForwardCache> {
        self.check_input(x.ncols())?;
        let nl = self.num_layers();
        let mut inputs = Vec::with_capacity(nl);
        let mut pre = Vec::with_capacity(nl - 1);
        let mut masks = Vec::with_capacity(nl - 1);
        let mut h = x.to_owned();
        for l in 0..nl {
            let (w, b) = self.layer(l);
            let mut z = h.dot(&w.t());
            z += &b;
            inputs.push(h);
            if l + 1 < nl {
                let mut a = z.mapv(relu);
                let mask = match rng.as_deref_mut() {
                    Some(r) if self.dropout > 0.0 => {
                        let m = dropout_mask(a.dim(), self.dropout, r);
                        a *= &m;
                        Some(m)
                    }
                    _ => None,
                };
                pre.push(z);
                masks.push(mask);
                h = a;
            } else {
                h = z;
            }
        }
        let logits = h;
        let mut output = logits.clone();
        apply_head(self.head, &mut output);
        Ok(ForwardCache {
            inputs,
            pre,
            masks,
            logits,
            output,
        })
    }

    /// Back-propagates `grad_logits` (gradient of the loss with respect to
    /// the pre-head output), accumulating parameter gradients into `grads`
    /// and returning the gradient with respect to the input batch.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: ArrayView2<'_, f64>, grads: &mut [f64]) -> Array2<f64> {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size");
        self.backprop(cache, grad_logits, Some(grads))
    }

    /// Gradient with respect to the input only.
    pub fn input_grad(&self, cache: &ForwardCache, grad_logits: ArrayView2<'_, f64>) -> Array2<f64> {
        self.backprop(cache, grad_logits, None)
    }

    fn backprop(&self, cache: &ForwardCache, grad_logits: ArrayView2<'_, f64>, mut grads: Option<&mut [f64]>) -> Array2<f64> {
        let nl = self.num_layers();
        let mut dz = grad_logits.to_owned();
        for l in (0..nl).rev() {
            let off = self.layer_offset(l);
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            if let Some(grads) = grads.as_deref_mut() {
                let (gw, gb) = grads[off..off + o * i + o].split_at_mut(o * i);
                let mut gw = ArrayViewMut2::from_shape((o, i), gw).expect("layer shape");
                general_mat_mul(1.0, &dz.t(), &cache.inputs[l], 1.0, &mut gw);
                for (g, s) in gb.iter_mut().zip(dz.sum_axis(Axis(0)).iter()) {
                    *g += s;
                }
            }
            let (w, _) = self.layer(l);
            let mut dx = dz.dot(&w);
            if l > 0 {
                if let Some(m) = &cache.masks[l - 1] {
                    dx *= m;
                }
                ndarray::Zip::from(&mut dx).and(&cache.pre[l - 1]).for_each(|d, &p| {
                    if p <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            dz = dx;
        }
        dz
    }

    /// Chains a gradient with respect to the head output back to the
    /// logits for the element-wise heads.
    pub fn head_backward(&self, cache: &ForwardCache, grad_output: ArrayView2<'_, f64>) -> Array2<f64> {
        match self.head {
            Head::Identity => grad_output.to_owned(),
            Head::Tanh => {
                let mut g = grad_output.to_owned();
                ndarray::Zip::from(&mut g).and(&cache.output).for_each(|g, &y| *g *= 1.0 - y * y);
                g
            }
            Head::Softmax => {
                // J = diag(p) - p pᵀ, row by row.
                let p = &cache.output;
                let mut g = grad_output.to_owned();
                for (mut gr, pr) in g.axis_iter_mut(Axis(0)).zip(p.axis_iter(Axis(0))) {
                    let dot: f64 = gr.iter().zip(pr.iter()).map(|(a, b)| a * b).sum();
                    for (gv, &pv) in gr.iter_mut().zip(pr.iter()) {
                        *gv = pv * (*gv - dot);
                    }
                }
                g
            }
        }
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn apply_head(head: Head, h: &mut Array2<f64>) {
    match head {
        Head::Identity => {}
        Head::Tanh => h.mapv_inplace(f64::tanh),
        Head::Softmax => {
            for mut row in h.axis_iter_mut(Axis(0)) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|v| (v - m).exp());
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
        }
    }
}

/// Inverted-dropout multipliers: `1/(1-p)` with probability `1-p`, else 0.
pub fn dropout_mask(dim: (usize, usize), p: f64, rng: &mut SimRng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_fn(dim, |_| if rng.random::<f64>() < p { 0.0 } else { keep })
}

/// Stacks equally sized rows into a batch matrix.
pub fn batch_from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Array2<f64> {
    let cols = rows.first().map_or(0, |r| r.as_ref().len());
    let mut out = Array2::zeros((rows.len(), cols));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
        dst.assign(&Array1::from(src.as_ref().to_vec()));
    }
    out
}
