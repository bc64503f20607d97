use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probability floor used inside the cross-entropy.
pub const LOG_FLOOR: f64 = 1e-12;

/// Class-probability vector produced by a network's softmax head.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorVector<T>(Vec<T>);

impl<T: Scalar> PosteriorVector<T> {
    /// Validates that `probs` is a point of the probability simplex.
    ///
    /// The sum may differ from 1 by `1e-6`, or by the scalar's accumulated rounding if larger.
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::input("posterior must be non-empty"));
        }
        let mut sum = 0.0;
        for (i, p) in probs.iter().enumerate() {
            let p = p.widen();
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::input(format!("posterior entry {i} = {p} outside [0, 1]")));
            }
            sum += p;
        }
        let tol = (4.0 * T::epsilon().widen() * probs.len() as f64).max(1e-6);
        if (sum - 1.0).abs() > tol {
            return Err(Error::input(format!("posterior sums to {sum}")));
        }
        Ok(Self(probs))
    }

    pub(crate) fn new_unchecked(probs: Vec<T>) -> Self {
        Self(probs)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

pub(crate) fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Dense feed-forward classifier: ReLU hidden layers, softmax output.
///
/// Layer `l` maps `dims[l]` inputs to `dims[l + 1]` outputs; its weight matrix is
/// stored as `dims[l + 1] x dims[l]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    dims: Vec<usize>,
    weights: Vec<Array2<T>>,
    biases: Vec<Array1<T>>,
}

/// Parameter-shaped container for gradients or updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::config("a network needs at least input and output dimensions"));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::config(format!("layer dimensions must be positive: {dims:?}")));
    }
    Ok(())
}

impl<T: Scalar> Network<T> {
    /// Weights and biases drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        check_dims(dims)?;
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut draw = || T::of(rng.random_range(-bound..=bound));
            let weight = Array2::from_shape_simple_fn((fan_out, fan_in), &mut draw);
            let bias = Array1::from_shape_simple_fn(fan_out, &mut draw);
            weights.push(weight);
            biases.push(bias);
        }
        Ok(Self {
            dims: dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let weights = dims.windows(2).map(|w| Array2::zeros((w[1], w[0]))).collect();
        let biases = dims.windows(2).map(|w| Array1::zeros(w[1])).collect();
        Ok(Self {
            dims: dims.to_vec(),
            weights,
            biases,
        })
    }

    /// Assemble a network from explicit parameters, validating that shapes chain.
    pub fn from_parts(weights: Vec<Array2<T>>, biases: Vec<Array1<T>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::input("weights and biases must be non-empty and paired"));
        }
        let mut dims = vec![weights[0].ncols()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != *dims.last().unwrap() {
                return Err(Error::input(format!("layer {l} expects {} inputs, previous layer emits {}", w.ncols(), dims.last().unwrap())));
            }
            if b.len() != w.nrows() {
                return Err(Error::input(format!("layer {l} bias has length {}, expected {}", b.len(), w.nrows())));
            }
            dims.push(w.nrows());
        }
        check_dims(&dims)?;
        let net = Self { dims, weights, biases };
        if !net.is_finite() {
            return Err(Error::input("network parameters must be finite"));
        }
        Ok(net)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<T>] {
        &self.biases
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameters in checkpoint order: per layer, the row-major weights then the bias.
    pub fn flat_parameters(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    /// Inverse of [`Network::flat_parameters`].
    pub fn from_flat(dims: &[usize], params: &[T]) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        if params.len() != net.parameter_count() {
            return Err(Error::input(format!(
                "expected {} parameters for dims {dims:?}, got {}",
                net.parameter_count(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for (w, b) in net.weights.iter_mut().zip(net.biases.iter_mut()) {
            w.iter_mut().for_each(|v| *v = it.next().unwrap());
            b.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        if !net.is_finite() {
            return Err(Error::input("network parameters must be finite"));
        }
        Ok(net)
    }

    pub(crate) fn param_mut(&mut self, mut index: usize) -> &mut T {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            if index < w.len() {
                return &mut w.as_slice_mut().unwrap()[index];
            }
            index -= w.len();
            if index < b.len() {
                return &mut b[index];
            }
            index -= b.len();
        }
        panic!("parameter index out of range");
    }

    /// Set a single parameter by flat index (checkpoint order). Used by gradient checks.
    pub fn set_parameter(&mut self, index: usize, value: T) {
        *self.param_mut(index) = value;
    }

    fn check_input_width(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(Error::input(format!("input has {width} features, network expects {}", self.input_dim())));
        }
        Ok(())
    }

    /// Pre-softmax outputs for a batch of row vectors.
    pub fn logits_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input_width(x.ncols())?;
        let mut act = affine(x, &self.weights[0], &self.biases[0]);
        for l in 1..self.layer_count() {
            relu_inplace(&mut act);
            act = affine(act.view(), &self.weights[l], &self.biases[l]);
        }
        Ok(act)
    }

    /// Softmax posteriors, one row per input row.
    pub fn predict_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        let mut logits = self.logits_batch(x)?;
        softmax_rows(&mut logits);
        Ok(logits)
    }

    pub fn forward(&self, x: ArrayView1<T>) -> Result<PosteriorVector<T>> {
        let probs = self.predict_batch(x.insert_axis(Axis(0)))?;
        Ok(PosteriorVector::new_unchecked(probs.row(0).to_vec()))
    }

    /// Predicted class per row (argmax of the posterior, lowest index on ties).
    pub fn predict_labels(&self, x: ArrayView2<T>) -> Result<Vec<usize>> {
        let logits = self.logits_batch(x)?;
        Ok(logits.rows().into_iter().map(|r| argmax(r.as_slice().unwrap())).collect())
    }

    /// Fraction of rows whose predicted class equals the label.
    pub fn accuracy(&self, x: ArrayView2<T>, labels: &[usize]) -> Result<f64> {
        if labels.len() != x.nrows() {
            return Err(Error::input("label count does not match row count"));
        }
        if labels.is_empty() {
            return Err(Error::input("accuracy over an empty set"));
        }
        let pred = self.predict_labels(x)?;
        let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / labels.len() as f64)
    }

    /// Per-row cross-entropy loss (probabilities floored at 1e-12).
    pub fn losses(&self, x: ArrayView2<T>, labels: &[usize]) -> Result<Vec<T>> {
        let probs = self.predict_batch(x)?;
        self.check_labels(labels, probs.nrows())?;
        Ok(labels.iter().enumerate().map(|(i, &y)| neg_log(probs[[i, y]])).collect())
    }

    /// Activations of the penultimate layer (post-ReLU).
    pub fn embed(&self, x: ArrayView1<T>) -> Result<Array1<T>> {
        let e = self.embed_batch(x.insert_axis(Axis(0)))?;
        Ok(e.row(0).to_owned())
    }

    pub fn embed_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        if self.layer_count() < 2 {
            return Err(Error::Unsupported("embedding requires at least one hidden layer".into()));
        }
        self.check_input_width(x.ncols())?;
        let mut act = affine(x, &self.weights[0], &self.biases[0]);
        relu_inplace(&mut act);
        for l in 1..self.layer_count() - 1 {
            act = affine(act.view(), &self.weights[l], &self.biases[l]);
            relu_inplace(&mut act);
        }
        Ok(act)
    }

    fn check_labels(&self, labels: &[usize], rows: usize) -> Result<()> {
        if labels.len() != rows {
            return Err(Error::input(format!("{} labels for {rows} rows", labels.len())));
        }
        let k = self.output_dim();
        if let Some(bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::input(format!("label {bad} out of range for {k} classes")));
        }
        Ok(())
    }

    /// Forward and backward pass keeping per-sample deltas.
    ///
    /// `offsets`, when given, is added to the logits before the softmax (one row per sample).
    fn backprop(&self, x: ArrayView2<T>, labels: &[usize], offsets: Option<ArrayView2<T>>) -> Result<Backprop<T>> {
        if x.nrows() == 0 {
            return Err(Error::input("empty batch"));
        }
        self.check_input_width(x.ncols())?;
        self.check_labels(labels, x.nrows())?;
        let layers = self.layer_count();
        // hidden[l] is the post-ReLU output of layer l, for l < layers - 1
        let mut hidden: Vec<Array2<T>> = Vec::with_capacity(layers - 1);
        let mut z = affine(x, &self.weights[0], &self.biases[0]);
        for l in 1..layers {
            relu_inplace(&mut z);
            let next = affine(z.view(), &self.weights[l], &self.biases[l]);
            hidden.push(std::mem::replace(&mut z, next));
        }
        if let Some(off) = offsets {
            if off.dim() != z.dim() {
                return Err(Error::input("logit offsets must match the output shape"));
            }
            z += &off;
        }
        softmax_rows(&mut z);
        let mut loss = 0.0;
        let mut correct = 0;
        for (i, &y) in labels.iter().enumerate() {
            let row = z.row(i);
            loss += neg_log(row[y]).widen();
            if argmax(row.as_slice().unwrap()) == y {
                correct += 1;
            }
        }
        // delta at the output: softmax - onehot
        for (i, &y) in labels.iter().enumerate() {
            z[[i, y]] -= T::one();
        }
        let mut deltas: Vec<Array2<T>> = vec![Array2::zeros((0, 0)); layers];
        deltas[layers - 1] = z;
        for l in (1..layers).rev() {
            let mut prev = deltas[l].dot(&self.weights[l]);
            Zip::from(&mut prev).and(&hidden[l - 1]).for_each(|d, &a| {
                if a <= T::zero() {
                    *d = T::zero();
                }
            });
            deltas[l - 1] = prev;
        }
        Ok(Backprop {
            loss: loss / labels.len() as f64,
            correct,
            hidden,
            deltas,
        })
    }

    /// Parameter gradients from per-sample deltas, with per-sample weights `row_weight`.
    fn gradients_from(&self, x: ArrayView2<T>, bp: &Backprop<T>, row_weight: &Array1<T>) -> Gradients<T> {
        let layers = self.layer_count();
        let col = row_weight.view().insert_axis(Axis(1));
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for l in 0..layers {
            let scaled = &bp.deltas[l] * &col;
            let input = if l == 0 { x.view() } else { bp.hidden[l - 1].view() };
            weights.push(scaled.t().dot(&input));
            biases.push(scaled.sum_axis(Axis(0)));
        }
        Gradients { weights, biases }
    }

    /// Mean cross-entropy over the batch and its exact gradient.
    pub fn loss_and_grad(&self, x: ArrayView2<T>, labels: &[usize]) -> Result<(T, Gradients<T>)> {
        let (stats, grads) = self.loss_and_grad_offset(x, labels, None)?;
        Ok((T::of(stats.loss), grads))
    }

    pub(crate) fn loss_and_grad_offset(
        &self,
        x: ArrayView2<T>,
        labels: &[usize],
        offsets: Option<ArrayView2<T>>,
    ) -> Result<(BatchStats, Gradients<T>)> {
        let bp = self.backprop(x, labels, offsets)?;
        let w = Array1::from_elem(x.nrows(), T::one() / T::of(x.nrows() as f64));
        let grads = self.gradients_from(x, &bp, &w);
        Ok((bp.stats(x.nrows()), grads))
    }

    /// Clipped and noised mean gradient (DP-SGD), plus batch statistics.
    pub(crate) fn dp_gradient<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<T>,
        labels: &[usize],
        clip: f64,
        noise: f64,
        rng: &mut R,
    ) -> Result<(BatchStats, Gradients<T>)> {
        if !(clip > 0.0) || !clip.is_finite() {
            return Err(Error::config(format!("DP clip bound must be positive, got {clip}")));
        }
        if !(noise >= 0.0) || !noise.is_finite() {
            return Err(Error::config(format!("DP noise multiplier must be non-negative, got {noise}")));
        }
        let bp = self.backprop(x, labels, None)?;
        let b = x.nrows();
        // ||delta_i a_i^T||^2 = ||delta_i||^2 ||a_i||^2, plus ||delta_i||^2 for the bias
        let mut sq = vec![0.0f64; b];
        for l in 0..self.layer_count() {
            let input = if l == 0 { x.view() } else { bp.hidden[l - 1].view() };
            for i in 0..b {
                let d2: f64 = bp.deltas[l].row(i).iter().map(|v| v.widen() * v.widen()).sum();
                let a2: f64 = input.row(i).iter().map(|v| v.widen() * v.widen()).sum();
                sq[i] += d2 * (a2 + 1.0);
            }
        }
        let factors: Vec<f64> = sq
            .iter()
            .map(|&s| {
                let norm = s.sqrt();
                if norm > clip {
                    clip / norm
                } else {
                    1.0
                }
            })
            .collect();
        for (f, s) in factors.iter().zip(&sq) {
            assert!(f * s.sqrt() <= clip * (1.0 + 1e-9), "clipped per-sample gradient exceeds the bound");
        }
        let w = Array1::from_iter(factors.iter().map(|f| T::of(f / b as f64)));
        let mut grads = self.gradients_from(x, &bp, &w);
        if noise > 0.0 {
            let std = noise * clip / b as f64;
            let normal = Normal::new(0.0, std).map_err(|e| Error::config(e.to_string()))?;
            for (gw, gb) in grads.weights.iter_mut().zip(grads.biases.iter_mut()) {
                gw.iter_mut().for_each(|v| *v += T::of(normal.sample(rng)));
                gb.iter_mut().for_each(|v| *v += T::of(normal.sample(rng)));
            }
        }
        Ok((bp.stats(b), grads))
    }

    /// One DP-SGD update: per-sample clipping to L2 norm `clip`, averaging,
    /// Gaussian noise with std `noise * clip / batch_size`, then a plain SGD step.
    pub fn dp_sgd_step<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<T>,
        labels: &[usize],
        lr: f64,
        clip: f64,
        noise: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let (_, grads) = self.dp_gradient(x, labels, clip, noise, rng)?;
        self.sgd_step(&grads, lr)
    }

    /// `p <- p - lr * g` for every parameter; returns the updated copy.
    pub fn sgd_step(&self, grads: &Gradients<T>, lr: f64) -> Result<Self> {
        let mut next = self.clone();
        next.apply(grads, lr)?;
        Ok(next)
    }

    pub(crate) fn apply(&mut self, grads: &Gradients<T>, lr: f64) -> Result<()> {
        grads.check_shape(self)?;
        let step = T::of(-lr);
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            w.scaled_add(step, g);
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            b.scaled_add(step, g);
        }
        Ok(())
    }
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Self {
            weights: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    fn check_shape(&self, net: &Network<T>) -> Result<()> {
        let ok = self.weights.len() == net.weights.len()
            && self.biases.len() == net.biases.len()
            && self.weights.iter().zip(&net.weights).all(|(g, w)| g.dim() == w.dim())
            && self.biases.iter().zip(&net.biases).all(|(g, b)| g.len() == b.len());
        if ok {
            Ok(())
        } else {
            Err(Error::input("gradient shapes do not match the network"))
        }
    }

    /// Gradient entries in checkpoint order.
    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn l2_norm(&self) -> f64 {
        self.flat().iter().map(|v| v.widen() * v.widen()).sum::<f64>().sqrt()
    }

    /// Element-wise sum of two gradient sets with identical shapes.
    pub fn add(&self, other: &Self) -> Self {
        Self {
            weights: self.weights.iter().zip(&other.weights).map(|(a, b)| a + b).collect(),
            biases: self.biases.iter().zip(&other.biases).map(|(a, b)| a + b).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct BatchStats {
    pub loss: f64,
    pub correct: usize,
    pub size: usize,
}

struct Backprop<T> {
    loss: f64,
    correct: usize,
    hidden: Vec<Array2<T>>,
    deltas: Vec<Array2<T>>,
}

impl<T> Backprop<T> {
    fn stats(&self, size: usize) -> BatchStats {
        BatchStats {
            loss: self.loss,
            correct: self.correct,
            size,
        }
    }
}

fn affine<T: Scalar>(x: ArrayView2<T>, w: &Array2<T>, b: &Array1<T>) -> Array2<T> {
    let mut out = x.dot(&w.t());
    if !out.is_standard_layout() {
        out = out.as_standard_layout().into_owned();
    }
    out += b;
    out
}

fn relu_inplace<T: Scalar>(a: &mut Array2<T>) {
    a.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

pub(crate) fn softmax_rows<T: Scalar>(a: &mut Array2<T>) {
    for mut row in a.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: T = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

pub(crate) fn neg_log<T: Scalar>(p: T) -> T {
    -p.max(T::of(LOG_FLOOR)).ln()
}

/// Gather rows of `x` by index.
pub(crate) fn gather_rows<T: Scalar>(x: ArrayView2<T>, idx: &[usize]) -> Array2<T> {
    let mut out = Array2::zeros((idx.len(), x.ncols()));
    for (mut dst, &i) in out.rows_mut().into_iter().zip(idx) {
        dst.assign(&x.slice(s![i, ..]));
    }
    out
}
