//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! Parameters live in one flat `Vec<f64>` so optimizers, soft target updates
//! and finite-difference checks can treat a network as a plain vector. Layer
//! `i` stores its weight matrix row-major with shape `(out, in)` followed by
//! its bias. Hidden layers use a rectifier, the output layer is linear.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    widths: Vec<usize>,
    data: Vec<f64>,
}

/// Gradient of a scalar loss with respect to every entry of an [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    widths: Vec<usize>,
    data: Vec<f64>,
}

/// Activations recorded by [`MlpParams::forward_tape`] for a later backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `acts[0]` is the input batch, `acts[i]` the rectified output of hidden layer `i - 1`.
    acts: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpParams {
    /// All-zero network with the given layer widths (input first, output last).
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::config("an MLP needs at least an input and an output width"));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::config(format!("layer widths must be positive, got {widths:?}")));
        }
        Ok(Self {
            widths: widths.to_vec(),
            data: vec![0.0; param_count(widths)],
        })
    }

    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn init_uniform<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(widths)?;
        let mut offset = 0;
        for w in widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let n = w[0] * w[1] + w[1];
            for p in &mut params.data[offset..offset + n] {
                *p = dist.sample(rng);
            }
            offset += n;
        }
        Ok(params)
    }

    /// Build from explicit per-layer `(weights (out, in) row-major, bias)` pairs.
    pub fn from_layers(widths: &[usize], layers: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let mut params = Self::zeros(widths)?;
        if layers.len() != widths.len() - 1 {
            return Err(Error::config("layer count does not match widths"));
        }
        for (i, (w, b)) in layers.iter().enumerate() {
            if w.len() != widths[i] * widths[i + 1] || b.len() != widths[i + 1] {
                return Err(Error::config(format!("layer {i} has inconsistent shape")));
            }
            params.weight_slice_mut(i).copy_from_slice(w);
            params.bias_mut(i).copy_from_slice(b);
        }
        Ok(params)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated at construction")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|p| p.is_finite())
    }

    fn layer_offset(&self, layer: usize) -> usize {
        param_count(&self.widths[..=layer])
    }

    fn weight_range(&self, layer: usize) -> std::ops::Range<usize> {
        let start = self.layer_offset(layer);
        start..start + self.widths[layer] * self.widths[layer + 1]
    }

    fn bias_range(&self, layer: usize) -> std::ops::Range<usize> {
        let start = self.weight_range(layer).end;
        start..start + self.widths[layer + 1]
    }

    /// Weight matrix of `layer` with shape `(out, in)`.
    pub fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let shape = (self.widths[layer + 1], self.widths[layer]);
        ArrayView2::from_shape(shape, &self.data[self.weight_range(layer)]).expect("shape is consistent")
    }

    pub fn weight_slice_mut(&mut self, layer: usize) -> &mut [f64] {
        let r = self.weight_range(layer);
        &mut self.data[r]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.data[self.bias_range(layer)]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let r = self.bias_range(layer);
        &mut self.data[r]
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_width() {
            return Err(Error::config(format!(
                "input width {width} does not match network input width {}",
                self.input_width()
            )));
        }
        Ok(())
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let mut x = input.to_vec();
        let last = self.num_layers() - 1;
        for layer in 0..self.num_layers() {
            let w = self.weight(layer);
            let b = self.bias(layer);
            let mut z: Vec<f64> = w
                .outer_iter()
                .zip(b)
                .map(|(row, bias)| bias + row.iter().zip(&x).map(|(a, c)| a * c).sum::<f64>())
                .collect();
            if layer != last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            x = z;
        }
        Ok(x)
    }

    /// Batched forward pass; rows of `inputs` are samples.
    pub fn forward_batch(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(inputs.ncols())?;
        let last = self.num_layers() - 1;
        let mut x = self.affine(inputs.view(), 0);
        for layer in 1..self.num_layers() {
            x.mapv_inplace(|v| v.max(0.0));
            x = self.affine(x.view(), layer);
        }
        debug_assert_eq!(x.ncols(), self.widths[last + 1]);
        Ok(x)
    }

    /// Batched forward pass that records what [`MlpParams::backward`] needs.
    pub fn forward_tape(&self, inputs: &Array2<f64>) -> Result<Tape> {
        self.check_input(inputs.ncols())?;
        let mut acts = Vec::with_capacity(self.num_layers());
        acts.push(inputs.clone());
        let mut z = self.affine(inputs.view(), 0);
        for layer in 1..self.num_layers() {
            z.mapv_inplace(|v| v.max(0.0));
            let next = self.affine(z.view(), layer);
            acts.push(z);
            z = next;
        }
        Ok(Tape { acts, output: z })
    }

    fn affine(&self, x: ArrayView2<'_, f64>, layer: usize) -> Array2<f64> {
        let w = self.weight(layer);
        let b = ArrayView2::from_shape((1, self.widths[layer + 1]), self.bias(layer)).expect("bias shape");
        let mut z = Array2::from_shape_fn((x.nrows(), w.nrows()), |(_, o)| b[[0, o]]);
        general_mat_mul(1.0, &x, &w.t(), 1.0, &mut z);
        z
    }

    /// Backpropagate `d_output` (gradient of the loss with respect to the network
    /// outputs, one row per sample) through a recorded tape.
    ///
    /// Returns parameter gradients and the gradient with respect to the inputs.
    pub fn backward(&self, tape: &Tape, d_output: &Array2<f64>) -> Result<(Grads, Array2<f64>)> {
        if d_output.dim() != tape.output.dim() {
            return Err(Error::config(format!(
                "output gradient shape {:?} does not match tape output {:?}",
                d_output.dim(),
                tape.output.dim()
            )));
        }
        let mut grads = Grads::zeros_like(self);
        let mut dz = d_output.clone();
        for layer in (0..self.num_layers()).rev() {
            let a = &tape.acts[layer];
            let (out_w, in_w) = (self.widths[layer + 1], self.widths[layer]);
            {
                let range = self.weight_range(layer);
                let mut dw = ArrayViewMut2::from_shape((out_w, in_w), &mut grads.data[range]).expect("shape");
                general_mat_mul(1.0, &dz.t(), a, 0.0, &mut dw);
            }
            let db = dz.sum_axis(Axis(0));
            let range = self.bias_range(layer);
            grads.data[range].copy_from_slice(db.as_slice().expect("contiguous"));

            let w = self.weight(layer);
            let mut da = dz.dot(&w);
            if layer > 0 {
                // Rectifier mask from the stored activation.
                da.zip_mut_with(a, |g, &act| {
                    if act <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            dz = da;
        }
        Ok((grads, dz))
    }
}

impl Grads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            widths: params.widths.clone(),
            data: vec![0.0; params.data.len()],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|g| g.is_finite())
    }

    /// `self += other`, used to accumulate gradients of summed losses.
    pub fn accumulate(&mut self, other: &Grads) -> Result<()> {
        if self.widths != other.widths {
            return Err(Error::config("gradient shapes differ"));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|g| *g *= c);
    }
}

/// Single-sample forward pass.
pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<Vec<f64>> {
    params.forward(input)
}

/// Evaluate a scalar loss on a batch and return it with its exact parameter gradient.
///
/// `loss` receives the network outputs (one row per sample) and returns the
/// loss value together with its gradient with respect to those outputs.
pub fn loss_backward<F>(params: &MlpParams, inputs: &Array2<f64>, loss: F) -> Result<(f64, Grads)>
where
    F: FnOnce(&Array2<f64>) -> (f64, Array2<f64>),
{
    let tape = params.forward_tape(inputs)?;
    let (value, d_out) = loss(tape.output());
    if !value.is_finite() {
        return Err(Error::numerical(format!(
            "loss is not finite ({value}) on a batch of {} samples",
            tape.batch_size()
        )));
    }
    let (grads, _) = params.backward(&tape, &d_out)?;
    if !grads.is_finite() {
        return Err(Error::numerical("non-finite gradient"));
    }
    Ok((value, grads))
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`], the logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for positive `y`.
pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_params(params: &MlpParams) -> Self {
        Self::new(params.len())
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Bias-corrected Adam update of a flat parameter slice.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::config(format!(
                "adam state has {} entries, params {}, grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::numerical(format!("non-finite gradient at parameter {i}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// One Adam step on a network.
pub fn adam_step(params: &mut MlpParams, grads: &Grads, state: &mut AdamState, lr: f64) -> Result<()> {
    if params.widths != grads.widths {
        return Err(Error::config("gradient shape does not match parameters"));
    }
    state.update(&mut params.data, &grads.data, lr)
}

/// Stack rows into a batch matrix.
pub fn stack_rows<'a, I>(rows: I, width: usize) -> Array2<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut flat = Vec::new();
    let mut n = 0;
    for r in rows {
        debug_assert_eq!(r.len(), width);
        flat.extend_from_slice(r);
        n += 1;
    }
    Array2::from_shape_vec((n, width), flat).expect("row widths are consistent")
}
