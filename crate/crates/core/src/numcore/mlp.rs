//! Feed-forward network with tanh hidden layers and exact backpropagation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::matrix::Matrix;
use super::rng::RngStream;
use super::scalar::{axpy, dot, sigmoid, Scalar};

/// Output nonlinearity of the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Linear,
    Sigmoid,
}

/// One affine layer. `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(outputs, inputs),
            bias: vec![T::zero(); outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }
}

/// Multi-layer perceptron parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<Dense<T>>,
    head: Head,
}

/// Gradients with the same layer shapes as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(mlp: &Mlp<T>) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<T> {
        flatten(&self.layers)
    }

    /// Index of the first layer holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.layers.iter().position(|l| !l.is_finite())
    }
}

/// Activations recorded by a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Input fed to each layer (after dropout for hidden activations).
    inputs: Vec<Matrix<T>>,
    /// tanh outputs of each hidden layer before dropout.
    hidden: Vec<Matrix<T>>,
    /// Inverted-dropout multipliers, present only in train mode with rate > 0.
    masks: Vec<Option<Matrix<T>>>,
    output: Matrix<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> &Matrix<T> {
        &self.output
    }

    pub fn batch(&self) -> usize {
        self.output.rows()
    }
}

impl<T: Scalar> Mlp<T> {
    /// Xavier-uniform initialization for a network with the given layer widths
    /// (`sizes[0]` is the input width).
    pub fn new(sizes: &[usize], head: Head, rng: &mut RngStream) -> Result<Self> {
        check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| T::of(limit * (2.0 * rng.next_f64() - 1.0)))
                    .collect();
                Dense {
                    weight: Matrix::from_vec(fan_out, fan_in, data).expect("sized"),
                    bias: vec![T::zero(); fan_out],
                }
            })
            .collect();
        Ok(Self { layers, head })
    }

    pub fn zeros(sizes: &[usize], head: Head) -> Result<Self> {
        check_sizes(sizes)?;
        Ok(Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            head,
        })
    }

    pub fn from_layers(layers: Vec<Dense<T>>, head: Head) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Contract("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(Error::Contract(format!(
                    "layer {i}: bias length {} but {} outputs",
                    l.bias.len(),
                    l.outputs()
                )));
            }
            if i > 0 && layers[i - 1].outputs() != l.inputs() {
                return Err(Error::Contract(format!(
                    "layer {i}: expects {} inputs but previous layer emits {}",
                    l.inputs(),
                    layers[i - 1].outputs()
                )));
            }
        }
        Ok(Self { layers, head })
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// Layer widths including the input width.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.outputs()))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.inputs() * l.outputs() + l.outputs())
            .sum()
    }

    /// All parameters, layer by layer, weights (row-major) then bias.
    pub fn flat(&self) -> Vec<T> {
        flatten(&self.layers)
    }

    pub fn set_flat(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for w in l.weight.as_mut_slice() {
                *w = it.next().expect("counted");
            }
            for b in &mut l.bias {
                *b = it.next().expect("counted");
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    /// Single-sample forward pass.
    pub fn forward(
        &self,
        input: &[T],
        dropout_rate: T,
        rng: &mut RngStream,
        train_mode: bool,
    ) -> Result<(Vec<T>, ForwardCache<T>)> {
        let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
        let cache = self.forward_batch(&x, dropout_rate, rng, train_mode)?;
        Ok((cache.output.row(0).to_vec(), cache))
    }

    /// Deterministic evaluation of one input (no dropout).
    pub fn predict(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_input(input.len())?;
        let mut act = input.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z: Vec<T> = (0..layer.outputs())
                .map(|o| dot(layer.weight.row(o), &act) + layer.bias[o])
                .collect();
            if li < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            } else {
                self.apply_head(&mut z);
            }
            act = z;
        }
        Ok(act)
    }

    /// Batched forward pass; rows of `input` are samples.
    pub fn forward_batch(
        &self,
        input: &Matrix<T>,
        dropout_rate: T,
        rng: &mut RngStream,
        train_mode: bool,
    ) -> Result<ForwardCache<T>> {
        self.check_input(input.cols())?;
        if !(dropout_rate >= T::zero() && dropout_rate < T::one()) {
            return Err(Error::Contract(format!(
                "dropout rate {dropout_rate:?} outside [0, 1)"
            )));
        }
        let use_dropout = train_mode && dropout_rate > T::zero();
        let keep_scale = T::one() / (T::one() - dropout_rate);
        let batch = input.rows();
        let last = self.layers.len() - 1;

        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut hidden = Vec::with_capacity(last);
        let mut masks = Vec::with_capacity(last);
        let mut act = input.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = Matrix::zeros(batch, layer.outputs());
            for b in 0..batch {
                let x = act.row(b);
                let zr = z.row_mut(b);
                for (o, zo) in zr.iter_mut().enumerate() {
                    *zo = dot(layer.weight.row(o), x) + layer.bias[o];
                }
            }
            inputs.push(act);
            if li < last {
                z.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
                if use_dropout {
                    let mut mask = Matrix::zeros(batch, layer.outputs());
                    let mut dropped = z.clone();
                    for (m, d) in mask.as_mut_slice().iter_mut().zip(dropped.as_mut_slice()) {
                        *m = if T::of(rng.next_f64()) < dropout_rate {
                            T::zero()
                        } else {
                            keep_scale
                        };
                        *d = *d * *m;
                    }
                    hidden.push(z);
                    masks.push(Some(mask));
                    act = dropped;
                } else {
                    hidden.push(z.clone());
                    masks.push(None);
                    act = z;
                }
            } else {
                self.apply_head(z.as_mut_slice());
                act = z;
            }
        }
        Ok(ForwardCache {
            inputs,
            hidden,
            masks,
            output: act,
        })
    }

    /// Gradients of a scalar loss given `d loss / d output` for one sample.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_output: &[T]) -> Result<Gradients<T>> {
        let g = Matrix::from_vec(1, grad_output.len(), grad_output.to_vec())?;
        self.backward_batch(cache, &g)
    }

    /// Batched backward pass; gradients are summed over the batch rows.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache<T>,
        grad_output: &Matrix<T>,
    ) -> Result<Gradients<T>> {
        self.check_grad_shape(cache, grad_output)?;
        let mut delta = grad_output.clone();
        if self.head == Head::Sigmoid {
            for (d, &q) in delta
                .as_mut_slice()
                .iter_mut()
                .zip(cache.output.as_slice())
            {
                *d = *d * q * (T::one() - q);
            }
        }
        Ok(self.backprop(cache, delta))
    }

    /// Backward pass starting from the gradient with respect to the last
    /// layer's pre-activation (the logit for a sigmoid head). Used by losses
    /// whose gradient is simplest in logit space.
    pub fn backward_batch_preactivation(
        &self,
        cache: &ForwardCache<T>,
        grad_preact: &Matrix<T>,
    ) -> Result<Gradients<T>> {
        self.check_grad_shape(cache, grad_preact)?;
        Ok(self.backprop(cache, grad_preact.clone()))
    }

    fn backprop(&self, cache: &ForwardCache<T>, mut delta: Matrix<T>) -> Gradients<T> {
        let mut grads = Gradients::zeros_like(self);
        let batch = delta.rows();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &cache.inputs[li];
            let g = &mut grads.layers[li];
            for b in 0..batch {
                let drow = delta.row(b);
                let xrow = input.row(b);
                for (o, &d) in drow.iter().enumerate() {
                    if d != T::zero() {
                        axpy(d, xrow, g.weight.row_mut(o));
                    }
                    g.bias[o] = g.bias[o] + d;
                }
            }
            if li == 0 {
                break;
            }
            let mut next = Matrix::zeros(batch, layer.inputs());
            for b in 0..batch {
                let drow = delta.row(b);
                let nrow = next.row_mut(b);
                for (o, &d) in drow.iter().enumerate() {
                    if d != T::zero() {
                        axpy(d, layer.weight.row(o), nrow);
                    }
                }
            }
            let h = &cache.hidden[li - 1];
            match &cache.masks[li - 1] {
                Some(mask) => {
                    for ((n, &hv), &m) in next
                        .as_mut_slice()
                        .iter_mut()
                        .zip(h.as_slice())
                        .zip(mask.as_slice())
                    {
                        *n = *n * m * (T::one() - hv * hv);
                    }
                }
                None => {
                    for (n, &hv) in next.as_mut_slice().iter_mut().zip(h.as_slice()) {
                        *n = *n * (T::one() - hv * hv);
                    }
                }
            }
            delta = next;
        }
        grads
    }

    fn apply_head(&self, z: &mut [T]) {
        if self.head == Head::Sigmoid {
            z.iter_mut().for_each(|v| *v = sigmoid(*v));
        }
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(Error::Contract(format!(
                "layer 0: input width {width} but layer expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn check_grad_shape(&self, cache: &ForwardCache<T>, g: &Matrix<T>) -> Result<()> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::Contract(format!(
                "cache has {} layers but network has {}",
                cache.inputs.len(),
                self.layers.len()
            )));
        }
        if !g.same_shape(&cache.output) {
            return Err(Error::Contract(format!(
                "layer {}: gradient shape {}x{} does not match output {}x{}",
                self.layers.len() - 1,
                g.rows(),
                g.cols(),
                cache.output.rows(),
                cache.output.cols()
            )));
        }
        Ok(())
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::Config(format!(
            "layer sizes {sizes:?} must have at least two positive widths"
        )));
    }
    Ok(())
}

fn flatten<T: Scalar>(layers: &[Dense<T>]) -> Vec<T> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weight.as_slice());
        out.extend_from_slice(&l.bias);
    }
    out
}
