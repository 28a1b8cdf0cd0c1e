//! Batched fully-connected networks with a one-shot reverse-mode tape.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::real::{sigmoid, softplus, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(T::zero()),
            Activation::Sigmoid => sigmoid(z),
            Activation::Softplus => softplus(z),
        }
    }

    /// Derivative at pre-activation `z`; ReLU uses 0 at the kink.
    pub fn derivative<T: Real>(self, z: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (T::one() - s)
            }
            Activation::Softplus => sigmoid(z),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    /// out × in
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Hidden layers use `hidden`; the last layer uses `output`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Layer<T>>,
    pub hidden: Activation,
    pub output: Activation,
}

/// Primal values recorded by one forward pass. Consumed by one backward.
#[derive(Debug)]
pub struct GradTape<T> {
    inputs: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
    consumed: bool,
}

fn xavier<T: Real>(rng: &mut impl Rng, out: usize, inp: usize) -> Array2<T> {
    let a = (6.0 / (inp + out) as f64).sqrt();
    Array2::from_shape_fn((out, inp), |_| T::lit(rng.random_range(-a..a)))
}

impl<T: Real> Mlp<T> {
    /// Xavier-uniform weights, zero biases.
    pub fn new(dims: &[usize], hidden: Activation, output: Activation, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let layers = dims
            .windows(2)
            .map(|w| Layer { weight: xavier(rng, w[1], w[0]), bias: Array1::zeros(w[1]) })
            .collect();
        Self { layers, hidden, output }
    }

    /// Zero the last layer's weights and set its bias to `bias`.
    pub fn with_constant_output(mut self, bias: f64) -> Self {
        let last = self.layers.last_mut().expect("non-empty");
        last.weight.fill(T::zero());
        last.bias.fill(T::lit(bias));
        self
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer { weight: Array2::zeros(l.weight.raw_dim()), bias: Array1::zeros(l.bias.len()) })
                .collect(),
            hidden: self.hidden,
            output: self.output,
        }
    }

    /// Forward a batch (rows are samples).
    pub fn forward(&self, x: ArrayView2<T>) -> Result<(Array2<T>, GradTape<T>)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::invalid(format!("MLP expects {} inputs, got {}", self.input_dim(), x.ncols())));
        }
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.weight.t()) + &layer.bias;
            let act = if i + 1 == n { self.output } else { self.hidden };
            let next = z.mapv(|v| act.apply(v));
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        Ok((h, GradTape { inputs, pre, consumed: false }))
    }

    /// Adds parameter adjoints into `grads` and returns the input adjoint.
    pub fn backward(&self, tape: &mut GradTape<T>, dy: ArrayView2<T>, grads: &mut Mlp<T>) -> Result<Array2<T>> {
        if tape.consumed {
            return Err(Error::ContractViolation("gradient tape was already consumed".into()));
        }
        if tape.pre.len() != self.layers.len() || dy.dim() != tape.pre.last().expect("non-empty").dim() {
            return Err(Error::ContractViolation("output adjoint does not match the recorded forward".into()));
        }
        tape.consumed = true;
        let n = self.layers.len();
        let mut g = dy.to_owned();
        for i in (0..n).rev() {
            let act = if i + 1 == n { self.output } else { self.hidden };
            if act != Activation::Identity {
                ndarray::Zip::from(&mut g).and(&tape.pre[i]).for_each(|g, &z| *g = *g * act.derivative(z));
            }
            let gl = &mut grads.layers[i];
            ndarray::linalg::general_mat_mul(T::one(), &g.t(), &tape.inputs[i], T::one(), &mut gl.weight);
            gl.bias += &g.sum_axis(Axis(0));
            g = g.dot(&self.layers[i].weight);
        }
        Ok(g)
    }

    /// Visit every tensor with a stable name suffix.
    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [T])) {
        for (i, l) in self.layers.iter().enumerate() {
            f(format!("{prefix}.{i}.weight"), l.weight.as_slice().expect("standard layout"));
            f(format!("{prefix}.{i}.bias"), l.bias.as_slice().expect("standard layout"));
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [T])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(format!("{prefix}.{i}.weight"), l.weight.as_slice_mut().expect("standard layout"));
            f(format!("{prefix}.{i}.bias"), l.bias.as_slice_mut().expect("standard layout"));
        }
    }
}
