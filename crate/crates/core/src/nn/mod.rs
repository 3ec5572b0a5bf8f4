//! Dense feed-forward networks with ReLU hidden layers and linear heads.
//!
//! Parameters live in one flat `f64` buffer, layer by layer: the weight matrix
//! (row-major, shape `output_dim x input_dim`) followed by the bias vector. The
//! same order is used by [`Gradients::params`], the RMSProp cache and the
//! checkpoint file, so optimizers and serializers never need to know about
//! layer boundaries.
//!
//! `forward` returns its activation cache instead of storing it in the
//! network, so a network can be shared read-only between threads.

mod checkpoint;
mod rmsprop;

pub use rmsprop::RmsProp;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Derivative at `z`. The ReLU subgradient at exactly zero is taken as zero.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub const fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self { input_dim, output_dim, activation }
    }

    pub const fn relu(input_dim: usize, output_dim: usize) -> Self {
        Self::new(input_dim, output_dim, Activation::Relu)
    }

    pub const fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self::new(input_dim, output_dim, Activation::Linear)
    }

    pub const fn param_count(&self) -> usize {
        self.input_dim * self.output_dim + self.output_dim
    }
}

/// Builds the layer chain `inputs -> hidden[0] -> ... -> outputs` with ReLU
/// hidden layers and a linear output layer.
pub fn relu_stack(inputs: usize, hidden: &[usize], outputs: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut prev = inputs;
    for &h in hidden {
        specs.push(LayerSpec::relu(prev, h));
        prev = h;
    }
    specs.push(LayerSpec::linear(prev, outputs));
    specs
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Config("network needs at least one layer".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.input_dim == 0 || s.output_dim == 0 {
            return Err(Error::Config(format!("layer {i} has a zero dimension")));
        }
        if i > 0 && specs[i - 1].output_dim != s.input_dim {
            return Err(Error::Config(format!(
                "layer {i} expects {} inputs but layer {} produces {}",
                s.input_dim,
                i - 1,
                specs[i - 1].output_dim
            )));
        }
    }
    Ok(())
}

/// A multilayer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<LayerSpec>,
    /// Start of each layer's block in `params`.
    offsets: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer values recorded by [`Mlp::forward`] and consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Activations {
    /// `inputs[l]` is the vector fed into layer `l`; `inputs[0]` is the network input.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation values of each layer.
    pre: Vec<Vec<f64>>,
}

impl Activations {
    pub fn input(&self) -> &[f64] {
        &self.inputs[0]
    }
}

/// Gradients of `output_grad . output` with respect to parameters and input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

impl Mlp {
    /// Initializes weights uniformly in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` and biases at zero.
    pub fn new(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..net.layers.len() {
            let bound = 1.0 / (net.layers[l].input_dim as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            for w in net.weights_mut(l) {
                *w = dist.sample(&mut rng);
            }
        }
        Ok(net)
    }

    /// A network with every parameter set to zero.
    pub fn zeros(specs: &[LayerSpec]) -> Result<Self> {
        validate_specs(specs)?;
        let mut offsets = Vec::with_capacity(specs.len());
        let mut total = 0;
        for s in specs {
            offsets.push(total);
            total += s.param_count();
        }
        Ok(Self { layers: specs.to_vec(), offsets, params: vec![0.0; total] })
    }

    /// Rebuilds a network from its layer chain and flat parameter buffer.
    pub fn from_params(specs: &[LayerSpec], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(specs)?;
        if params.len() != net.params.len() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", net.params.len(), params.len())));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Row-major `output_dim x input_dim` weights of layer `l`.
    pub fn weights(&self, l: usize) -> &[f64] {
        let s = &self.layers[l];
        let start = self.offsets[l];
        &self.params[start..start + s.input_dim * s.output_dim]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let s = self.layers[l];
        let start = self.offsets[l];
        &mut self.params[start..start + s.input_dim * s.output_dim]
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        let s = &self.layers[l];
        let start = self.offsets[l] + s.input_dim * s.output_dim;
        &self.params[start..start + s.output_dim]
    }

    pub fn biases_mut(&mut self, l: usize) -> &mut [f64] {
        let s = self.layers[l];
        let start = self.offsets[l] + s.input_dim * s.output_dim;
        &mut self.params[start..start + s.output_dim]
    }

    /// Offset of layer `l`'s block within the flat parameter buffer.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.offsets[l]
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!("network expects {} inputs, got {}", self.input_dim(), input.len())));
        }
        if input.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    fn layer_pre(&self, l: usize, input: &[f64], out: &mut Vec<f64>) {
        let s = &self.layers[l];
        let w = self.weights(l);
        let b = self.biases(l);
        out.clear();
        out.extend(b.iter().enumerate().map(|(o, &bias)| {
            let row = &w[o * s.input_dim..(o + 1) * s.input_dim];
            bias + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        }));
    }

    /// Evaluates the network without recording activations.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for l in 0..self.layers.len() {
            self.layer_pre(l, &cur, &mut next);
            let act = self.layers[l].activation;
            next.iter_mut().for_each(|z| *z = act.apply(*z));
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Evaluates the network and keeps what `backward` needs.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Activations)> {
        self.check_input(input)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        inputs.push(input.to_vec());
        for l in 0..n {
            let mut z = Vec::new();
            self.layer_pre(l, &inputs[l], &mut z);
            let act = self.layers[l].activation;
            let a: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            pre.push(z);
            inputs.push(a);
        }
        let output = inputs.pop().expect("at least one layer");
        Ok((output, Activations { inputs, pre }))
    }

    fn check_backward(&self, cache: &Activations, output_grad: &[f64]) -> Result<()> {
        if cache.pre.len() != self.layers.len()
            || cache.pre.iter().zip(&self.layers).any(|(z, s)| z.len() != s.output_dim)
        {
            return Err(Error::Shape("activations do not belong to this network".into()));
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "output gradient has length {}, network has {} outputs",
                output_grad.len(),
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Backpropagates `output_grad`, adding parameter gradients into `param_grads`
    /// and returning the gradient with respect to the input.
    ///
    /// `param_grads` may be `None` when only the input gradient is wanted.
    fn backprop(&self, cache: &Activations, output_grad: &[f64], mut param_grads: Option<&mut [f64]>) -> Vec<f64> {
        let mut delta: Vec<f64> = output_grad.to_vec();
        for l in (0..self.layers.len()).rev() {
            let s = self.layers[l];
            for (d, &z) in delta.iter_mut().zip(&cache.pre[l]) {
                *d *= s.activation.derivative(z);
            }
            let x = &cache.inputs[l];
            if let Some(grads) = param_grads.as_deref_mut() {
                let start = self.offsets[l];
                let (gw, rest) = grads[start..start + s.param_count()].split_at_mut(s.input_dim * s.output_dim);
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (g, &xi) in gw[o * s.input_dim..(o + 1) * s.input_dim].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                    rest[o] += d;
                }
            }
            let w = self.weights(l);
            let mut prev = vec![0.0; s.input_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (p, &wi) in prev.iter_mut().zip(&w[o * s.input_dim..(o + 1) * s.input_dim]) {
                    *p += d * wi;
                }
            }
            delta = prev;
        }
        delta
    }

    pub fn backward(&self, cache: &Activations, output_grad: &[f64]) -> Result<Gradients> {
        self.check_backward(cache, output_grad)?;
        let mut params = vec![0.0; self.params.len()];
        let input = self.backprop(cache, output_grad, Some(&mut params));
        Ok(Gradients { params, input })
    }

    /// Like [`Mlp::backward`] but accumulates parameter gradients into an existing buffer.
    pub fn backward_accumulate(
        &self,
        cache: &Activations,
        output_grad: &[f64],
        param_grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.check_backward(cache, output_grad)?;
        if param_grads.len() != self.params.len() {
            return Err(Error::Shape("gradient buffer does not match parameter count".into()));
        }
        Ok(self.backprop(cache, output_grad, Some(param_grads)))
    }

    /// Gradient of `output_grad . output` with respect to the input only.
    pub fn input_gradient(&self, cache: &Activations, output_grad: &[f64]) -> Result<Vec<f64>> {
        self.check_backward(cache, output_grad)?;
        Ok(self.backprop(cache, output_grad, None))
    }
}
