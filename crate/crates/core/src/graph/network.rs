use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::LayerSpec;
use crate::ops::{self, PoolRecord};
use crate::tensor::Tensor;

/// A layer with concrete shapes and parameters.
///
/// `frozen_outputs` leading output units (conv maps, fc rows) keep their
/// parameters fixed during training; the rest are updated.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub params: Vec<Tensor>,
    pub frozen_outputs: usize,
}

impl Layer {
    pub fn new(spec: LayerSpec, in_shape: Vec<usize>, params: Vec<Tensor>) -> Result<Self> {
        let out_shape = spec.output_shape(&in_shape)?;
        let expected = spec.param_shapes(&in_shape);
        if params.len() != expected.len()
            || params.iter().zip(&expected).any(|(p, s)| p.shape() != s.as_slice())
        {
            return Err(Error::shape(format!(
                "{spec} on {in_shape:?} needs parameters {expected:?}, got {:?}",
                params.iter().map(|p| p.shape().to_vec()).collect::<Vec<_>>()
            )));
        }
        Ok(Self {
            spec,
            in_shape,
            out_shape,
            params,
            frozen_outputs: 0,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Parameters belonging to frozen output units.
    pub fn frozen_param_count(&self) -> usize {
        match self.spec.output_units() {
            Some(units) => self
                .params
                .iter()
                .map(|p| p.len() / units * self.frozen_outputs.min(units))
                .sum(),
            None => 0,
        }
    }

    pub fn trainable_param_count(&self) -> usize {
        self.param_count() - self.frozen_param_count()
    }

    pub fn is_fully_frozen(&self) -> bool {
        self.spec.output_units().is_some_and(|u| self.frozen_outputs >= u)
    }
}

/// What a layer keeps from its forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Input(Tensor),
    Output(Tensor),
    Pool(PoolRecord),
}

/// A sequential stack of layers. An empty network is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl Network {
    pub fn from_layers(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let mut shape = input_shape.clone();
        for (i, l) in layers.iter().enumerate() {
            if l.in_shape != shape {
                return Err(Error::shape(format!(
                    "layer {i} ({}) expects {:?} but receives {shape:?}",
                    l.spec, l.in_shape
                )));
            }
            shape = l.out_shape.clone();
        }
        Ok(Self { input_shape, layers })
    }

    /// Fresh parameters: weights ~ N(0, gain / sqrt(fan_in)) with gain √2 when
    /// a ReLU follows, biases zero.
    pub fn build(input_shape: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let relu_next = matches!(specs.get(i + 1), Some(LayerSpec::Relu));
            let params = init_params(spec, &shape, relu_next, &mut rng)?;
            let layer = Layer::new(*spec, shape, params)?;
            shape = layer.out_shape.clone();
            layers.push(layer);
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers.last().map_or(&self.input_shape, |l| &l.out_shape)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.layers.iter().map(Layer::trainable_param_count).sum()
    }

    pub fn frozen_param_count(&self) -> usize {
        self.layers.iter().map(Layer::frozen_param_count).sum()
    }

    pub fn freeze_all(&mut self) {
        for l in &mut self.layers {
            l.frozen_outputs = l.spec.output_units().unwrap_or(0);
        }
    }

    pub fn unfreeze_all(&mut self) {
        for l in &mut self.layers {
            l.frozen_outputs = 0;
        }
    }

    /// Concatenates two networks; `other` must accept this network's output.
    pub fn concat(&self, other: &Network) -> Result<Network> {
        let layers = self.layers.iter().chain(&other.layers).cloned().collect();
        Network::from_layers(self.input_shape.clone(), layers)
    }

    pub fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::shape(format!(
                "network takes {:?}, got {:?}",
                self.input_shape,
                input.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer_forward(layer, &x)?.0;
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &Tensor) -> Result<(Tensor, Vec<Cache>)> {
        self.check_input(input)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let (y, cache) = layer_forward(layer, &x)?;
            caches.push(cache);
            x = y;
        }
        Ok((x, caches))
    }

    /// Back-propagates `output_grad`, returning per-layer parameter gradients
    /// (empty for parameter-free layers) and, if asked, the input gradient.
    pub fn backward(
        &self,
        caches: &[Cache],
        output_grad: &Tensor,
        want_input_grad: bool,
    ) -> Result<(Option<Tensor>, Vec<Vec<Tensor>>)> {
        if caches.len() != self.layers.len() {
            return Err(Error::shape(format!(
                "{} caches for {} layers",
                caches.len(),
                self.layers.len()
            )));
        }
        let mut grads = vec![Vec::new(); self.layers.len()];
        let mut g = output_grad.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let need_input = i > 0 || want_input_grad;
            let (input_grad, params) = layer_backward(layer, cache, &g, need_input)?;
            grads[i] = params;
            match input_grad {
                Some(next) => g = next,
                None => return Ok((None, grads)),
            }
        }
        Ok((want_input_grad.then_some(g), grads))
    }

    /// Momentum SGD over the unfrozen output units of every layer.
    pub fn apply_sgd(
        &mut self,
        grads: &[Vec<Tensor>],
        velocity: &mut [Vec<Tensor>],
        lr: f64,
        momentum: f64,
    ) -> Result<()> {
        for ((layer, g), v) in self.layers.iter_mut().zip(grads).zip(velocity.iter_mut()) {
            let Some(units) = layer.spec.output_units() else {
                continue;
            };
            let frozen = layer.frozen_outputs.min(units);
            if frozen == units {
                continue;
            }
            for ((p, gp), vp) in layer.params.iter_mut().zip(g).zip(v.iter_mut()) {
                let row = p.len() / units;
                let start = frozen * row;
                ops::sgd_update_slice(
                    &mut p.data_mut()[start..],
                    &gp.data()[start..],
                    &mut vp.data_mut()[start..],
                    lr,
                    momentum,
                )?;
            }
        }
        Ok(())
    }

    /// Zeroed tensors shaped like every layer's parameters.
    pub fn zero_like_params(&self) -> Vec<Vec<Tensor>> {
        self.layers
            .iter()
            .map(|l| l.params.iter().map(|p| Tensor::zeros(p.shape())).collect())
            .collect()
    }

    pub fn hash_into(&self, hasher: &mut Sha256) {
        for l in &self.layers {
            hasher.update(l.spec.to_string().as_bytes());
            for p in &l.params {
                p.hash_into(hasher);
            }
        }
    }

    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        self.hash_into(&mut h);
        hex::encode(h.finalize())
    }
}

fn init_params(
    spec: &LayerSpec,
    in_shape: &[usize],
    relu_next: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Tensor>> {
    let shapes = spec.param_shapes(in_shape);
    if shapes.is_empty() {
        return Ok(Vec::new());
    }
    let w_shape = &shapes[0];
    let fan_in: usize = w_shape[1..].iter().product();
    let gain = if relu_next { 2f64.sqrt() } else { 1.0 };
    let normal = Normal::new(0.0, gain / (fan_in as f64).sqrt())
        .map_err(|e| Error::invalid(e.to_string()))?;
    let weights = Tensor::from_fn(w_shape, |_| normal.sample(rng));
    Ok(vec![weights, Tensor::zeros(&shapes[1])])
}

pub(crate) fn layer_forward(layer: &Layer, x: &Tensor) -> Result<(Tensor, Cache)> {
    match layer.spec {
        LayerSpec::Conv {
            stride, padding, ..
        } => Ok((
            ops::conv2d_forward(x, &layer.params[0], &layer.params[1], stride, padding)?,
            Cache::Input(x.clone()),
        )),
        LayerSpec::Pool { kind, window } => {
            let (y, rec) = ops::pool_forward(x, kind, window)?;
            Ok((y, Cache::Pool(rec)))
        }
        LayerSpec::Relu => Ok((ops::relu_forward(x), Cache::Input(x.clone()))),
        LayerSpec::Sigmoid => {
            let y = ops::sigmoid_forward(x);
            Ok((y.clone(), Cache::Output(y)))
        }
        LayerSpec::Fc { .. } | LayerSpec::Head { .. } => Ok((
            ops::fc_forward(x, &layer.params[0], &layer.params[1])?,
            Cache::Input(x.clone()),
        )),
    }
}

fn layer_backward(
    layer: &Layer,
    cache: &Cache,
    g: &Tensor,
    need_input: bool,
) -> Result<(Option<Tensor>, Vec<Tensor>)> {
    let stale = || Error::shape(format!("cache does not belong to layer {}", layer.spec));
    match (layer.spec, cache) {
        (LayerSpec::Conv { stride, padding, .. }, Cache::Input(x)) => {
            if need_input {
                let lg = ops::conv2d_backward(x, &layer.params[0], g, stride, padding)?;
                Ok((Some(lg.input_grad), lg.param_grads))
            } else {
                Ok((None, ops::conv2d_backward_params(x, &layer.params[0], g, stride, padding)?))
            }
        }
        (LayerSpec::Fc { .. } | LayerSpec::Head { .. }, Cache::Input(x)) => {
            let reshape = |t: Tensor| t.reshape(layer.in_shape.clone());
            if need_input {
                let lg = ops::fc_backward(x, &layer.params[0], g)?;
                Ok((Some(reshape(lg.input_grad)?), lg.param_grads))
            } else {
                Ok((None, ops::fc_backward_params(x, &layer.params[0], g)?))
            }
        }
        (_, _) if !need_input => Ok((None, Vec::new())),
        (LayerSpec::Pool { .. }, Cache::Pool(rec)) => Ok((Some(ops::pool_backward(rec, g)?), Vec::new())),
        (LayerSpec::Relu, Cache::Input(x)) => Ok((Some(ops::relu_backward(x, g)?), Vec::new())),
        (LayerSpec::Sigmoid, Cache::Output(y)) => Ok((Some(ops::sigmoid_backward(y, g)?), Vec::new())),
        _ => Err(stale()),
    }
}
