use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::batchnorm::{batch_norm_backward, batch_norm_eval, batch_norm_train, BnCache, RunningStats};
use super::dropout::dropout_train;
use super::ops::{
    affine_backward, affine_forward, relu, relu_backward, shape_of, sigmoid, sigmoid_backward,
    Matrix,
};
use crate::error::{Error, Result};

pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Affine,
    Sigmoid,
    Relu,
    BatchNorm,
    Dropout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn layer(self, dim: usize) -> LayerSpec {
        match self {
            Activation::Sigmoid => LayerSpec::sigmoid(dim),
            Activation::Relu => LayerSpec::relu(dim),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub dropout_rate: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl LayerSpec {
    fn base(kind: LayerKind, in_dim: usize, out_dim: usize) -> Self {
        Self {
            kind,
            in_dim,
            out_dim,
            dropout_rate: 0.0,
            bn_eps: DEFAULT_BN_EPS,
            bn_momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    pub fn affine(in_dim: usize, out_dim: usize) -> Self {
        Self::base(LayerKind::Affine, in_dim, out_dim)
    }

    pub fn sigmoid(dim: usize) -> Self {
        Self::base(LayerKind::Sigmoid, dim, dim)
    }

    pub fn relu(dim: usize) -> Self {
        Self::base(LayerKind::Relu, dim, dim)
    }

    pub fn batch_norm(dim: usize) -> Self {
        Self::base(LayerKind::BatchNorm, dim, dim)
    }

    pub fn dropout(dim: usize, rate: f64) -> Self {
        Self {
            dropout_rate: rate,
            ..Self::base(LayerKind::Dropout, dim, dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config(format!(
                "{:?} layer needs positive dims, got {}->{}",
                self.kind, self.in_dim, self.out_dim
            )));
        }
        if self.kind != LayerKind::Affine && self.in_dim != self.out_dim {
            return Err(Error::Config(format!(
                "{:?} layer must preserve width, got {}->{}",
                self.kind, self.in_dim, self.out_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.bn_eps > 0.0) {
            return Err(Error::Config(format!("bn_eps must be positive, got {}", self.bn_eps)));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::Config(format!(
                "bn_momentum must be in (0, 1), got {}",
                self.bn_momentum
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerParams {
    None,
    Affine { w: Matrix, b: Matrix },
    BatchNorm { gamma: Matrix, beta: Matrix, stats: RunningStats },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: LayerParams,
}

impl Layer {
    /// Affine weights are Glorot-uniform, biases zero; BN starts at gamma=1, beta=0.
    pub fn init<R: Rng + ?Sized>(spec: LayerSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let params = match spec.kind {
            LayerKind::Affine => {
                let limit = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                let w = Matrix::from_shape_simple_fn((spec.in_dim, spec.out_dim), || dist.sample(rng));
                LayerParams::Affine {
                    w,
                    b: Matrix::zeros((1, spec.out_dim)),
                }
            }
            LayerKind::BatchNorm => LayerParams::BatchNorm {
                gamma: Matrix::ones((1, spec.in_dim)),
                beta: Matrix::zeros((1, spec.in_dim)),
                stats: RunningStats::new(spec.in_dim),
            },
            _ => LayerParams::None,
        };
        Ok(Self { spec, params })
    }
}

#[derive(Debug, Clone)]
enum LayerCache {
    Affine { x: Matrix },
    Sigmoid { y: Matrix },
    Relu { x: Matrix },
    BatchNorm(BnCache),
    Dropout { mask: Matrix },
}

/// Forward-pass record needed by [`Stack::backward`].
#[derive(Debug, Clone)]
pub struct StackCache {
    layers: Vec<LayerCache>,
}

/// A feed-forward chain of layers with a flat parameter list.
///
/// Parameters are ordered layer by layer: affine contributes `[w, b]`,
/// batch norm `[gamma, beta]`. Gradients come back in the same order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stack {
    layers: Vec<Layer>,
}

impl Stack {
    pub fn new<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("a layer stack needs at least one layer".into()));
        }
        for pair in specs.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Config(format!(
                    "layer widths do not chain: {:?} outputs {} but {:?} expects {}",
                    pair[0].kind, pair[0].out_dim, pair[1].kind, pair[1].in_dim
                )));
            }
        }
        let layers = specs
            .iter()
            .map(|&s| Layer::init(s, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
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

    pub fn in_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match &layer.params {
                LayerParams::Affine { w, b } => out.extend([w, b]),
                LayerParams::BatchNorm { gamma, beta, .. } => out.extend([gamma, beta]),
                LayerParams::None => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match &mut layer.params {
                LayerParams::Affine { w, b } => out.extend([w, b]),
                LayerParams::BatchNorm { gamma, beta, .. } => out.extend([gamma, beta]),
                LayerParams::None => {}
            }
        }
        out
    }

    /// Position of the first affine weight matrix in [`Stack::params`].
    pub fn first_affine_param_index(&self) -> Option<usize> {
        let mut idx = 0;
        for layer in &self.layers {
            match layer.params {
                LayerParams::Affine { .. } => return Some(idx),
                LayerParams::BatchNorm { .. } => idx += 2,
                LayerParams::None => {}
            }
        }
        None
    }

    pub fn first_affine_weight(&self) -> Option<&Matrix> {
        self.layers.iter().find_map(|l| match &l.params {
            LayerParams::Affine { w, .. } => Some(w),
            _ => None,
        })
    }

    pub fn first_affine_weight_mut(&mut self) -> Option<&mut Matrix> {
        self.layers.iter_mut().find_map(|l| match &mut l.params {
            LayerParams::Affine { w, .. } => Some(w),
            _ => None,
        })
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.ncols() != self.in_dim() {
            return Err(Error::dim(
                "stack forward",
                format!("{} input columns", self.in_dim()),
                shape_of(x),
            ));
        }
        Ok(())
    }

    /// Training-mode forward: batch statistics for BN (running stats are
    /// updated), stochastic dropout.
    pub fn forward_train<R: Rng + ?Sized>(&mut self, x: &Matrix, rng: &mut R) -> Result<(Matrix, StackCache)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &mut self.layers {
            let spec = layer.spec;
            h = match (&mut layer.params, spec.kind) {
                (LayerParams::Affine { w, b }, _) => {
                    let y = affine_forward(&h, w, b)?;
                    caches.push(LayerCache::Affine { x: h });
                    y
                }
                (LayerParams::BatchNorm { gamma, beta, stats }, _) => {
                    let (y, cache) =
                        batch_norm_train(&h, gamma, beta, spec.bn_eps, spec.bn_momentum, stats)?;
                    caches.push(LayerCache::BatchNorm(cache));
                    y
                }
                (LayerParams::None, LayerKind::Sigmoid) => {
                    let y = sigmoid(&h);
                    caches.push(LayerCache::Sigmoid { y: y.clone() });
                    y
                }
                (LayerParams::None, LayerKind::Relu) => {
                    let y = relu(&h);
                    caches.push(LayerCache::Relu { x: h });
                    y
                }
                (LayerParams::None, LayerKind::Dropout) => {
                    let (y, mask) = dropout_train(&h, spec.dropout_rate, rng)?;
                    caches.push(LayerCache::Dropout { mask });
                    y
                }
                (p, kind) => {
                    return Err(Error::State(format!(
                        "{kind:?} layer carries mismatched parameters {p:?}"
                    )))
                }
            };
        }
        Ok((h, StackCache { layers: caches }))
    }

    /// Inference-mode forward: running statistics for BN, dropout is the identity.
    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = match (&layer.params, layer.spec.kind) {
                (LayerParams::Affine { w, b }, _) => affine_forward(&h, w, b)?,
                (LayerParams::BatchNorm { gamma, beta, stats }, _) => {
                    batch_norm_eval(&h, gamma, beta, layer.spec.bn_eps, stats)?
                }
                (LayerParams::None, LayerKind::Sigmoid) => sigmoid(&h),
                (LayerParams::None, LayerKind::Relu) => relu(&h),
                (LayerParams::None, _) => h,
            };
        }
        Ok(h)
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, x: &Matrix, mode: Mode, rng: &mut R) -> Result<Matrix> {
        match mode {
            Mode::Train => self.forward_train(x, rng).map(|(y, _)| y),
            Mode::Eval => self.forward_eval(x),
        }
    }

    /// Backpropagates `dy` through the cached forward pass. Returns the
    /// gradient w.r.t. the stack input and the parameter gradients.
    pub fn backward(&self, cache: &StackCache, dy: &Matrix) -> Result<(Matrix, Vec<Matrix>)> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::State("stack cache does not match this stack".into()));
        }
        let mut grads_rev: Vec<Matrix> = Vec::new();
        let mut d = dy.clone();
        for (layer, c) in self.layers.iter().zip(&cache.layers).rev() {
            d = match (c, &layer.params) {
                (LayerCache::Affine { x }, LayerParams::Affine { w, .. }) => {
                    let g = affine_backward(x, w, &d)?;
                    grads_rev.push(g.db);
                    grads_rev.push(g.dw);
                    g.dx
                }
                (LayerCache::BatchNorm(bn), LayerParams::BatchNorm { .. }) => {
                    let (dx, dgamma, dbeta) = batch_norm_backward(bn, &d);
                    grads_rev.push(dbeta);
                    grads_rev.push(dgamma);
                    dx
                }
                (LayerCache::Sigmoid { y }, _) => sigmoid_backward(y, &d),
                (LayerCache::Relu { x }, _) => relu_backward(x, &d),
                (LayerCache::Dropout { mask }, _) => &d * mask,
                _ => return Err(Error::State("stack cache does not match this stack".into())),
            };
        }
        grads_rev.reverse();
        Ok((d, grads_rev))
    }
}
