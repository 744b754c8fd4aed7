//! Small dense feed-forward networks with an explicit reverse pass.
//!
//! Every head of the scene decoder is one of these: affine layers with ReLU
//! between them and a linear output. Output activations (tanh, sigmoid,
//! exp) live with the caller so their derivatives stay next to the code
//! that applies them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GtmError, Result};
use crate::real::{cast_vec, Real};

/// One affine layer. `weight` is `out_dim × in_dim`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    pub layers: Vec<Linear<T>>,
}

/// Activations retained by [`MlpParams::forward`] for the reverse pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    rows: usize,
    dims: Vec<usize>,
    /// Input to each layer (post-ReLU output of the previous one).
    inputs: Vec<Vec<T>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<T>>,
}

impl<T> ForwardCache<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

impl<T: Real> MlpParams<T> {
    /// Kaiming-uniform weights (bound `sqrt(6 / in_dim)`), zero biases.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        validate_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (in_dim, out_dim) = (w[0], w[1]);
                let bound = (6.0 / in_dim as f64).sqrt();
                let weight = (0..in_dim * out_dim)
                    .map(|_| T::lit(rng.random_range(-bound..bound)))
                    .collect();
                Linear {
                    in_dim,
                    out_dim,
                    weight,
                    bias: vec![T::zero(); out_dim],
                }
            })
            .collect();
        Ok(MlpParams { layers })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        validate_dims(dims)?;
        Ok(MlpParams {
            layers: dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
        })
    }

    pub fn from_layers(layers: Vec<Linear<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(GtmError::shape("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(GtmError::shape(format!("layer {i} buffers do not match dims")));
            }
            if i > 0 && layers[i - 1].out_dim != l.in_dim {
                return Err(GtmError::shape(format!(
                    "layer {i} expects {} inputs, previous layer emits {}",
                    l.in_dim,
                    layers[i - 1].out_dim
                )));
            }
        }
        Ok(MlpParams { layers })
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams {
            layers: self.layers.iter().map(|l| Linear::zeros(l.in_dim, l.out_dim)).collect(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.in_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Weight and bias buffers in layer order.
    pub fn tensors(&self) -> impl Iterator<Item = &Vec<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn cast<U: Real>(&self) -> MlpParams<U> {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    weight: cast_vec(&l.weight),
                    bias: cast_vec(&l.bias),
                })
                .collect(),
        }
    }

    /// Evaluates the network on `rows` row-major input vectors.
    pub fn forward(&self, input: &[T], rows: usize) -> Result<(Vec<T>, ForwardCache<T>)> {
        let in_dim = self.in_dim();
        if input.len() != rows * in_dim {
            return Err(GtmError::shape(format!(
                "network input has {} values, expected {rows} rows of {in_dim}",
                input.len()
            )));
        }
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut x = input.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let z = affine(layer, &x, rows);
            let next = if li + 1 < n {
                z.iter().map(|&v| v.max(T::zero())).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut x, next));
            pre.push(z);
        }
        let cache = ForwardCache {
            rows,
            dims: self.dims(),
            inputs,
            pre,
        };
        Ok((x, cache))
    }

    /// Reverse pass returning fresh parameter gradients and the input gradient.
    pub fn backward(&self, cache: &ForwardCache<T>, upstream: &[T]) -> Result<(MlpParams<T>, Vec<T>)> {
        let mut grads = self.zeros_like();
        let input_grad = self.backward_into(cache, upstream, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Reverse pass that adds parameter gradients into `grads`.
    pub fn backward_into(&self, cache: &ForwardCache<T>, upstream: &[T], grads: &mut MlpParams<T>) -> Result<Vec<T>> {
        if cache.dims != self.dims() || cache.inputs.len() != self.layers.len() {
            return Err(GtmError::State(
                "forward cache was produced by a different network".into(),
            ));
        }
        if grads.dims() != self.dims() {
            return Err(GtmError::shape("gradient buffer does not mirror network"));
        }
        let rows = cache.rows;
        if upstream.len() != rows * self.out_dim() {
            return Err(GtmError::shape(format!(
                "upstream gradient has {} values, expected {}",
                upstream.len(),
                rows * self.out_dim()
            )));
        }
        let mut g = upstream.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let x = &cache.inputs[li];
            let (ind, outd) = (layer.in_dim, layer.out_dim);
            let gl = &mut grads.layers[li];
            let mut gx = vec![T::zero(); rows * ind];
            for r in 0..rows {
                let xr = &x[r * ind..(r + 1) * ind];
                let gxr = &mut gx[r * ind..(r + 1) * ind];
                for o in 0..outd {
                    let go = g[r * outd + o];
                    if go == T::zero() {
                        continue;
                    }
                    gl.bias[o] += go;
                    let wrow = &layer.weight[o * ind..(o + 1) * ind];
                    let gwrow = &mut gl.weight[o * ind..(o + 1) * ind];
                    for i in 0..ind {
                        gwrow[i] += go * xr[i];
                        gxr[i] += go * wrow[i];
                    }
                }
            }
            if li > 0 {
                // ReLU of the previous layer; subgradient 0 at 0.
                let prev = &cache.pre[li - 1];
                for (v, &p) in gx.iter_mut().zip(prev) {
                    if p <= T::zero() {
                        *v = T::zero();
                    }
                }
            }
            g = gx;
        }
        Ok(g)
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
        return Err(GtmError::shape(format!("invalid layer dims {dims:?}")));
    }
    Ok(())
}

fn affine<T: Real>(layer: &Linear<T>, x: &[T], rows: usize) -> Vec<T> {
    let (ind, outd) = (layer.in_dim, layer.out_dim);
    let mut out = vec![T::zero(); rows * outd];
    for r in 0..rows {
        let xr = &x[r * ind..(r + 1) * ind];
        for o in 0..outd {
            let wrow = &layer.weight[o * ind..(o + 1) * ind];
            let mut acc = layer.bias[o];
            for i in 0..ind {
                acc += wrow[i] * xr[i];
            }
            out[r * outd + o] = acc;
        }
    }
    out
}
