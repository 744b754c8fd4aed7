//! Adam over the learnable tensors of a [`SceneModel`].

use serde::{Deserialize, Serialize};

use crate::error::{GtmError, Result};
use crate::model::{ModelGrads, ParamGroup, SceneModel};
use crate::real::Real;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-15;

/// Per-group learning rates. Features and offsets decay exponentially to
/// `final_decay` times their initial value over the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub features: f64,
    pub offsets: f64,
    pub scalings: f64,
    pub heads: f64,
    pub embeddings: f64,
    pub final_decay: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            features: 1.6e-4,
            offsets: 1.6e-4,
            scalings: 1.6e-4,
            heads: 2e-3,
            embeddings: 5e-3,
            final_decay: 0.1,
        }
    }
}

impl LearningRates {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("features", self.features),
            ("offsets", self.offsets),
            ("scalings", self.scalings),
            ("heads", self.heads),
            ("embeddings", self.embeddings),
            ("final_decay", self.final_decay),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(GtmError::Config(format!(
                    "learning rate {name} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }

    /// Rates at `iteration` of a run of `total` iterations.
    pub fn at(&self, iteration: u64, total: u64) -> GroupRates {
        let progress = if total > 0 {
            (iteration as f64 / total as f64).min(1.0)
        } else {
            0.0
        };
        let decay = if self.final_decay > 0.0 {
            self.final_decay.powf(progress)
        } else {
            1.0
        };
        GroupRates {
            features: self.features * decay,
            offsets: self.offsets * decay,
            scalings: self.scalings,
            heads: self.heads,
            embeddings: self.embeddings,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupRates {
    pub features: f64,
    pub offsets: f64,
    pub scalings: f64,
    pub heads: f64,
    pub embeddings: f64,
}

impl GroupRates {
    pub fn for_group(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Features => self.features,
            ParamGroup::Offsets => self.offsets,
            ParamGroup::Scalings => self.scalings,
            ParamGroup::Heads => self.heads,
            ParamGroup::Embeddings => self.embeddings,
        }
    }
}

/// One bias-corrected Adam update; `step` is the 1-based step count.
pub fn adam_step<T: Real>(params: &mut [T], grads: &[T], m: &mut [T], v: &mut [T], step: u64, lr: f64) -> Result<()> {
    let n = params.len();
    if grads.len() != n || m.len() != n || v.len() != n {
        return Err(GtmError::shape(format!(
            "Adam buffers disagree: params {n}, grads {}, moments {}/{}",
            grads.len(),
            m.len(),
            v.len()
        )));
    }
    if step == 0 {
        return Err(GtmError::State("Adam step count starts at 1".into()));
    }
    let b1 = T::lit(ADAM_BETA1);
    let b2 = T::lit(ADAM_BETA2);
    let one = T::one();
    let exp = step.min(i32::MAX as u64) as i32;
    let c1 = one / (one - b1.powi(exp));
    let c2 = one / (one - b2.powi(exp));
    let lr = T::lit(lr);
    let eps = T::lit(ADAM_EPSILON);
    for i in 0..n {
        let g = grads[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] * c1;
        let v_hat = v[i] * c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// First and second moments for one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Adam state mirroring [`SceneModel::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub moments: Vec<Moments<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(model: &SceneModel<T>) -> Self {
        AdamState {
            step: 0,
            moments: model
                .tensors()
                .into_iter()
                .map(|(_, t)| Moments {
                    m: vec![T::zero(); t.len()],
                    v: vec![T::zero(); t.len()],
                })
                .collect(),
        }
    }

    pub fn check_shapes(&self, model: &SceneModel<T>) -> Result<()> {
        let tensors = model.tensors();
        if tensors.len() != self.moments.len() {
            return Err(GtmError::shape("optimizer state has the wrong number of tensors"));
        }
        for (i, ((_, t), mo)) in tensors.iter().zip(&self.moments).enumerate() {
            if mo.m.len() != t.len() || mo.v.len() != t.len() {
                return Err(GtmError::shape(format!(
                    "optimizer moments of tensor {i} do not match the parameter"
                )));
            }
        }
        Ok(())
    }

    pub fn update(&mut self, model: &mut SceneModel<T>, grads: &ModelGrads<T>, rates: &GroupRates) -> Result<()> {
        self.step += 1;
        let step = self.step;
        let grads = grads.tensors();
        let mut tensors = model.tensors_mut();
        if grads.len() != tensors.len() || self.moments.len() != tensors.len() {
            return Err(GtmError::shape("gradient buffers do not mirror the model"));
        }
        for (((group, params), g), mo) in tensors.iter_mut().zip(grads).zip(&mut self.moments) {
            adam_step(params, g, &mut mo.m, &mut mo.v, step, rates.for_group(*group))?;
        }
        Ok(())
    }

    /// Keeps the anchor rows selected by `keep` in the per-anchor tensors.
    pub fn retain_anchors(&mut self, keep: &[bool], row_widths: &[usize]) {
        for (mo, &w) in self.moments.iter_mut().zip(row_widths) {
            retain_rows(&mut mo.m, w, keep);
            retain_rows(&mut mo.v, w, keep);
        }
    }

    /// Appends zero moments for `count` new anchors.
    pub fn push_anchors(&mut self, count: usize, row_widths: &[usize]) {
        for (mo, &w) in self.moments.iter_mut().zip(row_widths) {
            mo.m.resize(mo.m.len() + count * w, T::zero());
            mo.v.resize(mo.v.len() + count * w, T::zero());
        }
    }
}

fn retain_rows<T: Copy>(data: &mut Vec<T>, width: usize, keep: &[bool]) {
    let mut out = Vec::with_capacity(data.len());
    for (row, &k) in data.chunks_exact(width).zip(keep) {
        if k {
            out.extend_from_slice(row);
        }
    }
    *data = out;
}
