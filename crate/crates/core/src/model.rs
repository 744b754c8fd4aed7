//! Anchor-based scene representation with time-conditioned heads.
//!
//! Each anchor carries a feature vector, `k` offsets and a per-axis scaling.
//! Decoding against a camera and a time input produces `k` neural Gaussians
//! per visible anchor: means come from the offsets, opacities and colors
//! from heads that see the time vector, and covariances from a head that
//! does not, so geometry is shared across all times.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{GtmError, Result};
use crate::mlp::{ForwardCache, MlpParams};
use crate::real::{cast_vec, sigmoid, Real};

/// Smallest allowed neural Gaussian scale.
pub const MIN_SCALE: f64 = 1e-6;
pub const DEFAULT_NEAR_CLIP: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderMode {
    /// Learnable vector per discrete time index.
    Embedding,
    /// Sinusoidal expansion of the normalized time index.
    #[serde(alias = "pe")]
    Positional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub offsets_per_anchor: usize,
    pub embedding_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub encoder: EncoderMode,
    /// Frequency count `L` of the positional encoder (input width `2L`).
    pub pe_levels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 32,
            offsets_per_anchor: 10,
            embedding_dim: 16,
            hidden_width: 32,
            hidden_layers: 2,
            encoder: EncoderMode::Embedding,
            pe_levels: 8,
        }
    }
}

impl ModelConfig {
    /// Width of the time vector appended to time-aware head inputs.
    pub fn time_dim(&self) -> usize {
        match self.encoder {
            EncoderMode::Embedding => self.embedding_dim,
            EncoderMode::Positional => 2 * self.pe_levels,
        }
    }

    /// Feature, normalized distance and view direction.
    pub fn base_input_dim(&self) -> usize {
        self.feature_dim + 4
    }

    pub fn head_dims(&self, timed: bool, out: usize) -> Vec<usize> {
        let input = self.base_input_dim() + if timed { self.time_dim() } else { 0 };
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        dims.push(out);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.offsets_per_anchor == 0 || self.hidden_width == 0 {
            return Err(GtmError::Config("model dimensions must be positive".into()));
        }
        if self.time_dim() == 0 {
            return Err(GtmError::Config("time encoding width must be positive".into()));
        }
        Ok(())
    }
}

/// Anchor tensors, stored flat and row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet<T> {
    pub feature_dim: usize,
    pub offsets_per_anchor: usize,
    /// `N × 3` world positions. Fixed during optimization.
    pub centers: Vec<T>,
    /// `N × F`
    pub features: Vec<T>,
    /// `N × k × 3`, unitless; scaled by the anchor scaling.
    pub offsets: Vec<T>,
    /// `N × 3` natural logs of the per-axis scaling.
    pub log_scalings: Vec<T>,
}

impl<T: Real> AnchorSet<T> {
    pub fn empty(feature_dim: usize, offsets_per_anchor: usize) -> Self {
        AnchorSet {
            feature_dim,
            offsets_per_anchor,
            centers: Vec::new(),
            features: Vec::new(),
            offsets: Vec::new(),
            log_scalings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn center(&self, i: usize) -> [T; 3] {
        [self.centers[3 * i], self.centers[3 * i + 1], self.centers[3 * i + 2]]
    }

    pub fn scaling(&self, i: usize) -> [T; 3] {
        let s = &self.log_scalings[3 * i..3 * i + 3];
        [s[0].exp(), s[1].exp(), s[2].exp()]
    }

    pub fn feature(&self, i: usize) -> &[T] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn offset(&self, i: usize, j: usize) -> [T; 3] {
        let o = (i * self.offsets_per_anchor + j) * 3;
        [self.offsets[o], self.offsets[o + 1], self.offsets[o + 2]]
    }

    /// Mean of neural Gaussian `j` of anchor `i`: center + offset ⊙ scaling.
    pub fn gaussian_mean(&self, i: usize, j: usize) -> [T; 3] {
        let c = self.center(i);
        let s = self.scaling(i);
        let v = self.offset(i, j);
        [c[0] + v[0] * s[0], c[1] + v[1] * s[1], c[2] + v[2] * s[2]]
    }

    /// Row widths of `(centers, features, offsets, log_scalings)`.
    pub fn row_widths(&self) -> [usize; 4] {
        [3, self.feature_dim, 3 * self.offsets_per_anchor, 3]
    }

    pub fn push(&mut self, center: [T; 3], feature: &[T], offsets: &[T], log_scaling: [T; 3]) {
        debug_assert_eq!(feature.len(), self.feature_dim);
        debug_assert_eq!(offsets.len(), 3 * self.offsets_per_anchor);
        self.centers.extend_from_slice(&center);
        self.features.extend_from_slice(feature);
        self.offsets.extend_from_slice(offsets);
        self.log_scalings.extend_from_slice(&log_scaling);
    }

    /// Keeps the anchors whose `keep` flag is set, preserving order.
    pub fn retain(&mut self, keep: &[bool]) {
        let widths = self.row_widths();
        retain_rows(&mut self.centers, widths[0], keep);
        retain_rows(&mut self.features, widths[1], keep);
        retain_rows(&mut self.offsets, widths[2], keep);
        retain_rows(&mut self.log_scalings, widths[3], keep);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let ok = self.centers.len() == 3 * n
            && self.features.len() == n * self.feature_dim
            && self.offsets.len() == n * self.offsets_per_anchor * 3
            && self.log_scalings.len() == 3 * n;
        if !ok {
            return Err(GtmError::shape("anchor tensors disagree on anchor count"));
        }
        let finite = self
            .centers
            .iter()
            .chain(&self.features)
            .chain(&self.offsets)
            .chain(&self.log_scalings)
            .all(|v| v.is_finite());
        if !finite {
            return Err(GtmError::Numerical("anchor tensors".into()));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> AnchorSet<U> {
        AnchorSet {
            feature_dim: self.feature_dim,
            offsets_per_anchor: self.offsets_per_anchor,
            centers: cast_vec(&self.centers),
            features: cast_vec(&self.features),
            offsets: cast_vec(&self.offsets),
            log_scalings: cast_vec(&self.log_scalings),
        }
    }
}

pub(crate) fn retain_rows<T: Copy>(data: &mut Vec<T>, width: usize, keep: &[bool]) {
    let mut out = Vec::with_capacity(data.len());
    for (row, &k) in data.chunks(width).zip(keep) {
        if k {
            out.extend_from_slice(row);
        }
    }
    *data = out;
}

/// One learnable vector per discrete time index.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeEmbeddingTable<T> {
    pub num_times: usize,
    pub dim: usize,
    pub data: Vec<T>,
}

impl<T: Real> TimeEmbeddingTable<T> {
    pub fn row(&self, t: usize) -> Result<&[T]> {
        if t >= self.num_times {
            return Err(GtmError::Index {
                index: t,
                len: self.num_times,
            });
        }
        Ok(&self.data[t * self.dim..(t + 1) * self.dim])
    }

    /// `(1 - alpha) z_t0 + alpha z_t1`, evaluated as `z_t0 + alpha (z_t1 - z_t0)`
    /// so both endpoints and equal rows are reproduced exactly.
    pub fn interpolate(&self, t0: usize, t1: usize, alpha: T) -> Result<Vec<T>> {
        let a = self.row(t0)?;
        let b = self.row(t1)?;
        if alpha == T::one() {
            return Ok(b.to_vec());
        }
        Ok(a.iter().zip(b).map(|(&x, &y)| x + alpha * (y - x)).collect())
    }
}

/// Free-function form of [`TimeEmbeddingTable::interpolate`].
pub fn interpolate_embedding<T: Real>(table: &TimeEmbeddingTable<T>, t0: usize, t1: usize, alpha: T) -> Result<Vec<T>> {
    table.interpolate(t0, t1, alpha)
}

/// `(sin(2^k π t), cos(2^k π t))` for `k = 0..levels`, interleaved.
pub fn positional_time_encoding<T: Real>(t: T, levels: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(2 * levels);
    let pi = T::lit(std::f64::consts::PI);
    let mut freq = T::one();
    for _ in 0..levels {
        let arg = freq * pi * t;
        out.push(arg.sin());
        out.push(arg.cos());
        freq = freq + freq;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadSet<T> {
    /// `F_o`: k raw opacities (tanh applied by the decoder).
    pub opacity: MlpParams<T>,
    /// `F_cs`: 3k static colors, time-independent.
    pub static_color: MlpParams<T>,
    /// `F_cd`: 3k time-conditioned colors.
    pub dynamic_color: MlpParams<T>,
    /// `F_m`: k blend weights.
    pub blend: MlpParams<T>,
    /// `F_cov`: 7k values, 3 log-scales then 4 quaternion entries per Gaussian.
    pub covariance: MlpParams<T>,
}

pub const HEAD_NAMES: [&str; 5] = ["opacity", "static_color", "dynamic_color", "blend", "covariance"];

impl<T: Real> HeadSet<T> {
    pub fn heads(&self) -> [&MlpParams<T>; 5] {
        [
            &self.opacity,
            &self.static_color,
            &self.dynamic_color,
            &self.blend,
            &self.covariance,
        ]
    }

    pub fn heads_mut(&mut self) -> [&mut MlpParams<T>; 5] {
        [
            &mut self.opacity,
            &mut self.static_color,
            &mut self.dynamic_color,
            &mut self.blend,
            &mut self.covariance,
        ]
    }

    pub fn zeros_like(&self) -> Self {
        HeadSet {
            opacity: self.opacity.zeros_like(),
            static_color: self.static_color.zeros_like(),
            dynamic_color: self.dynamic_color.zeros_like(),
            blend: self.blend.zeros_like(),
            covariance: self.covariance.zeros_like(),
        }
    }

    /// All-zero heads with the dimensional contract of `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        let k = config.offsets_per_anchor;
        Ok(HeadSet {
            opacity: MlpParams::zeros(&config.head_dims(true, k))?,
            static_color: MlpParams::zeros(&config.head_dims(false, 3 * k))?,
            dynamic_color: MlpParams::zeros(&config.head_dims(true, 3 * k))?,
            blend: MlpParams::zeros(&config.head_dims(true, k))?,
            covariance: MlpParams::zeros(&config.head_dims(false, 7 * k))?,
        })
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let k = config.offsets_per_anchor;
        let expected = [
            config.head_dims(true, k),
            config.head_dims(false, 3 * k),
            config.head_dims(true, 3 * k),
            config.head_dims(true, k),
            config.head_dims(false, 7 * k),
        ];
        for ((head, dims), name) in self.heads().iter().zip(expected).zip(HEAD_NAMES) {
            if head.dims() != dims {
                return Err(GtmError::shape(format!(
                    "{name} head has dims {:?}, expected {dims:?}",
                    head.dims()
                )));
            }
            if !head.is_finite() {
                return Err(GtmError::Numerical(format!("{name} head parameters")));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> HeadSet<U> {
        HeadSet {
            opacity: self.opacity.cast(),
            static_color: self.static_color.cast(),
            dynamic_color: self.dynamic_color.cast(),
            blend: self.blend.cast(),
            covariance: self.covariance.cast(),
        }
    }
}

/// The complete learnable scene state.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel<T> {
    pub config: ModelConfig,
    /// Characteristic scene size; normalizes distances and bounds scales.
    pub scene_extent: f64,
    pub anchors: AnchorSet<T>,
    pub embeddings: TimeEmbeddingTable<T>,
    pub heads: HeadSet<T>,
}

/// Anchor seeding parameters for [`SceneModel::initialize`].
#[derive(Clone, Debug)]
pub struct ModelInit {
    pub centers: Vec<[f64; 3]>,
    pub scene_extent: f64,
    pub num_times: usize,
    /// Initial per-axis anchor scaling (scene units).
    pub anchor_scale: f64,
    /// Initial neural Gaussian scale, set through the covariance head bias.
    pub gaussian_scale: f64,
    pub seed: u64,
}

/// Parameter groups with separate learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Features,
    Offsets,
    Scalings,
    Heads,
    Embeddings,
}

impl<T: Real> SceneModel<T> {
    pub fn initialize(config: ModelConfig, init: &ModelInit) -> Result<Self> {
        config.validate()?;
        if init.num_times == 0 {
            return Err(GtmError::Config("model needs at least one time step".into()));
        }
        if !(init.scene_extent > 0.0) {
            return Err(GtmError::Config("scene extent must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
        let k = config.offsets_per_anchor;
        let feat_dist = Normal::new(0.0, 0.1).expect("valid normal");
        let emb_dist = Normal::new(0.0, 0.01).expect("valid normal");

        let mut anchors = AnchorSet::empty(config.feature_dim, k);
        let log_s = T::lit(init.anchor_scale.ln());
        for c in &init.centers {
            let feature: Vec<T> = (0..config.feature_dim)
                .map(|_| T::lit(feat_dist.sample(&mut rng)))
                .collect();
            let offsets: Vec<T> = (0..3 * k).map(|_| T::lit(rng.random_range(-1.0..1.0))).collect();
            anchors.push(
                [T::lit(c[0]), T::lit(c[1]), T::lit(c[2])],
                &feature,
                &offsets,
                [log_s; 3],
            );
        }

        let dim = config.time_dim();
        let embeddings = TimeEmbeddingTable {
            num_times: init.num_times,
            dim,
            data: (0..init.num_times * dim)
                .map(|_| T::lit(emb_dist.sample(&mut rng)))
                .collect(),
        };

        let seed = rng.random::<u64>();
        let mut heads = HeadSet {
            opacity: MlpParams::init(&config.head_dims(true, k), seed)?,
            static_color: MlpParams::init(&config.head_dims(false, 3 * k), seed + 1)?,
            dynamic_color: MlpParams::init(&config.head_dims(true, 3 * k), seed + 2)?,
            blend: MlpParams::init(&config.head_dims(true, k), seed + 3)?,
            covariance: MlpParams::init(&config.head_dims(false, 7 * k), seed + 4)?,
        };
        // Start neural Gaussians near `gaussian_scale` with identity rotation.
        let last = heads.covariance.layers.last_mut().expect("covariance head has layers");
        let scale_bias = T::lit(init.gaussian_scale.ln());
        for j in 0..k {
            for a in 0..3 {
                last.bias[7 * j + a] = scale_bias;
            }
            last.bias[7 * j + 3] = T::one();
        }

        let model = SceneModel {
            config,
            scene_extent: init.scene_extent,
            anchors,
            embeddings,
            heads,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn num_times(&self) -> usize {
        self.embeddings.num_times
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.anchors.validate()?;
        if self.anchors.feature_dim != self.config.feature_dim
            || self.anchors.offsets_per_anchor != self.config.offsets_per_anchor
        {
            return Err(GtmError::shape("anchor dims disagree with model config"));
        }
        if self.embeddings.dim != self.config.time_dim()
            || self.embeddings.data.len() != self.embeddings.num_times * self.embeddings.dim
        {
            return Err(GtmError::shape("time embedding table has wrong shape"));
        }
        if !self.embeddings.data.iter().all(|v| v.is_finite()) {
            return Err(GtmError::Numerical("time embeddings".into()));
        }
        self.heads.validate(&self.config)
    }

    /// Time vector fed to the time-aware heads.
    pub fn time_vector(&self, time: TimeInput<'_, T>) -> Result<Vec<T>> {
        match time {
            TimeInput::Index(t) => {
                if t >= self.num_times() {
                    return Err(GtmError::Index {
                        index: t,
                        len: self.num_times(),
                    });
                }
                match self.config.encoder {
                    EncoderMode::Embedding => Ok(self.embeddings.row(t)?.to_vec()),
                    EncoderMode::Positional => Ok(positional_time_encoding(
                        T::lit(self.normalized_time(t as f64)),
                        self.config.pe_levels,
                    )),
                }
            }
            TimeInput::Vector(v) => {
                if v.len() != self.config.time_dim() {
                    return Err(GtmError::shape(format!(
                        "time vector has {} entries, expected {}",
                        v.len(),
                        self.config.time_dim()
                    )));
                }
                Ok(v.to_vec())
            }
        }
    }

    /// Time vector between two trained times: a lerp of embedding rows, or
    /// the positional encoding of the lerped normalized time.
    pub fn interpolated_time_vector(&self, t0: usize, t1: usize, alpha: f64) -> Result<Vec<T>> {
        match self.config.encoder {
            EncoderMode::Embedding => self.embeddings.interpolate(t0, t1, T::lit(alpha)),
            EncoderMode::Positional => {
                for t in [t0, t1] {
                    if t >= self.num_times() {
                        return Err(GtmError::Index {
                            index: t,
                            len: self.num_times(),
                        });
                    }
                }
                let t = if alpha == 1.0 {
                    t1 as f64
                } else {
                    t0 as f64 + alpha * (t1 as f64 - t0 as f64)
                };
                Ok(positional_time_encoding(
                    T::lit(self.normalized_time(t)),
                    self.config.pe_levels,
                ))
            }
        }
    }

    fn normalized_time(&self, t: f64) -> f64 {
        if self.num_times() > 1 {
            t / (self.num_times() - 1) as f64
        } else {
            0.0
        }
    }

    /// Learnable tensors in a fixed order (anchor centers excluded).
    pub fn tensors(&self) -> Vec<(ParamGroup, &Vec<T>)> {
        let mut out = vec![
            (ParamGroup::Features, &self.anchors.features),
            (ParamGroup::Offsets, &self.anchors.offsets),
            (ParamGroup::Scalings, &self.anchors.log_scalings),
            (ParamGroup::Embeddings, &self.embeddings.data),
        ];
        for head in self.heads.heads() {
            out.extend(head.tensors().map(|t| (ParamGroup::Heads, t)));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut Vec<T>)> {
        let mut out = vec![
            (ParamGroup::Features, &mut self.anchors.features),
            (ParamGroup::Offsets, &mut self.anchors.offsets),
            (ParamGroup::Scalings, &mut self.anchors.log_scalings),
            (ParamGroup::Embeddings, &mut self.embeddings.data),
        ];
        for head in self.heads.heads_mut() {
            out.extend(head.tensors_mut().map(|t| (ParamGroup::Heads, t)));
        }
        out
    }

    pub fn cast<U: Real>(&self) -> SceneModel<U> {
        SceneModel {
            config: self.config.clone(),
            scene_extent: self.scene_extent,
            anchors: self.anchors.cast(),
            embeddings: TimeEmbeddingTable {
                num_times: self.embeddings.num_times,
                dim: self.embeddings.dim,
                data: cast_vec(&self.embeddings.data),
            },
            heads: self.heads.cast(),
        }
    }
}

/// Which time to decode: a trained index or an explicit time vector
/// (for instance an interpolated embedding).
#[derive(Clone, Copy, Debug)]
pub enum TimeInput<'a, T> {
    Index(usize),
    Vector(&'a [T]),
}

/// Renderable Gaussian primitives in structure-of-arrays form.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gaussians<T> {
    pub means: Vec<[T; 3]>,
    /// Raw tanh activations in `(-1, 1)`; non-positive values are not drawn.
    pub opacities: Vec<T>,
    pub scales: Vec<[T; 3]>,
    /// Unit `(w, x, y, z)` quaternions.
    pub rotations: Vec<[T; 4]>,
    pub colors: Vec<[T; 3]>,
}

impl<T: Real> Gaussians<T> {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn with_capacity(n: usize) -> Self {
        Gaussians {
            means: Vec::with_capacity(n),
            opacities: Vec::with_capacity(n),
            scales: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, mean: [T; 3], opacity: T, scale: [T; 3], rotation: [T; 4], color: [T; 3]) {
        self.means.push(mean);
        self.opacities.push(opacity);
        self.scales.push(scale);
        self.rotations.push(rotation);
        self.colors.push(color);
    }

    /// Keeps the Gaussians selected by `keep`, preserving order.
    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> Gaussians<T> {
        let mut out = Gaussians::with_capacity(self.len());
        for i in (0..self.len()).filter(|&i| keep(i)) {
            out.push(
                self.means[i],
                self.opacities[i],
                self.scales[i],
                self.rotations[i],
                self.colors[i],
            );
        }
        out
    }
}

/// Gradients of a scalar objective with respect to each Gaussian attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianGrads<T> {
    pub means: Vec<[T; 3]>,
    pub opacities: Vec<T>,
    pub scales: Vec<[T; 3]>,
    pub rotations: Vec<[T; 4]>,
    pub colors: Vec<[T; 3]>,
}

impl<T: Real> GaussianGrads<T> {
    pub fn zeros(n: usize) -> Self {
        GaussianGrads {
            means: vec![[T::zero(); 3]; n],
            opacities: vec![T::zero(); n],
            scales: vec![[T::zero(); 3]; n],
            rotations: vec![[T::zero(); 4]; n],
            colors: vec![[T::zero(); 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

/// Intermediates retained by the decoder for [`decode_backward`].
#[derive(Clone, Debug)]
pub struct DecodeCache<T> {
    time_vector: Vec<T>,
    time_index: Option<usize>,
    head_caches: Vec<ForwardCache<T>>,
    cov_raw: Vec<T>,
    pub static_colors: Vec<[T; 3]>,
    pub dynamic_colors: Vec<[T; 3]>,
    pub blend: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct NeuralGaussianBatch<T> {
    pub gaussians: Gaussians<T>,
    /// Source anchor of each Gaussian; Gaussian `i` is offset `i % k`.
    pub anchor_index: Vec<u32>,
    /// Anchors that survived frustum culling, ascending.
    pub visible_anchors: Vec<u32>,
    pub cache: Option<DecodeCache<T>>,
}

impl<T: Real> NeuralGaussianBatch<T> {
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

/// Per-Gaussian outputs of the color decomposition for a batch of anchors.
#[derive(Clone, Debug)]
pub struct ColorDecomposition<T> {
    pub colors: Vec<[T; 3]>,
    pub static_colors: Vec<[T; 3]>,
    pub dynamic_colors: Vec<[T; 3]>,
    pub blend: Vec<T>,
}

/// `c = (1 - m) c_s + m c_d`, per channel.
#[inline]
pub fn blend_color<T: Real>(cs: [T; 3], cd: [T; 3], m: T) -> [T; 3] {
    let w = T::one() - m;
    [w * cs[0] + m * cd[0], w * cs[1] + m * cd[1], w * cs[2] + m * cd[2]]
}

/// Evaluates the static, dynamic and blend heads on `rows` anchors.
///
/// `base` holds `(f, δ, d)` rows; `timed` holds the same rows with the time
/// vector appended.
pub fn decompose_color<T: Real>(
    heads: &HeadSet<T>,
    base: &[T],
    timed: &[T],
    rows: usize,
) -> Result<(ColorDecomposition<T>, [ForwardCache<T>; 3])> {
    let (cs_raw, cs_cache) = heads.static_color.forward(base, rows)?;
    let (cd_raw, cd_cache) = heads.dynamic_color.forward(timed, rows)?;
    let (m_raw, m_cache) = heads.blend.forward(timed, rows)?;
    check_finite(&cs_raw, "static_color head")?;
    check_finite(&cd_raw, "dynamic_color head")?;
    check_finite(&m_raw, "blend head")?;
    let k = heads.blend.out_dim();
    let mut out = ColorDecomposition {
        colors: Vec::with_capacity(rows * k),
        static_colors: Vec::with_capacity(rows * k),
        dynamic_colors: Vec::with_capacity(rows * k),
        blend: Vec::with_capacity(rows * k),
    };
    for g in 0..rows * k {
        let cs = [
            sigmoid(cs_raw[3 * g]),
            sigmoid(cs_raw[3 * g + 1]),
            sigmoid(cs_raw[3 * g + 2]),
        ];
        let cd = [
            sigmoid(cd_raw[3 * g]),
            sigmoid(cd_raw[3 * g + 1]),
            sigmoid(cd_raw[3 * g + 2]),
        ];
        let m = sigmoid(m_raw[g]);
        out.colors.push(blend_color(cs, cd, m));
        out.static_colors.push(cs);
        out.dynamic_colors.push(cd);
        out.blend.push(m);
    }
    Ok((out, [cs_cache, cd_cache, m_cache]))
}

fn check_finite<T: Real>(v: &[T], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(GtmError::Numerical(what.to_string()))
    }
}

/// Anchors whose centers are in front of the camera and project inside the
/// canvas enlarged by `margin` of its size on every side.
pub fn visible_anchors<T: Real>(anchors: &AnchorSet<T>, camera: &Camera, near: f64, margin: f64) -> Vec<u32> {
    let (w, h) = (camera.width as f64, camera.height as f64);
    (0..anchors.len())
        .filter(|&i| {
            let c = anchors.center(i);
            let p = camera.world_to_camera([c[0].as_f64(), c[1].as_f64(), c[2].as_f64()]);
            if p[2] <= near {
                return false;
            }
            let u = camera.fx * p[0] / p[2] + camera.cx;
            let v = camera.fy * p[1] / p[2] + camera.cy;
            u >= -margin * w && u <= (1.0 + margin) * w && v >= -margin * h && v <= (1.0 + margin) * h
        })
        .map(|i| i as u32)
        .collect()
}

/// Decodes the neural Gaussians of every visible anchor for one camera and
/// time. With `retain_cache` the batch can be fed to [`decode_backward`].
pub fn decode_neural_gaussians<T: Real>(
    model: &SceneModel<T>,
    camera: &Camera,
    time: TimeInput<'_, T>,
    retain_cache: bool,
) -> Result<NeuralGaussianBatch<T>> {
    let time_vector = model.time_vector(time)?;
    let time_index = match time {
        TimeInput::Index(t) if model.config.encoder == EncoderMode::Embedding => Some(t),
        _ => None,
    };
    let cfg = &model.config;
    let k = cfg.offsets_per_anchor;
    let fdim = cfg.feature_dim;
    let base_dim = cfg.base_input_dim();
    let timed_dim = base_dim + time_vector.len();

    let visible = visible_anchors(&model.anchors, camera, DEFAULT_NEAR_CLIP, 0.1);
    let rows = visible.len();
    let cam_center = camera.center();
    let inv_extent = 1.0 / model.scene_extent;

    let mut base = Vec::with_capacity(rows * base_dim);
    let mut timed = Vec::with_capacity(rows * timed_dim);
    for &a in &visible {
        let a = a as usize;
        let c = model.anchors.center(a);
        let diff = [
            c[0].as_f64() - cam_center[0],
            c[1].as_f64() - cam_center[1],
            c[2].as_f64() - cam_center[2],
        ];
        let dist = (diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2]).sqrt();
        let view = [
            T::lit(dist * inv_extent),
            T::lit(diff[0] / dist),
            T::lit(diff[1] / dist),
            T::lit(diff[2] / dist),
        ];
        let feature = model.anchors.feature(a);
        base.extend_from_slice(feature);
        base.extend_from_slice(&view);
        timed.extend_from_slice(feature);
        timed.extend_from_slice(&view);
        timed.extend_from_slice(&time_vector);
    }
    debug_assert_eq!(base.len(), rows * (fdim + 4));

    let (o_raw, o_cache) = model.heads.opacity.forward(&timed, rows)?;
    check_finite(&o_raw, "opacity head")?;
    let (colors, [cs_cache, cd_cache, m_cache]) = decompose_color(&model.heads, &base, &timed, rows)?;
    let (cov_raw, cov_cache) = model.heads.covariance.forward(&base, rows)?;
    check_finite(&cov_raw, "covariance head")?;

    let max_scale = T::lit(model.scene_extent / 2.0);
    let min_scale = T::lit(MIN_SCALE);
    let mut gaussians = Gaussians::with_capacity(rows * k);
    let mut anchor_index = Vec::with_capacity(rows * k);
    for (r, &a) in visible.iter().enumerate() {
        for j in 0..k {
            let g = r * k + j;
            let raw = &cov_raw[7 * g..7 * g + 7];
            let scale = [
                raw[0].exp().max(min_scale).min(max_scale),
                raw[1].exp().max(min_scale).min(max_scale),
                raw[2].exp().max(min_scale).min(max_scale),
            ];
            let q = [raw[3], raw[4], raw[5], raw[6]];
            let n = q.iter().map(|&v| v * v).sum::<T>().sqrt();
            if !(n > T::zero()) {
                return Err(GtmError::Numerical("covariance head (zero quaternion)".into()));
            }
            gaussians.push(
                model.anchors.gaussian_mean(a as usize, j),
                o_raw[g].tanh(),
                scale,
                [q[0] / n, q[1] / n, q[2] / n, q[3] / n],
                colors.colors[g],
            );
            anchor_index.push(a);
        }
    }

    let cache = retain_cache.then(|| DecodeCache {
        time_vector,
        time_index,
        head_caches: vec![o_cache, cs_cache, cd_cache, m_cache, cov_cache],
        cov_raw,
        static_colors: colors.static_colors,
        dynamic_colors: colors.dynamic_colors,
        blend: colors.blend,
    });
    Ok(NeuralGaussianBatch {
        gaussians,
        anchor_index,
        visible_anchors: visible,
        cache,
    })
}

/// Gradient accumulators mirroring the learnable tensors of a [`SceneModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads<T> {
    pub features: Vec<T>,
    pub offsets: Vec<T>,
    pub log_scalings: Vec<T>,
    pub embeddings: Vec<T>,
    pub heads: HeadSet<T>,
    /// Gradient with respect to an explicit time vector, when one was decoded.
    pub time_vector: Vec<T>,
}

impl<T: Real> ModelGrads<T> {
    pub fn zeros(model: &SceneModel<T>) -> Self {
        ModelGrads {
            features: vec![T::zero(); model.anchors.features.len()],
            offsets: vec![T::zero(); model.anchors.offsets.len()],
            log_scalings: vec![T::zero(); model.anchors.log_scalings.len()],
            embeddings: vec![T::zero(); model.embeddings.data.len()],
            heads: model.heads.zeros_like(),
            time_vector: vec![T::zero(); model.config.time_dim()],
        }
    }

    /// Same order as [`SceneModel::tensors`].
    pub fn tensors(&self) -> Vec<&Vec<T>> {
        let mut out = vec![&self.features, &self.offsets, &self.log_scalings, &self.embeddings];
        for head in self.heads.heads() {
            out.extend(head.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = vec![
            &mut self.features,
            &mut self.offsets,
            &mut self.log_scalings,
            &mut self.embeddings,
        ];
        for head in self.heads.heads_mut() {
            out.extend(head.tensors_mut());
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| *v == T::zero()))
            && self.time_vector.iter().all(|v| *v == T::zero())
    }
}

/// Chains per-Gaussian gradients through the decoder into `out`.
pub fn decode_backward<T: Real>(
    model: &SceneModel<T>,
    batch: &NeuralGaussianBatch<T>,
    grads: &GaussianGrads<T>,
    out: &mut ModelGrads<T>,
) -> Result<()> {
    let cache = batch
        .cache
        .as_ref()
        .ok_or_else(|| GtmError::State("batch was decoded without a backward cache".into()))?;
    if grads.len() != batch.len() {
        return Err(GtmError::shape(format!(
            "{} Gaussian gradients for a batch of {}",
            grads.len(),
            batch.len()
        )));
    }
    let cfg = &model.config;
    let k = cfg.offsets_per_anchor;
    let rows = batch.visible_anchors.len();
    let g_count = rows * k;
    let one = T::one();
    let min_scale = T::lit(MIN_SCALE);
    let max_scale = T::lit(model.scene_extent / 2.0);

    let mut up_o = vec![T::zero(); g_count];
    let mut up_cs = vec![T::zero(); 3 * g_count];
    let mut up_cd = vec![T::zero(); 3 * g_count];
    let mut up_m = vec![T::zero(); g_count];
    let mut up_cov = vec![T::zero(); 7 * g_count];

    for (r, &a) in batch.visible_anchors.iter().enumerate() {
        let a = a as usize;
        let s = model.anchors.scaling(a);
        for j in 0..k {
            let g = r * k + j;

            // μ = μ_a + v_o ⊙ s
            let dmu = grads.means[g];
            let v = model.anchors.offset(a, j);
            let off = (a * k + j) * 3;
            for ax in 0..3 {
                out.offsets[off + ax] += dmu[ax] * s[ax];
                out.log_scalings[3 * a + ax] += dmu[ax] * v[ax] * s[ax];
            }

            let o = batch.gaussians.opacities[g];
            up_o[g] = grads.opacities[g] * (one - o * o);

            let cs = cache.static_colors[g];
            let cd = cache.dynamic_colors[g];
            let m = cache.blend[g];
            let dc = grads.colors[g];
            let mut dm = T::zero();
            for ch in 0..3 {
                up_cs[3 * g + ch] = dc[ch] * (one - m) * cs[ch] * (one - cs[ch]);
                up_cd[3 * g + ch] = dc[ch] * m * cd[ch] * (one - cd[ch]);
                dm += dc[ch] * (cd[ch] - cs[ch]);
            }
            up_m[g] = dm * m * (one - m);

            let raw = &cache.cov_raw[7 * g..7 * g + 7];
            let scale = batch.gaussians.scales[g];
            for ax in 0..3 {
                let unclamped = raw[ax].exp();
                if unclamped > min_scale && unclamped < max_scale {
                    up_cov[7 * g + ax] = grads.scales[g][ax] * scale[ax];
                }
            }
            // q̂ = q / |q|: dq = (dq̂ - q̂ (q̂ · dq̂)) / |q|
            let q = [raw[3], raw[4], raw[5], raw[6]];
            let n = q.iter().map(|&x| x * x).sum::<T>().sqrt();
            let qh = batch.gaussians.rotations[g];
            let dq = grads.rotations[g];
            let dot = qh[0] * dq[0] + qh[1] * dq[1] + qh[2] * dq[2] + qh[3] * dq[3];
            for c in 0..4 {
                up_cov[7 * g + 3 + c] = (dq[c] - qh[c] * dot) / n;
            }
        }
    }

    let [c_o, c_cs, c_cd, c_m, c_cov] = match cache.head_caches.as_slice() {
        [a, b, c, d, e] => [a, b, c, d, e],
        _ => return Err(GtmError::State("decode cache is incomplete".into())),
    };
    let heads = &model.heads;
    let gi_o = heads.opacity.backward_into(c_o, &up_o, &mut out.heads.opacity)?;
    let gi_cs = heads
        .static_color
        .backward_into(c_cs, &up_cs, &mut out.heads.static_color)?;
    let gi_cd = heads
        .dynamic_color
        .backward_into(c_cd, &up_cd, &mut out.heads.dynamic_color)?;
    let gi_m = heads.blend.backward_into(c_m, &up_m, &mut out.heads.blend)?;
    let gi_cov = heads
        .covariance
        .backward_into(c_cov, &up_cov, &mut out.heads.covariance)?;

    let fdim = cfg.feature_dim;
    let base_dim = cfg.base_input_dim();
    let tdim = cache.time_vector.len();
    let timed_dim = base_dim + tdim;
    let mut dz = vec![T::zero(); tdim];
    for (r, &a) in batch.visible_anchors.iter().enumerate() {
        let a = a as usize;
        let feat = &mut out.features[a * fdim..(a + 1) * fdim];
        for timed_grad in [&gi_o, &gi_cd, &gi_m] {
            let row = &timed_grad[r * timed_dim..(r + 1) * timed_dim];
            for i in 0..fdim {
                feat[i] += row[i];
            }
            for i in 0..tdim {
                dz[i] += row[base_dim + i];
            }
        }
        for base_grad in [&gi_cs, &gi_cov] {
            let row = &base_grad[r * base_dim..(r + 1) * base_dim];
            for i in 0..fdim {
                feat[i] += row[i];
            }
        }
    }
    match cache.time_index {
        Some(t) => {
            let row = &mut out.embeddings[t * tdim..(t + 1) * tdim];
            for i in 0..tdim {
                row[i] += dz[i];
            }
        }
        None => {
            for i in 0..tdim {
                out.time_vector[i] += dz[i];
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            feature_dim: 4,
            offsets_per_anchor: 2,
            embedding_dim: 3,
            hidden_width: 6,
            hidden_layers: 2,
            encoder: EncoderMode::Embedding,
            pe_levels: 2,
        }
    }

    fn front_camera() -> Camera {
        Camera::look_at([0.0, 0.0, -4.0], [0.0, 0.0, 0.0], [0.0, -1.0, 0.0], 32.0, 32, 32).unwrap()
    }

    fn model_at(centers: Vec<[f64; 3]>, times: usize, seed: u64) -> SceneModel<f64> {
        SceneModel::initialize(
            tiny_config(),
            &ModelInit {
                centers,
                scene_extent: 2.0,
                num_times: times,
                anchor_scale: 0.2,
                gaussian_scale: 0.1,
                seed,
            },
        )
        .unwrap()
    }

    #[test]
    fn mean_is_center_plus_scaled_offset() {
        let mut m = model_at(vec![[0.0, 0.0, 0.0]], 1, 0);
        m.anchors.log_scalings = vec![2f64.ln(); 3];
        m.anchors.offsets[..3].copy_from_slice(&[1.0, 1.0, 1.0]);
        let mean = m.anchors.gaussian_mean(0, 0);
        for v in mean {
            assert!((v - 2.0).abs() < 1e-12);
        }
        let batch = decode_neural_gaussians(&m, &front_camera(), TimeInput::Index(0), false).unwrap();
        assert_eq!(batch.gaussians.means[0], mean);
    }

    #[test]
    fn zero_heads_give_zero_opacity_and_grey() {
        let mut m = model_at(vec![[0.0, 0.0, 0.0], [0.2, 0.1, 0.0]], 2, 1);
        let mut heads = HeadSet::zeros(&m.config).unwrap();
        // keep the quaternion decodable
        let last = heads.covariance.layers.last_mut().unwrap();
        for j in 0..2 {
            last.bias[7 * j + 3] = 1.0;
        }
        m.heads = heads;
        let batch = decode_neural_gaussians(&m, &front_camera(), TimeInput::Index(1), false).unwrap();
        assert_eq!(batch.len(), 4);
        assert!(batch.gaussians.opacities.iter().all(|&o| o == 0.0));
        assert!(batch.gaussians.colors.iter().all(|c| c.iter().all(|&v| v == 0.5)));
    }

    #[test]
    fn geometry_ignores_time() {
        let m = model_at(vec![[0.0, 0.0, 0.0], [0.3, -0.2, 0.5]], 3, 2);
        let cam = front_camera();
        let a = decode_neural_gaussians(&m, &cam, TimeInput::Index(0), false).unwrap();
        let b = decode_neural_gaussians(&m, &cam, TimeInput::Index(2), false).unwrap();
        assert_eq!(a.gaussians.means, b.gaussians.means);
        assert_eq!(a.gaussians.scales, b.gaussians.scales);
        assert_eq!(a.gaussians.rotations, b.gaussians.rotations);
        assert_ne!(a.gaussians.colors, b.gaussians.colors);
    }

    #[test]
    fn time_index_out_of_range() {
        let m = model_at(vec![[0.0; 3]], 2, 3);
        let r = decode_neural_gaussians(&m, &front_camera(), TimeInput::Index(2), false);
        assert!(matches!(r, Err(GtmError::Index { index: 2, len: 2 })));
    }

    #[test]
    fn blend_identities() {
        let cs = [0.2, 0.4, 0.9];
        let cd = [0.7, 0.1, 0.3];
        assert_eq!(blend_color(cs, cd, 0.0), cs);
        assert_eq!(blend_color(cs, cd, 1.0), cd);
        assert_eq!(blend_color([1.0, 0.0, 0.0], [0.0, 0.0, 1.0], 0.5), [0.5, 0.0, 0.5]);
    }

    #[test]
    fn positional_encoding_values() {
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(&positional_time_encoding(0.0, 2), &[0.0, 1.0, 0.0, 1.0]));
        assert!(close(&positional_time_encoding(1.0, 1), &[0.0, -1.0]));
        assert!(close(&positional_time_encoding(0.5, 2), &[1.0, 0.0, 0.0, -1.0]));
    }

    #[test]
    fn embedding_interpolation() {
        let table = TimeEmbeddingTable {
            num_times: 2,
            dim: 2,
            data: vec![0.0, 0.0, 2.0, 4.0],
        };
        assert_eq!(interpolate_embedding(&table, 0, 1, 0.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(interpolate_embedding(&table, 0, 1, 1.0).unwrap(), vec![2.0, 4.0]);
        assert_eq!(interpolate_embedding(&table, 0, 1, 0.25).unwrap(), vec![0.5, 1.0]);
        assert!(matches!(
            interpolate_embedding(&table, 0, 5, 0.5),
            Err(GtmError::Index { .. })
        ));
    }

    #[test]
    fn backward_without_cache_is_state_error() {
        let m = model_at(vec![[0.0; 3]], 1, 4);
        let batch = decode_neural_gaussians(&m, &front_camera(), TimeInput::Index(0), false).unwrap();
        let mut out = ModelGrads::zeros(&m);
        let r = decode_backward(&m, &batch, &GaussianGrads::zeros(batch.len()), &mut out);
        assert!(matches!(r, Err(GtmError::State(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_contributions() {
        let m = model_at(vec![[0.0; 3], [0.4, 0.0, 0.1]], 2, 5);
        let batch = decode_neural_gaussians(&m, &front_camera(), TimeInput::Index(1), true).unwrap();
        let mut out = ModelGrads::zeros(&m);
        decode_backward(&m, &batch, &GaussianGrads::zeros(batch.len()), &mut out).unwrap();
        assert!(out.is_zero());
    }

    #[test]
    fn static_color_gradient_scales_by_one_minus_blend() {
        // ∂c/∂c_s = 1 - m: with m forced to 0.25 the static head's output-bias
        // gradient is (1 - m) σ'(raw) times the upstream color gradient.
        let mut m = model_at(vec![[0.0; 3]], 1, 6);
        m.heads.blend = m.heads.blend.zeros_like();
        m.heads.blend.layers.last_mut().unwrap().bias = vec![(0.25f64 / 0.75).ln(); 2];
        let batch = decode_neural_gaussians(&m, &front_camera(), TimeInput::Index(0), true).unwrap();
        let cache = batch.cache.as_ref().unwrap();
        assert!(cache.blend.iter().all(|&b| (b - 0.25).abs() < 1e-12));
        let mut up = GaussianGrads::zeros(batch.len());
        up.colors[0] = [1.0, 0.0, 0.0];
        let mut out = ModelGrads::zeros(&m);
        decode_backward(&m, &batch, &up, &mut out).unwrap();
        let cs = cache.static_colors[0][0];
        let bias_grad = out.heads.static_color.layers.last().unwrap().bias[0];
        assert!((bias_grad - 0.75 * cs * (1.0 - cs)).abs() < 1e-12);
    }

    #[test]
    fn frustum_culls_anchors_behind_camera() {
        let m = model_at(vec![[0.0; 3], [0.0, 0.0, -6.0], [50.0, 0.0, 0.0]], 1, 7);
        let batch = decode_neural_gaussians(&m, &front_camera(), TimeInput::Index(0), false).unwrap();
        assert_eq!(batch.visible_anchors, vec![0]);
        assert_eq!(batch.len(), 2);
    }
}
