//! Training loop: per-iteration view sampling, loss, backpropagation,
//! Adam updates and periodic anchor growing and pruning.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::View;
use crate::error::{GtmError, Result};
use crate::loss::{psnr, ssim, total_loss, LossWeights};
use crate::model::{decode_backward, ModelConfig, ModelGrads, ModelInit, SceneModel, TimeInput};
use crate::optim::{AdamState, LearningRates};
use crate::raster::{composite_backward, project_backward, render, RenderSettings};
use crate::scene_io::Checkpoint;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub enabled: bool,
    /// Iterations between growing/pruning passes.
    pub interval: u64,
    /// First iteration at which anchors may change.
    pub start: u64,
    /// No growing or pruning after this fraction of the run.
    pub stop_fraction: f64,
    /// Average screen-space mean gradient (per pixel) that triggers growth.
    pub grad_threshold: f64,
    /// Anchors whose opacity never reaches this over an interval are pruned.
    pub opacity_threshold: f64,
    /// Voxel edge for deduplicating new anchors, as a fraction of the extent.
    pub voxel_fraction: f64,
    pub max_anchors: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            enabled: true,
            interval: 100,
            start: 500,
            stop_fraction: 0.5,
            grad_threshold: 2e-4,
            opacity_threshold: 0.005,
            voxel_fraction: 1.0 / 128.0,
            max_anchors: 200_000,
        }
    }
}

/// Anchor seeding from the structure-from-motion points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    /// Voxel edge for merging input points into anchors, as a fraction of the extent.
    pub voxel_fraction: f64,
    /// Initial anchor scaling as a fraction of the extent.
    pub anchor_scale: f64,
    /// Initial neural Gaussian scale as a fraction of the extent.
    pub gaussian_scale: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            voxel_fraction: 1.0 / 128.0,
            anchor_scale: 0.01,
            gaussian_scale: 0.005,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    pub seed: u64,
    pub model: ModelConfig,
    pub lr: LearningRates,
    pub loss: LossWeights,
    pub adapt: AdaptConfig,
    pub init: InitConfig,
    pub background: [f64; 3],
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: u64,
    /// Emit a metrics record every this many iterations.
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 3000,
            seed: 0,
            model: ModelConfig::default(),
            lr: LearningRates::default(),
            loss: LossWeights::default(),
            adapt: AdaptConfig::default(),
            init: InitConfig::default(),
            background: [0.0; 3],
            checkpoint_every: 1000,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.lr.validate()?;
        self.loss.validate()?;
        if self.iterations == 0 {
            return Err(GtmError::Config("iterations must be positive".into()));
        }
        let a = &self.adapt;
        if a.interval == 0 {
            return Err(GtmError::Config("adapt.interval must be positive".into()));
        }
        for (name, v) in [
            ("adapt.stop_fraction", a.stop_fraction),
            ("adapt.grad_threshold", a.grad_threshold),
            ("adapt.opacity_threshold", a.opacity_threshold),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(GtmError::Config(format!("{name} must be finite and non-negative")));
            }
        }
        for (name, v) in [
            ("adapt.voxel_fraction", a.voxel_fraction),
            ("init.voxel_fraction", self.init.voxel_fraction),
            ("init.anchor_scale", self.init.anchor_scale),
            ("init.gaussian_scale", self.init.gaussian_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(GtmError::Config(format!("{name} must be positive")));
            }
        }
        if !self.background.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(GtmError::Config("background channels must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            background: self.background,
            ..Default::default()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| GtmError::Config(format!("training config: {e}")))
    }
}

/// Statistics gathered between two adaptation passes.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptStats {
    /// Per anchor; `-inf` until the anchor is decoded.
    pub max_opacity: Vec<f32>,
    /// Per neural Gaussian slot (`anchor · k + j`): summed screen-space
    /// mean gradient norms and the number of renders that contributed.
    pub grad_accum: Vec<f32>,
    pub grad_count: Vec<u32>,
}

impl AdaptStats {
    pub fn new(anchors: usize, k: usize) -> Self {
        AdaptStats {
            max_opacity: vec![f32::NEG_INFINITY; anchors],
            grad_accum: vec![0.0; anchors * k],
            grad_count: vec![0; anchors * k],
        }
    }

    pub fn check_shapes(&self, model: &SceneModel<f32>) -> Result<()> {
        let n = model.anchors.len();
        let slots = n * model.config.offsets_per_anchor;
        if self.max_opacity.len() != n || self.grad_accum.len() != slots || self.grad_count.len() != slots {
            return Err(GtmError::shape("adaptation statistics do not match the anchor count"));
        }
        Ok(())
    }
}

/// Voxel-merged anchor positions from a point cloud.
pub fn voxelize(points: &[[f64; 3]], voxel: f64) -> Vec<[f64; 3]> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for p in points {
        let key = voxel_key(*p, voxel);
        if seen.insert(key) {
            out.push(voxel_center(key, voxel));
        }
    }
    out
}

fn voxel_key(p: [f64; 3], voxel: f64) -> [i64; 3] {
    [
        (p[0] / voxel).floor() as i64,
        (p[1] / voxel).floor() as i64,
        (p[2] / voxel).floor() as i64,
    ]
}

fn voxel_center(key: [i64; 3], voxel: f64) -> [f64; 3] {
    [
        (key[0] as f64 + 0.5) * voxel,
        (key[1] as f64 + 0.5) * voxel,
        (key[2] as f64 + 0.5) * voxel,
    ]
}

/// RNG for one iteration; independent of how the run got there.
fn iteration_rng(seed: u64, iteration: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&iteration.to_le_bytes());
    key[16..24].copy_from_slice(&stream.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

const STREAM_VIEW: u64 = 1;
const STREAM_GROW: u64 = 2;

/// Outcome of one adaptation pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub grown: usize,
    pub pruned: usize,
    pub anchors: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// 1-based index of the iteration just completed.
    pub iteration: u64,
    pub view: String,
    pub time_index: usize,
    pub loss: f64,
    pub l1: f64,
    pub ssim_term: f64,
    pub vol: f64,
    pub psnr: f64,
    pub anchors: usize,
    pub gaussians: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adapt: Option<AdaptReport>,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: SceneModel<f32>,
    pub adam: AdamState<f32>,
    pub adapt: AdaptStats,
    /// Completed iterations.
    pub iteration: u64,
    views: Vec<View>,
    settings: RenderSettings,
}

impl Trainer {
    /// Fresh run with anchors seeded from `points`.
    pub fn new(
        config: TrainConfig,
        views: Vec<View>,
        points: &[[f64; 3]],
        scene_extent: f64,
        num_times: usize,
    ) -> Result<Self> {
        config.validate()?;
        if points.is_empty() {
            return Err(GtmError::Config("no points to seed anchors from".into()));
        }
        let init = ModelInit {
            centers: voxelize(points, scene_extent * config.init.voxel_fraction),
            scene_extent,
            num_times,
            anchor_scale: scene_extent * config.init.anchor_scale,
            gaussian_scale: scene_extent * config.init.gaussian_scale,
            seed: config.seed,
        };
        let model = SceneModel::initialize(config.model.clone(), &init)?;
        Trainer::with_model(config, views, model)
    }

    pub fn with_model(config: TrainConfig, views: Vec<View>, model: SceneModel<f32>) -> Result<Self> {
        config.validate()?;
        if views.is_empty() {
            return Err(GtmError::Config("no training views".into()));
        }
        for v in &views {
            if v.time_index >= model.num_times() {
                return Err(GtmError::Index {
                    index: v.time_index,
                    len: model.num_times(),
                });
            }
        }
        let adam = AdamState::new(&model);
        let adapt = AdaptStats::new(model.anchors.len(), model.config.offsets_per_anchor);
        let settings = config.render_settings();
        Ok(Trainer {
            config,
            model,
            adam,
            adapt,
            iteration: 0,
            views,
            settings,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint, views: Vec<View>) -> Result<Self> {
        let config = TrainConfig::from_json(&ckpt.config_json)?;
        let mut t = Trainer::with_model(config, views, ckpt.model)?;
        ckpt.adam.check_shapes(&t.model)?;
        ckpt.adapt.check_shapes(&t.model)?;
        t.adam = ckpt.adam;
        t.adapt = ckpt.adapt;
        t.iteration = ckpt.iteration;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.iteration,
            model: self.model.clone(),
            adam: self.adam.clone(),
            adapt: self.adapt.clone(),
            config_json: self.config.to_json(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    /// Index of the view trained at the (0-based) `iteration`.
    pub fn view_for_iteration(&self, iteration: u64) -> usize {
        iteration_rng(self.config.seed, iteration, STREAM_VIEW).random_range(0..self.views.len())
    }

    /// Runs one iteration.
    pub fn step(&mut self) -> Result<StepReport> {
        let it = self.iteration;
        let view = &self.views[self.view_for_iteration(it)];
        let cam = &view.camera;
        let (w, h) = (cam.width as usize, cam.height as usize);

        let rendered = render(
            &self.model,
            cam,
            TimeInput::Index(view.time_index),
            &self.settings,
            true,
        )?;
        let batch = &rendered.batch;
        let gt = &view.image.data;

        // The volume term only sees Gaussians that pass the opacity gate.
        let gated: Vec<usize> = (0..batch.len())
            .filter(|&g| batch.gaussians.opacities[g] > 0.0)
            .collect();
        let scales: Vec<[f32; 3]> = gated.iter().map(|&g| batch.gaussians.scales[g]).collect();
        let gt_f32: &[f32] = gt;
        let report = total_loss(&rendered.output.image, gt_f32, w, h, &scales, &self.config.loss)?;
        if !report.total.is_finite() {
            return Err(GtmError::Numerical(format!("loss at iteration {}", it + 1)));
        }

        let splat_grads = composite_backward(&rendered.output, &report.image_grad)?;
        let splats = rendered.output.state.as_ref().map(|s| s.splats()).unwrap_or_default();
        let mut g_grads = project_backward(&splat_grads, splats, &batch.gaussians, cam)?;
        for (&g, sg) in gated.iter().zip(&report.scale_grads) {
            for a in 0..3 {
                g_grads.scales[g][a] += sg[a];
            }
        }
        let mut grads = ModelGrads::zeros(&self.model);
        decode_backward(&self.model, batch, &g_grads, &mut grads)?;

        let k = self.model.config.offsets_per_anchor;
        for (g, &a) in batch.anchor_index.iter().enumerate() {
            let o = batch.gaussians.opacities[g];
            let m = &mut self.adapt.max_opacity[a as usize];
            *m = m.max(o);
        }
        for (splat, sg) in splats.iter().zip(&splat_grads) {
            let g = splat.source_index as usize;
            let slot = batch.anchor_index[g] as usize * k + g % k;
            let n = (sg.mean[0] * sg.mean[0] + sg.mean[1] * sg.mean[1]).sqrt();
            self.adapt.grad_accum[slot] += n;
            self.adapt.grad_count[slot] += 1;
        }

        let rates = self.config.lr.at(it, self.config.iterations);
        self.adam.update(&mut self.model, &grads, &rates)?;
        self.iteration += 1;

        let view_name = view.name.clone();
        let time_index = view.time_index;
        let psnr_value = psnr(&rendered.output.image, gt_f32)?;
        let gaussians = batch.len();

        let mut adapt = None;
        if self.iteration % self.config.adapt.interval == 0 {
            let a = &self.config.adapt;
            let active = a.enabled
                && self.iteration >= a.start
                && (self.iteration as f64) <= a.stop_fraction * self.config.iterations as f64;
            if active {
                adapt = Some(self.adapt_anchors()?);
            }
            self.adapt = AdaptStats::new(self.model.anchors.len(), k);
        }

        Ok(StepReport {
            iteration: self.iteration,
            view: view_name,
            time_index,
            loss: report.total as f64,
            l1: report.l1 as f64,
            ssim_term: report.ssim_term as f64,
            vol: report.vol as f64,
            psnr: psnr_value,
            anchors: self.model.anchors.len(),
            gaussians,
            adapt,
        })
    }

    /// Grows anchors where neural Gaussians saw large screen-space
    /// gradients and prunes anchors that stayed transparent.
    pub fn adapt_anchors(&mut self) -> Result<AdaptReport> {
        let cfg = self.config.adapt.clone();
        let anchors = &self.model.anchors;
        let n = anchors.len();
        let k = anchors.offsets_per_anchor;
        let voxel = self.model.scene_extent * cfg.voxel_fraction;

        let mut occupied: HashSet<[i64; 3]> = (0..n)
            .map(|i| {
                let c = anchors.center(i);
                voxel_key([c[0] as f64, c[1] as f64, c[2] as f64], voxel)
            })
            .collect();

        let mut rng = iteration_rng(self.config.seed, self.iteration, STREAM_GROW);
        let mut new_anchors: Vec<([f32; 3], usize)> = Vec::new();
        for slot in 0..n * k {
            let count = self.adapt.grad_count[slot];
            if count == 0 || ((self.adapt.grad_accum[slot] / count as f32) as f64) <= cfg.grad_threshold {
                continue;
            }
            let (a, j) = (slot / k, slot % k);
            let p = anchors.gaussian_mean(a, j);
            let key = voxel_key([p[0] as f64, p[1] as f64, p[2] as f64], voxel);
            if occupied.insert(key) {
                let c = voxel_center(key, voxel);
                new_anchors.push(([c[0] as f32, c[1] as f32, c[2] as f32], a));
            }
        }

        let keep: Vec<bool> = self
            .adapt
            .max_opacity
            .iter()
            .map(|&m| m == f32::NEG_INFINITY || (m as f64) >= cfg.opacity_threshold)
            .collect();
        let kept = keep.iter().filter(|&&b| b).count();
        let room = cfg.max_anchors.saturating_sub(kept);
        new_anchors.truncate(room);

        let additions: Vec<_> = new_anchors
            .iter()
            .map(|&(center, parent)| {
                let feature = anchors.feature(parent).to_vec();
                let scaling = [
                    anchors.log_scalings[3 * parent],
                    anchors.log_scalings[3 * parent + 1],
                    anchors.log_scalings[3 * parent + 2],
                ];
                let offsets: Vec<f32> = (0..3 * k).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                (center, feature, offsets, scaling)
            })
            .collect();

        let widths = self.model.anchors.row_widths();
        let adam_widths = [widths[1], widths[2], widths[3]];
        self.model.anchors.retain(&keep);
        self.adam.retain_anchors(&keep, &adam_widths);
        for (center, feature, offsets, scaling) in &additions {
            self.model.anchors.push(*center, feature, offsets, *scaling);
        }
        self.adam.push_anchors(additions.len(), &adam_widths);

        Ok(AdaptReport {
            grown: additions.len(),
            pruned: n - kept,
            anchors: self.model.anchors.len(),
        })
    }
}

/// Image metrics for one held-out or training view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub view: String,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn evaluate(model: &SceneModel<f32>, views: &[View], settings: &RenderSettings) -> Result<Vec<EvalRecord>> {
    views
        .iter()
        .map(|v| {
            let out = render(model, &v.camera, TimeInput::Index(v.time_index), settings, false)?.output;
            Ok(EvalRecord {
                view: v.name.clone(),
                psnr: psnr(&out.image, &v.image.data)?,
                ssim: ssim(&out.image, &v.image.data, out.width, out.height)? as f64,
            })
        })
        .collect()
}
