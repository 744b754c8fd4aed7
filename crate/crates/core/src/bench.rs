//! Decode and render throughput measurement.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{GtmError, Result};
use crate::model::{decode_neural_gaussians, SceneModel, TimeInput};
use crate::raster::{composite_forward, project, RenderSettings};
use crate::real::Real;

/// Mean wall time per frame of each pipeline stage, in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub decode_ms: f64,
    pub project_ms: f64,
    pub composite_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    pub mean_splats: f64,
    pub mean_fps: f64,
    pub median_fps: f64,
    pub total_ms: f64,
    pub stages: StageTimings,
    pub threads: usize,
}

/// Renders `frames` frames, cycling through `cameras`, and times each stage.
pub fn run_bench<T: Real>(
    model: &SceneModel<T>,
    cameras: &[Camera],
    time: usize,
    frames: usize,
    settings: &RenderSettings,
) -> Result<BenchReport> {
    if cameras.is_empty() || frames == 0 {
        return Err(GtmError::Config(
            "benchmark needs at least one camera and one frame".into(),
        ));
    }
    let mut frame_ms = Vec::with_capacity(frames);
    let (mut decode, mut proj, mut comp) = (0.0, 0.0, 0.0);
    let mut splats_total = 0usize;
    let start = Instant::now();
    for f in 0..frames {
        let cam = &cameras[f % cameras.len()];
        let t0 = Instant::now();
        let batch = decode_neural_gaussians(model, cam, TimeInput::Index(time), false)?;
        let t1 = Instant::now();
        let splats = project(&batch.gaussians, cam, settings);
        splats_total += splats.len();
        let t2 = Instant::now();
        let out = composite_forward(splats, cam, settings);
        let t3 = Instant::now();
        std::hint::black_box(&out.image);
        decode += (t1 - t0).as_secs_f64() * 1e3;
        proj += (t2 - t1).as_secs_f64() * 1e3;
        comp += (t3 - t2).as_secs_f64() * 1e3;
        frame_ms.push((t3 - t0).as_secs_f64() * 1e3);
    }
    let total_ms = start.elapsed().as_secs_f64() * 1e3;
    let n = frames as f64;
    let mut sorted = frame_ms.clone();
    sorted.sort_by(f64::total_cmp);
    let median_ms = if frames % 2 == 1 {
        sorted[frames / 2]
    } else {
        0.5 * (sorted[frames / 2 - 1] + sorted[frames / 2])
    };
    let cam = &cameras[0];
    Ok(BenchReport {
        frames,
        width: cam.width,
        height: cam.height,
        mean_splats: splats_total as f64 / n,
        mean_fps: 1e3 * n / frame_ms.iter().sum::<f64>(),
        median_fps: 1e3 / median_ms,
        total_ms,
        stages: StageTimings {
            decode_ms: decode / n,
            project_ms: proj / n,
            composite_ms: comp / n,
        },
        threads: worker_threads(),
    })
}

/// Threads available to the rasterizer.
pub fn worker_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Cameras on a horizontal ring around `target`, looking inward.
pub fn orbit_cameras(
    target: [f64; 3],
    radius: f64,
    height: f64,
    count: usize,
    focal: f64,
    width: u32,
    img_height: u32,
) -> Result<Vec<Camera>> {
    (0..count)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / count.max(1) as f64;
            let eye = [
                target[0] + radius * a.cos(),
                target[1] + radius * a.sin(),
                target[2] + height,
            ];
            Camera::look_at(eye, target, [0.0, 0.0, 1.0], focal, width, img_height)
        })
        .collect()
}
