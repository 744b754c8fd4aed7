//! Self-generated multi-time scenes with known ground truth.
//!
//! A fixed set of plain Gaussians forms three objects. Every time step has
//! its own lighting color that multiplies each Gaussian's albedo, and one
//! object exists only at some time steps. Images are rendered with the same
//! rasterizer that training uses, from cameras on a ring around the scene.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use crate::camera::Camera;
use crate::dataset::{
    ColmapCamera, ColmapImage, ColmapModel, FrameEntry, Image, ManifestFile, SfmPointCloud, Split, View,
};
use crate::error::{GtmError, Result};
use crate::geometry::rotmat_to_quat;
use crate::model::Gaussians;
use crate::raster::{render_gaussians, RenderSettings};
use crate::scene_io::write_atomic;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    /// Per time step lighting color.
    pub lights: Vec<[f64; 3]>,
    /// Time steps at which the transient object exists.
    pub transient_times: Vec<usize>,
    pub cameras: usize,
    pub image_size: u32,
    /// `(camera, time)` pairs held out for testing.
    pub test_pairs: Vec<(usize, usize)>,
    pub seed: u64,
}

impl SynthSpec {
    /// Warm versus cool lighting, transient object at the second time.
    pub fn two_time() -> Self {
        SynthSpec {
            lights: vec![[1.0, 0.5, 0.4], [0.45, 0.6, 1.0]],
            transient_times: vec![1],
            cameras: 8,
            image_size: 64,
            test_pairs: vec![(2, 0), (6, 1)],
            seed: 7,
        }
    }

    pub fn four_time() -> Self {
        SynthSpec {
            lights: vec![[1.0, 0.5, 0.4], [0.9, 0.9, 0.6], [0.5, 1.0, 0.6], [0.45, 0.6, 1.0]],
            transient_times: vec![2, 3],
            cameras: 8,
            image_size: 64,
            test_pairs: vec![(1, 0), (3, 1), (5, 2), (7, 3)],
            seed: 11,
        }
    }

    pub fn num_times(&self) -> usize {
        self.lights.len()
    }
}

/// Object layout: center, radius, albedo, Gaussian count.
const OBJECTS: [([f64; 3], f64, [f64; 3], usize); 3] = [
    ([-0.6, 0.0, 0.0], 0.7, [0.85, 0.75, 0.55], 150),
    ([0.75, 0.2, 0.1], 0.5, [0.45, 0.85, 0.65], 100),
    ([0.1, -0.1, 1.35], 0.35, [0.95, 0.9, 0.9], 50),
];
const TRANSIENT_OBJECT: usize = 2;
const LOOK_AT: [f64; 3] = [0.0, 0.0, 0.35];
const RING_RADIUS: f64 = 4.5;
const FOV_DEGREES: f64 = 45.0;

#[derive(Clone, Debug)]
pub struct SynthScene {
    pub spec: SynthSpec,
    /// Ground truth with albedo colors.
    pub gaussians: Gaussians<f64>,
    pub transient: Vec<bool>,
    pub cameras: Vec<Camera>,
    /// Noisy copies of the ground-truth means, standing in for SfM points.
    pub points: Vec<[f64; 3]>,
}

impl SynthScene {
    pub fn generate(spec: SynthSpec) -> Result<Self> {
        if spec.lights.is_empty() || spec.cameras == 0 || spec.image_size < 11 {
            return Err(GtmError::Config(
                "synthetic scene needs lights, cameras and images of at least 11 px".into(),
            ));
        }
        for &(c, t) in &spec.test_pairs {
            if c >= spec.cameras || t >= spec.num_times() {
                return Err(GtmError::Config(format!("test pair ({c}, {t}) is out of range")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut gaussians = Gaussians::with_capacity(300);
        let mut transient = Vec::with_capacity(300);
        for (obj, &(center, radius, albedo, count)) in OBJECTS.iter().enumerate() {
            for _ in 0..count {
                let dir: [f64; 3] = UnitSphere.sample(&mut rng);
                let r = radius * rng.random_range(0.55f64..1.0).cbrt();
                let mean = [center[0] + r * dir[0], center[1] + r * dir[1], center[2] + r * dir[2]];
                let scale = [
                    rng.random_range(0.06..0.16),
                    rng.random_range(0.06..0.16),
                    rng.random_range(0.04..0.1),
                ];
                let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let n = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-6);
                let jitter = rng.random_range(-0.12..0.12);
                let color = albedo.map(|c: f64| (c + jitter).clamp(0.05, 1.0));
                gaussians.push(
                    mean,
                    rng.random_range(0.6..0.95),
                    scale,
                    [q[0] / n, q[1] / n, q[2] / n, q[3] / n],
                    color,
                );
                transient.push(obj == TRANSIENT_OBJECT);
            }
        }

        let size = spec.image_size;
        let focal = size as f64 / 2.0 / (FOV_DEGREES.to_radians() / 2.0).tan();
        let cameras = (0..spec.cameras)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / spec.cameras as f64;
                let height = if i % 2 == 0 { 1.2 } else { 2.2 };
                let eye = [RING_RADIUS * a.cos(), RING_RADIUS * a.sin(), height];
                Camera::look_at(eye, LOOK_AT, [0.0, 0.0, 1.0], focal, size, size)
            })
            .collect::<Result<Vec<_>>>()?;

        let noise = Normal::new(0.0, 0.01).expect("valid normal");
        let points = gaussians
            .means
            .iter()
            .map(|m| m.map(|v| v + noise.sample(&mut rng)))
            .collect();
        Ok(SynthScene {
            spec,
            gaussians,
            transient,
            cameras,
            points,
        })
    }

    /// Ground-truth Gaussians as they appear at `time`.
    pub fn gaussians_at(&self, time: usize) -> Gaussians<f64> {
        let light = self.spec.lights[time];
        let present = self.spec.transient_times.contains(&time);
        let mut g = self.gaussians.filter(|i| present || !self.transient[i]);
        for c in &mut g.colors {
            for a in 0..3 {
                c[a] *= light[a];
            }
        }
        g
    }

    /// Quantized ground-truth image, identical to what is written to disk.
    pub fn render(&self, camera: usize, time: usize) -> Result<Image> {
        let cam = &self.cameras[camera];
        let out = render_gaussians(&self.gaussians_at(time), cam, &RenderSettings::default());
        let img = Image::from_real(out.width as u32, out.height as u32, &out.image)?;
        let data = img.to_rgb8().into_iter().map(|v| v as f32 / 255.0).collect();
        Image::new(img.width, img.height, data)
    }

    pub fn frame_name(camera: usize, time: usize) -> String {
        format!("cam{camera}_t{time}.png")
    }

    pub fn split_of(&self, camera: usize, time: usize) -> Split {
        if self.spec.test_pairs.contains(&(camera, time)) {
            Split::Test
        } else {
            Split::Train
        }
    }

    /// In-memory views of one split, ordered by time then camera.
    pub fn views(&self, split: Split) -> Result<Vec<View>> {
        let mut out = Vec::new();
        for t in 0..self.spec.num_times() {
            for c in 0..self.spec.cameras {
                if self.split_of(c, t) == split {
                    out.push(View {
                        name: Self::frame_name(c, t),
                        camera: self.cameras[c].clone(),
                        time_index: t,
                        image: self.render(c, t)?,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Extent used by training: the diagonal of the point bounding box.
    pub fn scene_extent(&self) -> f64 {
        crate::dataset::bounding_diagonal(&self.points)
    }

    /// Axis-aligned box around the transient object, padded by `margin`.
    pub fn transient_bounds(&self, margin: f64) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for (m, _) in self.gaussians.means.iter().zip(&self.transient).filter(|(_, &t)| t) {
            for a in 0..3 {
                lo[a] = lo[a].min(m[a] - margin);
                hi[a] = hi[a].max(m[a] + margin);
            }
        }
        (lo, hi)
    }

    /// Writes PNGs, a COLMAP text model and a manifest; returns the
    /// manifest path.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let images_dir = dir.join("images");
        fs::create_dir_all(&images_dir).map_err(|e| GtmError::io(&images_dir, e))?;
        let mut sfm = ColmapModel::default();
        let mut frames = Vec::new();
        for (c, cam) in self.cameras.iter().enumerate() {
            sfm.cameras.insert(
                c as u32 + 1,
                ColmapCamera {
                    id: c as u32 + 1,
                    model: "PINHOLE".into(),
                    width: cam.width,
                    height: cam.height,
                    params: vec![cam.fx, cam.fy, cam.cx, cam.cy],
                },
            );
        }
        for t in 0..self.spec.num_times() {
            for (c, cam) in self.cameras.iter().enumerate() {
                let name = Self::frame_name(c, t);
                self.render(c, t)?.write_png(images_dir.join(&name))?;
                sfm.images.push(ColmapImage {
                    id: sfm.images.len() as u32 + 1,
                    qvec: rotmat_to_quat(&cam.rotation),
                    tvec: cam.translation,
                    camera_id: c as u32 + 1,
                    name: name.clone(),
                });
                frames.push(FrameEntry {
                    image: format!("images/{name}"),
                    time: format!("t{t:02}"),
                    split: self.split_of(c, t),
                    camera: format!("colmap:{name}"),
                });
            }
        }
        sfm.points = SfmPointCloud {
            positions: self.points.clone(),
            colors: None,
        };
        sfm.write_text(dir.join("sparse"))?;
        let manifest = ManifestFile {
            sfm: "sparse".into(),
            frames,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
