//! Tile-based splatting renderer with an exact reverse pass.
//!
//! Gaussians are projected to screen space with the pinhole Jacobian,
//! binned into 16×16 tiles by their 3σ bounding rectangle, depth sorted
//! once globally and composited front to back per pixel. The reverse pass
//! recomputes each pixel's transmittance sequence and walks it back to
//! front, so no division by `1 - α` is needed.

use crate::camera::Camera;
use crate::error::{GtmError, Result};
use crate::geometry::{covariance_from_rotmat, mat3_cast, quat_to_rotmat, quat_to_rotmat_vjp, Mat3};
use crate::model::{
    decode_neural_gaussians, GaussianGrads, Gaussians, NeuralGaussianBatch, SceneModel, TimeInput, DEFAULT_NEAR_CLIP,
};
use crate::real::Real;

pub const TILE_SIZE: usize = 16;
/// Isotropic screen-space dilation added to every projected covariance.
pub const COV2D_DILATION: f64 = 0.3;
pub const MAX_ALPHA: f64 = 0.99;
pub const ALPHA_SKIP: f64 = 1e-4;
pub const EARLY_STOP_T: f64 = 1e-4;
const SINGULAR_DET: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderSettings {
    pub tile_size: usize,
    pub background: [f64; 3],
    pub near_clip: f64,
    /// Splat-pixel pairs with α below this are not composited.
    pub alpha_skip: f64,
    /// Apply the α-skip and early-termination thresholds. Disabled for
    /// finite-difference checks, where they make the image discontinuous.
    pub thresholds: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            tile_size: TILE_SIZE,
            background: [0.0; 3],
            near_clip: DEFAULT_NEAR_CLIP,
            alpha_skip: ALPHA_SKIP,
            thresholds: true,
        }
    }
}

impl RenderSettings {
    pub fn gradient_check() -> Self {
        RenderSettings {
            thresholds: false,
            ..Default::default()
        }
    }
}

/// A Gaussian after projection to the image plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D<T> {
    /// Pixel coordinates; pixel `(i, j)` covers `[i, i+1) × [j, j+1)`.
    pub mean: [T; 2],
    /// Symmetric covariance `(xx, xy, yy)` in pixels², dilation included.
    pub cov: [T; 3],
    pub depth: T,
    pub alpha_base: T,
    pub color: [T; 3],
    pub source_index: u32,
}

/// Gradients with respect to one splat's screen-space attributes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplatGrad<T> {
    pub color: [T; 3],
    pub alpha_base: T,
    pub mean: [T; 2],
    pub cov: [T; 3],
}

#[derive(Clone, Debug)]
pub struct CompositeState<T> {
    splats: Vec<Splat2D<T>>,
    conics: Vec<[T; 3]>,
    tiles: Vec<Vec<u32>>,
    /// Per pixel, how many entries of its tile list were visited.
    visited: Vec<u32>,
    settings: RenderSettings,
}

impl<T> CompositeState<T> {
    pub fn splats(&self) -> &[Splat2D<T>] {
        &self.splats
    }

    pub fn tile_lists(&self) -> &[Vec<u32>] {
        &self.tiles
    }
}

#[derive(Clone, Debug)]
pub struct RenderOutput<T> {
    pub width: usize,
    pub height: usize,
    /// `H × W × 3`, row-major.
    pub image: Vec<T>,
    /// Residual transmittance per pixel after compositing.
    pub transmittance: Vec<T>,
    /// Splats dropped for a near-singular screen covariance.
    pub skipped_singular: usize,
    pub state: Option<CompositeState<T>>,
}

/// Projects Gaussians to screen space, culling those behind the near plane
/// and those with a non-positive opacity activation.
pub fn project<T: Real>(gaussians: &Gaussians<T>, camera: &Camera, settings: &RenderSettings) -> Vec<Splat2D<T>> {
    let proj = Projector::new(camera);
    let near = T::lit(settings.near_clip);
    let max_alpha = T::lit(MAX_ALPHA);
    let mut out = Vec::with_capacity(gaussians.len());
    for i in 0..gaussians.len() {
        let o = gaussians.opacities[i];
        if !(o > T::zero()) {
            continue;
        }
        let p = proj.to_camera(gaussians.means[i]);
        if !(p[2] > near) {
            continue;
        }
        let r = quat_to_rotmat(gaussians.rotations[i]);
        let sigma = covariance_from_rotmat(gaussians.scales[i], &r);
        let cov = proj.screen_cov(p, &sigma);
        out.push(Splat2D {
            mean: proj.screen_mean(p),
            cov,
            depth: p[2],
            alpha_base: o.min(max_alpha),
            color: gaussians.colors[i],
            source_index: i as u32,
        });
    }
    out
}

struct Projector<T> {
    r: Mat3<T>,
    t: [T; 3],
    fx: T,
    fy: T,
    cx: T,
    cy: T,
}

impl<T: Real> Projector<T> {
    fn new(camera: &Camera) -> Self {
        Projector {
            r: mat3_cast(&camera.rotation),
            t: [
                T::lit(camera.translation[0]),
                T::lit(camera.translation[1]),
                T::lit(camera.translation[2]),
            ],
            fx: T::lit(camera.fx),
            fy: T::lit(camera.fy),
            cx: T::lit(camera.cx),
            cy: T::lit(camera.cy),
        }
    }

    fn to_camera(&self, m: [T; 3]) -> [T; 3] {
        let r = &self.r;
        [
            r[0][0] * m[0] + r[0][1] * m[1] + r[0][2] * m[2] + self.t[0],
            r[1][0] * m[0] + r[1][1] * m[1] + r[1][2] * m[2] + self.t[1],
            r[2][0] * m[0] + r[2][1] * m[1] + r[2][2] * m[2] + self.t[2],
        ]
    }

    fn screen_mean(&self, p: [T; 3]) -> [T; 2] {
        [self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy]
    }

    /// Non-zero entries `(J00, J02, J11, J12)` of the projection Jacobian.
    fn jacobian(&self, p: [T; 3]) -> [T; 4] {
        let iz = T::one() / p[2];
        [
            self.fx * iz,
            -self.fx * p[0] * iz * iz,
            self.fy * iz,
            -self.fy * p[1] * iz * iz,
        ]
    }

    /// Camera-space covariance `W Σ Wᵀ`.
    fn camera_cov(&self, sigma: &Mat3<T>) -> Mat3<T> {
        let r = &self.r;
        let mut rs = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rs[i][j] = r[i][0] * sigma[0][j] + r[i][1] * sigma[1][j] + r[i][2] * sigma[2][j];
            }
        }
        let mut m = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = rs[i][0] * r[j][0] + rs[i][1] * r[j][1] + rs[i][2] * r[j][2];
            }
        }
        m
    }

    fn screen_cov(&self, p: [T; 3], sigma: &Mat3<T>) -> [T; 3] {
        let m = self.camera_cov(sigma);
        let [j00, j02, j11, j12] = self.jacobian(p);
        // J rows: (j00, 0, j02) and (0, j11, j12)
        let a = j00 * j00 * m[0][0] + T::lit(2.0) * j00 * j02 * m[0][2] + j02 * j02 * m[2][2];
        let b = j00 * j11 * m[0][1] + j00 * j12 * m[0][2] + j02 * j11 * m[2][1] + j02 * j12 * m[2][2];
        let c = j11 * j11 * m[1][1] + T::lit(2.0) * j11 * j12 * m[1][2] + j12 * j12 * m[2][2];
        let dil = T::lit(COV2D_DILATION);
        [a + dil, b, c + dil]
    }
}

fn conic_of<T: Real>(cov: [T; 3]) -> Option<[T; 3]> {
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    if !(det.as_f64() >= SINGULAR_DET) {
        return None;
    }
    Some([cov[2] / det, -cov[1] / det, cov[0] / det])
}

/// Radius beyond which the splat's α falls below `alpha_skip` along its
/// major axis; `None` when it never reaches the threshold.
fn footprint_radius<T: Real>(s: &Splat2D<T>, alpha_skip: f64) -> Option<f64> {
    let (a, b, c) = (s.cov[0].as_f64(), s.cov[1].as_f64(), s.cov[2].as_f64());
    let lambda = 0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let ratio = s.alpha_base.as_f64() / alpha_skip;
    if !(ratio > 1.0) {
        return None;
    }
    Some((2.0 * ratio.ln() * lambda).sqrt().ceil())
}

/// Depth order with ties broken by source index.
fn depth_order<T: Real>(splats: &[Splat2D<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| {
        splats[a]
            .depth
            .partial_cmp(&splats[b].depth)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(splats[a].source_index.cmp(&splats[b].source_index))
    });
    order
}

#[cfg(feature = "parallel")]
fn map_indices<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_indices<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    (0..n).map(f).collect()
}

struct TileGrid {
    width: usize,
    height: usize,
    size: usize,
    nx: usize,
    ny: usize,
}

impl TileGrid {
    fn new(width: usize, height: usize, size: usize) -> Self {
        TileGrid {
            width,
            height,
            size,
            nx: width.div_ceil(size),
            ny: height.div_ceil(size),
        }
    }

    fn count(&self) -> usize {
        self.nx * self.ny
    }

    fn pixels(&self, tile: usize) -> impl Iterator<Item = (usize, usize)> {
        let (tx, ty) = (tile % self.nx, tile / self.nx);
        let x0 = tx * self.size;
        let y0 = ty * self.size;
        let x1 = (x0 + self.size).min(self.width);
        let y1 = (y0 + self.size).min(self.height);
        (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
    }
}

#[inline]
fn gaussian_power<T: Real>(conic: &[T; 3], dx: T, dy: T) -> T {
    -T::lit(0.5) * (conic[0] * dx * dx + conic[2] * dy * dy) - conic[1] * dx * dy
}

/// Composites splats front to back into an image of the camera's size.
pub fn composite_forward<T: Real>(
    splats: Vec<Splat2D<T>>,
    camera: &Camera,
    settings: &RenderSettings,
) -> RenderOutput<T> {
    let width = camera.width as usize;
    let height = camera.height as usize;
    let grid = TileGrid::new(width, height, settings.tile_size.max(1));

    let mut skipped_singular = 0;
    let mut conics = Vec::with_capacity(splats.len());
    for s in &splats {
        match conic_of(s.cov) {
            Some(c) => conics.push(c),
            None => {
                skipped_singular += 1;
                conics.push([T::nan(); 3]);
            }
        }
    }

    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); grid.count()];
    for idx in depth_order(&splats) {
        if conics[idx][0].is_nan() {
            continue;
        }
        let s = &splats[idx];
        let Some(radius) = footprint_radius(s, settings.alpha_skip) else {
            continue;
        };
        let (mx, my) = (s.mean[0].as_f64(), s.mean[1].as_f64());
        if !(mx + radius >= 0.0 && mx - radius < width as f64 && my + radius >= 0.0 && my - radius < height as f64) {
            continue;
        }
        let ts = grid.size as f64;
        let tx0 = ((mx - radius) / ts).floor().max(0.0) as usize;
        let ty0 = ((my - radius) / ts).floor().max(0.0) as usize;
        let tx1 = (((mx + radius) / ts).floor() as usize).min(grid.nx - 1);
        let ty1 = (((my + radius) / ts).floor() as usize).min(grid.ny - 1);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tiles[ty * grid.nx + tx].push(idx as u32);
            }
        }
    }

    let skip = T::lit(settings.alpha_skip);
    let stop = T::lit(EARLY_STOP_T);
    let half = T::lit(0.5);
    let bg = settings.background.map(T::lit);
    let per_tile = map_indices(grid.count(), |tile| {
        let list = &tiles[tile];
        grid.pixels(tile)
            .map(|(x, y)| {
                let px = T::lit(x as f64) + half;
                let py = T::lit(y as f64) + half;
                let mut t = T::one();
                let mut c = [T::zero(); 3];
                let mut visited = list.len();
                for (pos, &si) in list.iter().enumerate() {
                    let s = &splats[si as usize];
                    let power = gaussian_power(&conics[si as usize], px - s.mean[0], py - s.mean[1]);
                    let alpha = s.alpha_base * power.exp();
                    if settings.thresholds && alpha < skip {
                        continue;
                    }
                    let w = t * alpha;
                    for ch in 0..3 {
                        c[ch] += w * s.color[ch];
                    }
                    t = t * (T::one() - alpha);
                    if settings.thresholds && t < stop {
                        visited = pos + 1;
                        break;
                    }
                }
                for ch in 0..3 {
                    c[ch] += t * bg[ch];
                }
                (c, t, visited as u32)
            })
            .collect::<Vec<_>>()
    });

    let mut image = vec![T::zero(); width * height * 3];
    let mut transmittance = vec![T::zero(); width * height];
    let mut visited = vec![0u32; width * height];
    for (tile, results) in per_tile.into_iter().enumerate() {
        for ((x, y), (c, t, v)) in grid.pixels(tile).zip(results) {
            let p = y * width + x;
            image[3 * p..3 * p + 3].copy_from_slice(&c);
            transmittance[p] = t;
            visited[p] = v;
        }
    }

    RenderOutput {
        width,
        height,
        image,
        transmittance,
        skipped_singular,
        state: Some(CompositeState {
            splats,
            conics,
            tiles,
            visited,
            settings: settings.clone(),
        }),
    }
}

/// Reverse of [`composite_forward`]: gradients of `Σ image_grad · image`
/// with respect to each splat, indexed like the forward splat list.
pub fn composite_backward<T: Real>(output: &RenderOutput<T>, image_grad: &[T]) -> Result<Vec<SplatGrad<T>>> {
    let state = output
        .state
        .as_ref()
        .ok_or_else(|| GtmError::State("render output carries no compositing state".into()))?;
    let (width, height) = (output.width, output.height);
    if image_grad.len() != width * height * 3 {
        return Err(GtmError::shape(format!(
            "image gradient has {} values, expected {}",
            image_grad.len(),
            width * height * 3
        )));
    }
    let settings = &state.settings;
    let grid = TileGrid::new(width, height, settings.tile_size.max(1));
    let splats = &state.splats;
    let conics = &state.conics;
    let skip = T::lit(settings.alpha_skip);
    let half = T::lit(0.5);
    let bg = settings.background.map(T::lit);

    // Per tile: gradients aligned with the tile list, conic instead of cov.
    let per_tile = map_indices(grid.count(), |tile| {
        let list = &state.tiles[tile];
        let mut local = vec![[T::zero(); 11]; list.len()];
        let mut seq: Vec<(usize, T, T, T)> = Vec::new();
        for (x, y) in grid.pixels(tile) {
            let p = y * width + x;
            let g = [image_grad[3 * p], image_grad[3 * p + 1], image_grad[3 * p + 2]];
            if g.iter().all(|v| *v == T::zero()) {
                continue;
            }
            let px = T::lit(x as f64) + half;
            let py = T::lit(y as f64) + half;
            seq.clear();
            let mut t = T::one();
            for (pos, &si) in list.iter().enumerate().take(state.visited[p] as usize) {
                let s = &splats[si as usize];
                let power = gaussian_power(&conics[si as usize], px - s.mean[0], py - s.mean[1]);
                let gauss = power.exp();
                let alpha = s.alpha_base * gauss;
                if settings.thresholds && alpha < skip {
                    continue;
                }
                seq.push((pos, alpha, gauss, t));
                t = t * (T::one() - alpha);
            }
            // Color behind entry i, as seen just after i.
            let mut behind = bg;
            for &(pos, alpha, gauss, t_i) in seq.iter().rev() {
                let si = list[pos] as usize;
                let s = &splats[si];
                let lg = &mut local[pos];
                let w = t_i * alpha;
                let mut d_alpha = T::zero();
                for ch in 0..3 {
                    lg[ch] += w * g[ch];
                    d_alpha += g[ch] * t_i * (s.color[ch] - behind[ch]);
                }
                lg[3] += d_alpha * gauss;
                let d_power = d_alpha * alpha;
                let dx = px - s.mean[0];
                let dy = py - s.mean[1];
                let q = &conics[si];
                lg[4] += d_power * (q[0] * dx + q[1] * dy);
                lg[5] += d_power * (q[1] * dx + q[2] * dy);
                lg[6] += -half * d_power * dx * dx;
                lg[7] += -d_power * dx * dy;
                lg[8] += -half * d_power * dy * dy;
                for ch in 0..3 {
                    behind[ch] = alpha * s.color[ch] + (T::one() - alpha) * behind[ch];
                }
            }
        }
        local
    });

    let mut acc = vec![[T::zero(); 11]; splats.len()];
    for (tile, local) in per_tile.into_iter().enumerate() {
        for (pos, lg) in local.into_iter().enumerate() {
            let dst = &mut acc[state.tiles[tile][pos] as usize];
            for i in 0..9 {
                dst[i] += lg[i];
            }
        }
    }

    Ok(acc
        .iter()
        .zip(splats)
        .map(|(a, s)| {
            let cov = conic_grad_to_cov(s.cov, [a[6], a[7], a[8]]);
            SplatGrad {
                color: [a[0], a[1], a[2]],
                alpha_base: a[3],
                mean: [a[4], a[5]],
                cov,
            }
        })
        .collect())
}

/// Chain rule through the inverse of a symmetric 2×2 matrix.
fn conic_grad_to_cov<T: Real>(cov: [T; 3], g: [T; 3]) -> [T; 3] {
    let [a, b, c] = cov;
    let det = a * c - b * b;
    if !(det.as_f64() >= SINGULAR_DET) {
        return [T::zero(); 3];
    }
    let d2 = det * det;
    let two = T::lit(2.0);
    // conic = (c, -b, a) / det
    let ga = g[0] * (-c * c / d2) + g[1] * (b * c / d2) + g[2] * (-b * b / d2);
    let gb = g[0] * (two * b * c / d2) + g[1] * (-(a * c + b * b) / d2) + g[2] * (two * a * b / d2);
    let gc = g[0] * (-b * b / d2) + g[1] * (a * b / d2) + g[2] * (-a * a / d2);
    [ga, gb, gc]
}

/// Chains splat gradients back to the 3D attributes of their source
/// Gaussians (means, scales, rotations, opacities, colors).
pub fn project_backward<T: Real>(
    splat_grads: &[SplatGrad<T>],
    splats: &[Splat2D<T>],
    gaussians: &Gaussians<T>,
    camera: &Camera,
) -> Result<GaussianGrads<T>> {
    if splat_grads.len() != splats.len() {
        return Err(GtmError::shape("one gradient per splat expected"));
    }
    let proj = Projector::new(camera);
    let mut out = GaussianGrads::zeros(gaussians.len());
    let two = T::lit(2.0);
    let max_alpha = T::lit(MAX_ALPHA);
    for (sg, s) in splat_grads.iter().zip(splats) {
        let i = s.source_index as usize;
        if i >= gaussians.len() {
            return Err(GtmError::Index {
                index: i,
                len: gaussians.len(),
            });
        }
        out.colors[i] = sg.color;
        if gaussians.opacities[i] < max_alpha {
            out.opacities[i] = sg.alpha_base;
        }

        let mu = gaussians.means[i];
        let p = proj.to_camera(mu);
        let rq = quat_to_rotmat(gaussians.rotations[i]);
        let scale = gaussians.scales[i];
        let sigma = covariance_from_rotmat(scale, &rq);
        let m = proj.camera_cov(&sigma);
        let [j00, j02, j11, j12] = proj.jacobian(p);
        let jm = [[j00, T::zero(), j02], [T::zero(), j11, j12]];

        // Full symmetric gradient on the 2×2 covariance.
        let g2 = [[sg.cov[0], sg.cov[1] / two], [sg.cov[1] / two, sg.cov[2]]];

        // dL/dM = Jᵀ G J
        let mut gj = [[T::zero(); 3]; 2];
        for r in 0..2 {
            for c in 0..3 {
                gj[r][c] = g2[r][0] * jm[0][c] + g2[r][1] * jm[1][c];
            }
        }
        let mut dm = [[T::zero(); 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                dm[r][c] = jm[0][r] * gj[0][c] + jm[1][r] * gj[1][c];
            }
        }
        // dL/dJ = 2 G J M
        let mut dj = [[T::zero(); 3]; 2];
        for r in 0..2 {
            for c in 0..3 {
                dj[r][c] = two * (gj[r][0] * m[0][c] + gj[r][1] * m[1][c] + gj[r][2] * m[2][c]);
            }
        }

        let (x, y, z) = (p[0], p[1], p[2]);
        let iz = T::one() / z;
        let iz2 = iz * iz;
        let iz3 = iz2 * iz;
        let (fx, fy) = (proj.fx, proj.fy);
        let [gu, gv] = sg.mean;
        let dp = [
            gu * fx * iz - dj[0][2] * fx * iz2,
            gv * fy * iz - dj[1][2] * fy * iz2,
            -gu * fx * x * iz2 - gv * fy * y * iz2 - dj[0][0] * fx * iz2 + dj[0][2] * two * fx * x * iz3
                - dj[1][1] * fy * iz2
                + dj[1][2] * two * fy * y * iz3,
        ];
        let w = &proj.r;
        for a in 0..3 {
            out.means[i][a] = w[0][a] * dp[0] + w[1][a] * dp[1] + w[2][a] * dp[2];
        }

        // dL/dΣ = Wᵀ dM W
        let mut tmp = [[T::zero(); 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                tmp[r][c] = w[0][r] * dm[0][c] + w[1][r] * dm[1][c] + w[2][r] * dm[2][c];
            }
        }
        let mut dsig = [[T::zero(); 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                dsig[r][c] = tmp[r][0] * w[0][c] + tmp[r][1] * w[1][c] + tmp[r][2] * w[2][c];
            }
        }
        // Σ = R diag(s²) Rᵀ
        let mut dsr = [[T::zero(); 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                dsr[r][c] = dsig[r][0] * rq[0][c] + dsig[r][1] * rq[1][c] + dsig[r][2] * rq[2][c];
            }
        }
        let d2 = [scale[0] * scale[0], scale[1] * scale[1], scale[2] * scale[2]];
        let mut dr = [[T::zero(); 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                dr[r][c] = two * dsr[r][c] * d2[c];
            }
        }
        for k in 0..3 {
            let rtsr = rq[0][k] * dsr[0][k] + rq[1][k] * dsr[1][k] + rq[2][k] * dsr[2][k];
            out.scales[i][k] = two * scale[k] * rtsr;
        }
        out.rotations[i] = quat_to_rotmat_vjp(gaussians.rotations[i], &dr);
    }
    Ok(out)
}

/// Decoded batch plus its rendering.
#[derive(Clone, Debug)]
pub struct Rendered<T> {
    pub batch: NeuralGaussianBatch<T>,
    pub output: RenderOutput<T>,
}

/// Decode → project → composite for one camera and time.
pub fn render<T: Real>(
    model: &SceneModel<T>,
    camera: &Camera,
    time: TimeInput<'_, T>,
    settings: &RenderSettings,
    retain_cache: bool,
) -> Result<Rendered<T>> {
    let batch = decode_neural_gaussians(model, camera, time, retain_cache)?;
    let splats = project(&batch.gaussians, camera, settings);
    let output = composite_forward(splats, camera, settings);
    Ok(Rendered { batch, output })
}

/// Renders a plain set of Gaussians (no decoder involved).
pub fn render_gaussians<T: Real>(
    gaussians: &Gaussians<T>,
    camera: &Camera,
    settings: &RenderSettings,
) -> RenderOutput<T> {
    composite_forward(project(gaussians, camera, settings), camera, settings)
}
