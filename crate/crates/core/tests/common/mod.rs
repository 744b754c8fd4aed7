//! Shared helpers for the integration suites: independent reference
//! implementations and random scene generators.
#![allow(dead_code)]

use gtm::raster::Splat2D;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-pixel compositor with one global depth sort and no tiles,
/// thresholds or early termination.
pub fn brute_force_composite(splats: &[Splat2D<f64>], width: usize, height: usize, background: [f64; 3]) -> Vec<f64> {
    let mut order: Vec<&Splat2D<f64>> = splats.iter().collect();
    order.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.source_index.cmp(&b.source_index)));
    let mut image = vec![0.0; width * height * 3];
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for s in &order {
                let [a, b, cc] = s.cov;
                let det = a * cc - b * b;
                if det < 1e-12 {
                    continue;
                }
                let (dx, dy) = (px - s.mean[0], py - s.mean[1]);
                // dᵀ Σ⁻¹ d via the explicit inverse
                let m = (cc * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
                let alpha = s.alpha_base * (-0.5 * m).exp();
                for ch in 0..3 {
                    c[ch] += t * alpha * s.color[ch];
                }
                t *= 1.0 - alpha;
            }
            for ch in 0..3 {
                image[3 * (y * width + x) + ch] = c[ch] + t * background[ch];
            }
        }
    }
    image
}

/// Random screen-space splats over a `width × height` canvas.
pub fn random_splats(rng: &mut ChaCha8Rng, n: usize, width: usize, height: usize) -> Vec<Splat2D<f64>> {
    (0..n)
        .map(|i| {
            let sx: f64 = rng.random_range(0.7..8.0);
            let sy: f64 = rng.random_range(0.7..8.0);
            let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let (s, c) = theta.sin_cos();
            let a = c * c * sx * sx + s * s * sy * sy + 0.3;
            let b = c * s * (sx * sx - sy * sy);
            let d = s * s * sx * sx + c * c * sy * sy + 0.3;
            Splat2D {
                mean: [
                    rng.random_range(-4.0..width as f64 + 4.0),
                    rng.random_range(-4.0..height as f64 + 4.0),
                ],
                cov: [a, b, d],
                depth: rng.random_range(0.5..10.0),
                alpha_base: rng.random_range(0.05..0.99),
                color: [rng.random(), rng.random(), rng.random()],
                source_index: i as u32,
            }
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Relative error with a floor on the denominator so near-zero gradients
/// are compared absolutely.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
