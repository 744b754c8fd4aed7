//! Training objective and image quality metrics.
//!
//! Images are `H × W × 3` row-major slices. Every loss returns its value
//! together with the exact gradient with respect to the prediction.

use serde::{Deserialize, Serialize};

use crate::error::{GtmError, Result};
use crate::real::Real;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_ssim: f64,
    pub lambda_vol: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_ssim: 0.2,
            lambda_vol: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_ssim", self.lambda_ssim), ("lambda_vol", self.lambda_vol)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(GtmError::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LossReport<T> {
    pub total: T,
    pub l1: T,
    /// `1 - SSIM`.
    pub ssim_term: T,
    pub vol: T,
    pub image_grad: Vec<T>,
    pub scale_grads: Vec<[T; 3]>,
}

fn same_len<T>(pred: &[T], gt: &[T]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(GtmError::shape(format!(
            "prediction has {} values, target {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(GtmError::shape("empty image"));
    }
    Ok(())
}

/// Mean absolute difference and its (sub)gradient `sign(pred - gt) / n`.
pub fn l1_loss<T: Real>(pred: &[T], gt: &[T]) -> Result<(T, Vec<T>)> {
    same_len(pred, gt)?;
    let inv_n = T::one() / T::lit(pred.len() as f64);
    let mut sum = T::zero();
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| {
            let d = p - g;
            sum += d.abs();
            if d > T::zero() {
                inv_n
            } else if d < T::zero() {
                -inv_n
            } else {
                T::zero()
            }
        })
        .collect();
    Ok((sum * inv_n, grad))
}

/// Peak signal-to-noise ratio for images in `[0, 1]`, capped at
/// [`PSNR_CAP`].
pub fn psnr<T: Real>(pred: &[T], gt: &[T]) -> Result<f64> {
    same_len(pred, gt)?;
    let mse = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| {
            let d = p.as_f64() - g.as_f64();
            d * d
        })
        .sum::<f64>()
        / pred.len() as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// `Σ s_x s_y s_z` and its gradient.
pub fn volume_regularizer<T: Real>(scales: &[[T; 3]]) -> (T, Vec<[T; 3]>) {
    let mut value = T::zero();
    let grads = scales
        .iter()
        .map(|s| {
            value += s[0] * s[1] * s[2];
            [s[1] * s[2], s[0] * s[2], s[0] * s[1]]
        })
        .collect();
    (value, grads)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - c;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Mirror index without repeating the edge sample (`-1 → 1`).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

/// Separable Gaussian blur of one `h × w` plane with reflection padding.
struct Blur<T> {
    taps: [T; SSIM_WINDOW],
    width: usize,
    height: usize,
}

impl<T: Real> Blur<T> {
    fn new(width: usize, height: usize) -> Self {
        Blur {
            taps: gaussian_window().map(T::lit),
            width,
            height,
        }
    }

    fn apply(&self, src: &[T]) -> Vec<T> {
        let (w, h) = (self.width, self.height);
        let r = (SSIM_WINDOW / 2) as isize;
        let mut tmp = vec![T::zero(); w * h];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for x in 0..w {
                let mut acc = T::zero();
                for (k, &t) in self.taps.iter().enumerate() {
                    acc += t * row[reflect(x as isize + k as isize - r, w)];
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut out = vec![T::zero(); w * h];
        for y in 0..h {
            for (k, &t) in self.taps.iter().enumerate() {
                let sy = reflect(y as isize + k as isize - r, h);
                for x in 0..w {
                    out[y * w + x] += t * tmp[sy * w + x];
                }
            }
        }
        out
    }

    /// Adjoint of [`Blur::apply`].
    fn apply_transpose(&self, src: &[T]) -> Vec<T> {
        let (w, h) = (self.width, self.height);
        let r = (SSIM_WINDOW / 2) as isize;
        let mut tmp = vec![T::zero(); w * h];
        for y in 0..h {
            for (k, &t) in self.taps.iter().enumerate() {
                let sy = reflect(y as isize + k as isize - r, h);
                for x in 0..w {
                    tmp[sy * w + x] += t * src[y * w + x];
                }
            }
        }
        let mut out = vec![T::zero(); w * h];
        for y in 0..h {
            for x in 0..w {
                let g = tmp[y * w + x];
                for (k, &t) in self.taps.iter().enumerate() {
                    out[y * w + reflect(x as isize + k as isize - r, w)] += t * g;
                }
            }
        }
        out
    }
}

fn check_ssim_shape<T>(pred: &[T], gt: &[T], width: usize, height: usize) -> Result<()> {
    same_len(pred, gt)?;
    if pred.len() != width * height * 3 {
        return Err(GtmError::shape(format!(
            "{} values do not form a {width}×{height} RGB image",
            pred.len()
        )));
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(GtmError::shape(format!(
            "{width}×{height} image is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} SSIM window"
        )));
    }
    Ok(())
}

fn channel<T: Real>(img: &[T], c: usize) -> Vec<T> {
    img.iter().skip(c).step_by(3).copied().collect()
}

/// Mean SSIM over pixels and channels.
pub fn ssim<T: Real>(pred: &[T], gt: &[T], width: usize, height: usize) -> Result<T> {
    ssim_impl(pred, gt, width, height, false).map(|(v, _)| v)
}

/// Mean SSIM and its gradient with respect to `pred`.
pub fn ssim_with_grad<T: Real>(pred: &[T], gt: &[T], width: usize, height: usize) -> Result<(T, Vec<T>)> {
    ssim_impl(pred, gt, width, height, true)
}

fn ssim_impl<T: Real>(pred: &[T], gt: &[T], width: usize, height: usize, want_grad: bool) -> Result<(T, Vec<T>)> {
    check_ssim_shape(pred, gt, width, height)?;
    let blur = Blur::<T>::new(width, height);
    let n = width * height;
    let c1 = T::lit(SSIM_C1);
    let c2 = T::lit(SSIM_C2);
    let two = T::lit(2.0);
    let inv_count = T::one() / T::lit((3 * n) as f64);
    let mut total = T::zero();
    let mut grad = if want_grad { vec![T::zero(); 3 * n] } else { Vec::new() };

    for c in 0..3 {
        let x = channel(pred, c);
        let y = channel(gt, c);
        let mx = blur.apply(&x);
        let my = blur.apply(&y);
        let xx: Vec<T> = x.iter().map(|&v| v * v).collect();
        let yy: Vec<T> = y.iter().map(|&v| v * v).collect();
        let xy: Vec<T> = x.iter().zip(&y).map(|(&a, &b)| a * b).collect();
        let exx = blur.apply(&xx);
        let eyy = blur.apply(&yy);
        let exy = blur.apply(&xy);

        let mut d_mx = if want_grad { vec![T::zero(); n] } else { Vec::new() };
        let mut d_exx = d_mx.clone();
        let mut d_exy = d_mx.clone();
        for p in 0..n {
            let (ux, uy) = (mx[p], my[p]);
            let sxx = exx[p] - ux * ux;
            let syy = eyy[p] - uy * uy;
            let sxy = exy[p] - ux * uy;
            let a1 = two * ux * uy + c1;
            let a2 = two * sxy + c2;
            let b1 = ux * ux + uy * uy + c1;
            let b2 = sxx + syy + c2;
            let den = b1 * b2;
            let s = a1 * a2 / den;
            total += s;
            if want_grad {
                // A1' = 2μy, A2' = -2μy, B1' = 2μx, B2' = -2μx (w.r.t. μx)
                let da = two * uy * a2 - two * uy * a1;
                let db = two * ux * b2 - two * ux * b1;
                d_mx[p] = inv_count * (da - s * db) / den;
                d_exx[p] = -inv_count * s / b2;
                d_exy[p] = inv_count * two * a1 / den;
            }
        }
        if want_grad {
            let g_mx = blur.apply_transpose(&d_mx);
            let g_exx = blur.apply_transpose(&d_exx);
            let g_exy = blur.apply_transpose(&d_exy);
            for p in 0..n {
                grad[3 * p + c] = g_mx[p] + two * x[p] * g_exx[p] + y[p] * g_exy[p];
            }
        }
    }
    Ok((total * inv_count, grad))
}

/// `L1 + λ_ssim (1 - SSIM) + λ_vol Σ s_x s_y s_z`.
pub fn total_loss<T: Real>(
    pred: &[T],
    gt: &[T],
    width: usize,
    height: usize,
    scales: &[[T; 3]],
    weights: &LossWeights,
) -> Result<LossReport<T>> {
    weights.validate()?;
    let (l1, mut image_grad) = l1_loss(pred, gt)?;
    let lambda_ssim = T::lit(weights.lambda_ssim);
    let ssim_term = if weights.lambda_ssim > 0.0 {
        let (s, g) = ssim_with_grad(pred, gt, width, height)?;
        for (dst, v) in image_grad.iter_mut().zip(g) {
            *dst -= lambda_ssim * v;
        }
        T::one() - s
    } else {
        T::one() - ssim(pred, gt, width, height)?
    };
    let lambda_vol = T::lit(weights.lambda_vol);
    let (vol, mut scale_grads) = volume_regularizer(scales);
    for g in &mut scale_grads {
        for v in g.iter_mut() {
            *v *= lambda_vol;
        }
    }
    Ok(LossReport {
        total: l1 + lambda_ssim * ssim_term + lambda_vol * vol,
        l1,
        ssim_term,
        vol,
        image_grad,
        scale_grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_identical_and_offset() {
        let a = vec![0.2f64; 12];
        let (v, g) = l1_loss(&a, &a).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
        let b: Vec<f64> = a.iter().map(|v| v + 0.5).collect();
        let (v, g) = l1_loss(&b, &a).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert!(g.iter().all(|&x| x == 1.0 / 12.0));
    }

    #[test]
    fn l1_shape_mismatch() {
        assert!(matches!(l1_loss(&[0.0f64; 3], &[0.0; 6]), Err(GtmError::Shape(_))));
    }

    #[test]
    fn psnr_closed_forms() {
        let gt = vec![0.5f64; 48];
        assert_eq!(psnr(&gt, &gt).unwrap(), PSNR_CAP);
        let off: Vec<f64> = gt.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&off, &gt).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&vec![0.0f64; 48], &vec![1.0; 48]).unwrap(), 0.0);
        assert!(psnr(&[0.0f64; 3], &[0.0; 6]).is_err());
    }

    #[test]
    fn volume_product_rule() {
        let (v, g) = volume_regularizer(&[[1.0f64, 2.0, 3.0]]);
        assert_eq!(v, 6.0);
        assert_eq!(g, vec![[6.0, 3.0, 2.0]]);
        let (v, g) = volume_regularizer(&vec![[1.0f64; 3]; 7]);
        assert_eq!(v, 7.0);
        assert!(g.iter().all(|x| *x == [1.0; 3]));
    }

    #[test]
    fn ssim_identical_is_one() {
        let img: Vec<f64> = (0..16 * 12 * 3).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        assert_eq!(ssim(&img, &img, 16, 12).unwrap(), 1.0);
    }

    #[test]
    fn ssim_uniform_black_vs_white() {
        let a = vec![0.0f64; 12 * 12 * 3];
        let b = vec![1.0f64; 12 * 12 * 3];
        let expected = SSIM_C1 / (1.0 + SSIM_C1);
        assert!((ssim(&a, &b, 12, 12).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = vec![0.0f64; 10 * 20 * 3];
        assert!(matches!(ssim(&a, &a, 10, 20), Err(GtmError::Shape(_))));
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-4, 5), 4);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(8, 5), 0);
    }

    #[test]
    fn window_is_normalized_and_symmetric() {
        let w = gaussian_window();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..SSIM_WINDOW {
            assert_eq!(w[i], w[SSIM_WINDOW - 1 - i]);
        }
    }

    #[test]
    fn total_loss_decomposition() {
        let gt: Vec<f64> = (0..12 * 12 * 3).map(|i| (i % 7) as f64 / 7.0).collect();
        let scales = vec![[0.1, 0.2, 0.3], [0.5, 0.5, 0.5]];
        let w = LossWeights::default();
        let r = total_loss(&gt, &gt, 12, 12, &scales, &w).unwrap();
        assert_eq!(r.l1, 0.0);
        assert_eq!(r.ssim_term, 0.0);
        assert_eq!(r.total, w.lambda_vol * r.vol);

        let pred: Vec<f64> = gt.iter().map(|v| 1.0 - v).collect();
        let zero = LossWeights {
            lambda_ssim: 0.0,
            lambda_vol: 0.0,
        };
        let r0 = total_loss(&pred, &gt, 12, 12, &scales, &zero).unwrap();
        assert_eq!(r0.total, r0.l1);

        let w1 = LossWeights {
            lambda_ssim: 0.0,
            lambda_vol: 0.25,
        };
        let w2 = LossWeights {
            lambda_ssim: 0.0,
            lambda_vol: 0.5,
        };
        let a = total_loss(&pred, &gt, 12, 12, &scales, &w1).unwrap();
        let b = total_loss(&pred, &gt, 12, 12, &scales, &w2).unwrap();
        assert_eq!(w2.lambda_vol * b.vol, 2.0 * (w1.lambda_vol * a.vol));
        for (ga, gb) in a.scale_grads.iter().zip(&b.scale_grads) {
            assert_eq!(ga.map(|v| 2.0 * v), *gb);
        }
    }

    #[test]
    fn negative_weight_is_config_error() {
        let w = LossWeights {
            lambda_ssim: -0.1,
            lambda_vol: 0.0,
        };
        assert!(matches!(w.validate(), Err(GtmError::Config(_))));
    }
}
