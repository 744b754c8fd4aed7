//! Quaternion and 3×3 matrix helpers shared by the decoder and rasterizer.

use crate::error::{GtmError, Result};
use crate::real::Real;

pub type Mat3<T> = [[T; 3]; 3];

/// Rotation matrix of a `(w, x, y, z)` quaternion. The quaternion is used
/// as given, so callers normalize first when they need a proper rotation.
pub fn quat_to_rotmat<T: Real>(q: [T; 4]) -> Mat3<T> {
    let [w, x, y, z] = q;
    let one = T::one();
    let two = T::lit(2.0);
    [
        [
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        ],
    ]
}

/// Pulls a gradient on the rotation matrix back onto the quaternion
/// components of [`quat_to_rotmat`].
pub fn quat_to_rotmat_vjp<T: Real>(q: [T; 4], g: &Mat3<T>) -> [T; 4] {
    let [w, x, y, z] = q;
    let two = T::lit(2.0);
    let gw = -z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1];
    let gx = y * g[0][1] + z * g[0][2] + y * g[1][0] - two * x * g[1][1] - w * g[1][2] + z * g[2][0] + w * g[2][1]
        - two * x * g[2][2];
    let gy = -two * y * g[0][0] + x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0] + z * g[2][1]
        - two * y * g[2][2];
    let gz = -two * z * g[0][0] - w * g[0][1] + x * g[0][2] + w * g[1][0] - two * z * g[1][1]
        + y * g[1][2]
        + x * g[2][0]
        + y * g[2][1];
    [two * gw, two * gx, two * gy, two * gz]
}

pub fn normalize_quat<T: Real>(q: [T; 4]) -> Result<[T; 4]> {
    let n = q.iter().map(|&v| v * v).sum::<T>().sqrt();
    if !(n > T::zero()) || !n.is_finite() {
        return Err(GtmError::Numerical("quaternion normalization (zero norm)".into()));
    }
    Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

/// Unit `(w, x, y, z)` quaternion of a rotation matrix, with `w ≥ 0`.
pub fn rotmat_to_quat(r: &Mat3<f64>) -> [f64; 4] {
    let tr = r[0][0] + r[1][1] + r[2][2];
    let q = if tr > 0.0 {
        let s = 2.0 * (tr + 1.0).sqrt();
        [
            0.25 * s,
            (r[2][1] - r[1][2]) / s,
            (r[0][2] - r[2][0]) / s,
            (r[1][0] - r[0][1]) / s,
        ]
    } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
        let s = 2.0 * (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt();
        [
            (r[2][1] - r[1][2]) / s,
            0.25 * s,
            (r[0][1] + r[1][0]) / s,
            (r[0][2] + r[2][0]) / s,
        ]
    } else if r[1][1] > r[2][2] {
        let s = 2.0 * (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt();
        [
            (r[0][2] - r[2][0]) / s,
            (r[0][1] + r[1][0]) / s,
            0.25 * s,
            (r[1][2] + r[2][1]) / s,
        ]
    } else {
        let s = 2.0 * (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt();
        [
            (r[1][0] - r[0][1]) / s,
            (r[0][2] + r[2][0]) / s,
            (r[1][2] + r[2][1]) / s,
            0.25 * s,
        ]
    };
    let sign = if q[0] < 0.0 { -1.0 } else { 1.0 };
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt() * sign;
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// `Σ = R S Sᵀ Rᵀ` for a scale vector and a rotation quaternion.
pub fn build_covariance<T: Real>(scale: [T; 3], rotation: [T; 4]) -> Result<Mat3<T>> {
    let q = normalize_quat(rotation)?;
    Ok(covariance_from_rotmat(scale, &quat_to_rotmat(q)))
}

pub(crate) fn covariance_from_rotmat<T: Real>(scale: [T; 3], r: &Mat3<T>) -> Mat3<T> {
    let d = [scale[0] * scale[0], scale[1] * scale[1], scale[2] * scale[2]];
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let v = r[i][0] * d[0] * r[j][0] + r[i][1] * d[1] * r[j][1] + r[i][2] * d[2] * r[j][2];
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

pub fn mat3_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn mat3_transpose<T: Real>(a: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn mat3_vec<T: Real>(a: &Mat3<T>, v: [T; 3]) -> [T; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub fn mat3_det<T: Real>(a: &Mat3<T>) -> T {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

pub(crate) fn mat3_cast<T: Real>(a: &Mat3<f64>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = T::lit(a[i][j]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &Mat3<f64>, b: &Mat3<f64>, tol: f64) -> bool {
        (0..3).all(|i| (0..3).all(|j| (a[i][j] - b[i][j]).abs() <= tol))
    }

    #[test]
    fn identity_rotation_unit_scale() {
        let s = build_covariance([1.0, 1.0, 1.0], [1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(close(&s, &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], 0.0));
    }

    #[test]
    fn identity_rotation_diagonal_scale() {
        let s = build_covariance([1.0, 2.0, 3.0], [1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(close(&s, &[[1.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 9.0]], 1e-12));
    }

    #[test]
    fn quarter_turn_about_z_swaps_axes() {
        // R = [[0,-1,0],[1,0,0],[0,0,1]]; R diag(1,4,1) Rᵀ = diag(4,1,1)
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = build_covariance([1.0, 2.0, 1.0], [h, 0.0, 0.0, h]).unwrap();
        assert!(close(&s, &[[4.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], 1e-12));
    }

    #[test]
    fn zero_quaternion_is_numerical_error() {
        let r = build_covariance([1.0, 1.0, 1.0], [0.0f64; 4]);
        assert!(matches!(r, Err(GtmError::Numerical(_))));
    }

    #[test]
    fn rotmat_vjp_matches_central_differences() {
        let q = [0.7, -0.2, 0.4, 0.3];
        let g = [[0.3, -1.0, 0.5], [0.2, 0.9, -0.4], [1.1, 0.6, -0.8]];
        let f = |q: [f64; 4]| {
            let r = quat_to_rotmat(q);
            (0..3)
                .map(|i| (0..3).map(|j| r[i][j] * g[i][j]).sum::<f64>())
                .sum::<f64>()
        };
        let an = quat_to_rotmat_vjp(q, &g);
        for k in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[k] += 1e-6;
            qm[k] -= 1e-6;
            let fd = (f(qp) - f(qm)) / 2e-6;
            assert!((fd - an[k]).abs() < 1e-8, "component {k}: {fd} vs {}", an[k]);
        }
    }

    proptest! {
        #[test]
        fn rotmat_quat_round_trip(q in prop::array::uniform4(-1.0f64..1.0)) {
            prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-2);
            let q = normalize_quat(q).unwrap();
            let back = rotmat_to_quat(&quat_to_rotmat(q));
            let sign = if q[0] < 0.0 { -1.0 } else { 1.0 };
            for k in 0..4 {
                prop_assert!((back[k] - sign * q[k]).abs() < 1e-9, "{q:?} -> {back:?}");
            }
        }

        #[test]
        fn covariance_is_symmetric_psd_with_scale_determinant(
            s in prop::array::uniform3(0.05f64..3.0),
            q in prop::array::uniform4(-1.0f64..1.0),
            x in prop::array::uniform3(-5.0f64..5.0),
        ) {
            prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            let c = build_covariance(s, q).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((c[i][j] - c[j][i]).abs() <= 1e-9);
                }
            }
            let cx = mat3_vec(&c, x);
            let quad = x[0] * cx[0] + x[1] * cx[1] + x[2] * cx[2];
            prop_assert!(quad >= -1e-9);
            let det = mat3_det(&c);
            let expected = (s[0] * s[1] * s[2]).powi(2);
            prop_assert!((det - expected).abs() <= 1e-9 * expected.max(1.0));
            // trace equals the eigenvalue sum
            let tr = c[0][0] + c[1][1] + c[2][2];
            prop_assert!((tr - (s[0] * s[0] + s[1] * s[1] + s[2] * s[2])).abs() < 1e-9 * tr.max(1.0));
        }
    }
}
