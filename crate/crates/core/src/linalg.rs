//! Dimension-aware helpers on 3x3 tensors.
//!
//! Every tensor is stored as a `Matrix3`/`Vector3`. For `d == 2` the third row
//! and column are inactive and stay zero, so `identity(2)` is `diag(1, 1, 0)`.

use nalgebra::{Matrix3, Vector3};

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

pub fn identity(d: usize) -> Mat3 {
    let mut m = Mat3::zeros();
    for i in 0..d {
        m[(i, i)] = 1.0;
    }
    m
}

/// Completes a `d`-dimensional tensor with ones on the inactive diagonal.
fn complete(d: usize, a: &Mat3) -> Mat3 {
    let mut m = *a;
    for i in d..3 {
        m[(i, i)] = 1.0;
    }
    m
}

pub fn det(d: usize, a: &Mat3) -> f64 {
    match d {
        1 => a[(0, 0)],
        2 => a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)],
        _ => a.determinant(),
    }
}

/// Inverse of the active `d x d` block; `None` when singular.
pub fn inverse(d: usize, a: &Mat3) -> Option<Mat3> {
    let inv = complete(d, a).try_inverse()?;
    let mut out = inv;
    for i in d..3 {
        out[(i, i)] = 0.0;
    }
    Some(out)
}

pub fn to_vec3(x: &[f64]) -> Vec3 {
    let mut v = Vec3::zeros();
    for (k, xi) in x.iter().take(3).enumerate() {
        v[k] = *xi;
    }
    v
}

pub fn to_array(v: &Vec3) -> [f64; 3] {
    [v[0], v[1], v[2]]
}

/// Scalar cross product in 2D or the norm of the cross product in 3D.
pub fn cross_norm(d: usize, a: &Vec3, b: &Vec3) -> f64 {
    if d == 2 {
        (a[0] * b[1] - a[1] * b[0]).abs()
    } else {
        a.cross(b).norm()
    }
}

/// Symmetric eigenvalues sorted by decreasing magnitude.
pub fn sym_eigenvalues(a: &Mat3) -> [f64; 3] {
    let sym = 0.5 * (a + a.transpose());
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| y.abs().total_cmp(&x.abs()));
    [ev[0], ev[1], ev[2]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planar_inverse_keeps_inactive_block_zero() {
        let a = Mat3::new(2.0, 1.0, 0.0, 0.5, 3.0, 0.0, 0.0, 0.0, 0.0);
        let inv = inverse(2, &a).unwrap();
        let prod = a * inv;
        assert!((prod - identity(2)).norm() < 1e-14);
        assert!((det(2, &a) - 5.5).abs() < 1e-14);
    }

    #[test]
    fn singular_block_is_detected() {
        let a = Mat3::new(1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 0.0);
        assert!(inverse(2, &a).is_none());
    }
}
