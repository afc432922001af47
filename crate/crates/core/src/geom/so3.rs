//! Small SO(3) helpers shared by the rotation solver, the initializer and
//! the evaluation code.

use nalgebra::{Matrix3, Rotation3, Vector3};

/// Skew-symmetric matrix `[w]x` such that `[w]x v = w x v`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Exponential map of `so(3)`.
pub fn exp(w: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*w).into_inner()
}

/// Coordinates `g` of the linear functional `w -> <a, [w]x>`, i.e. `<a, [w]x> = g . w`.
pub fn skew_coordinates(a: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        a[(2, 1)] - a[(1, 2)],
        a[(0, 2)] - a[(2, 0)],
        a[(1, 0)] - a[(0, 1)],
    )
}

/// Closest rotation in Frobenius norm (polar factor with a det = +1 guard).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Largest deviation of `RᵀR` from the identity, and `|det R - 1|`.
pub fn rotation_defect(r: &Matrix3<f64>) -> f64 {
    let orth = (r.transpose() * r - Matrix3::identity()).abs().max();
    orth.max((r.determinant() - 1.0).abs())
}

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    r.iter().all(|v| v.is_finite()) && rotation_defect(r) <= tol
}
