//! Central finite differences, used as the oracle for every analytic gradient.

use super::ops::Matrix;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every entry `i` of `x`.
pub fn finite_difference_gradient<F>(mut f: F, x: &Matrix, h: f64) -> Matrix
where
    F: FnMut(&Matrix) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.raw_dim());
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[r, c]];
        probe[[r, c]] = orig + h;
        let up = f(&probe);
        probe[[r, c]] = orig - h;
        let down = f(&probe);
        probe[[r, c]] = orig;
        grad[[r, c]] = (up - down) / (2.0 * h);
    }
    grad
}

/// Below this norm a relative comparison is meaningless: a central
/// difference at `h = 1e-5` cannot resolve gradients much smaller than
/// `1e-10`, so tiny gradients are compared in absolute terms instead.
pub const NORM_FLOOR: f64 = 1e-6;

/// `||a - b|| / max(||a||, ||b||, NORM_FLOOR)` in the Frobenius norm.
pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.dim(), b.dim());
    let norm = |m: &Matrix| m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = (a - b).iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm(a).max(norm(b)).max(NORM_FLOOR)
}
