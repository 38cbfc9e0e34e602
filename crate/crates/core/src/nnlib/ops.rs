//! Stateless dense-network primitives: affine maps, activations and the
//! softmax cross-entropy loss, each with its analytic backward pass.

use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};

/// Row-major 2-D array of `f64`; activations, weights and gradients all use it.
pub type Matrix = Array2<f64>;

/// Lower clamp applied to log-probabilities before they enter the loss.
pub const LOG_CLAMP: f64 = -700.0;

pub(crate) fn shape_of(m: &Matrix) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// `y = x W + b`, with `b` (1 x d_out) broadcast over rows.
pub fn affine_forward(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    if x.ncols() != w.nrows() {
        return Err(Error::dim(
            "affine_forward",
            format!("x with {} columns", w.nrows()),
            shape_of(x),
        ));
    }
    if b.nrows() != 1 || b.ncols() != w.ncols() {
        return Err(Error::dim(
            "affine_forward",
            format!("bias 1x{}", w.ncols()),
            shape_of(b),
        ));
    }
    Ok(x.dot(w) + b)
}

#[derive(Debug, Clone)]
pub struct AffineGrads {
    pub dx: Matrix,
    pub dw: Matrix,
    pub db: Matrix,
}

pub fn affine_backward(x: &Matrix, w: &Matrix, dy: &Matrix) -> Result<AffineGrads> {
    if dy.nrows() != x.nrows() || dy.ncols() != w.ncols() || x.ncols() != w.nrows() {
        return Err(Error::dim(
            "affine_backward",
            format!("dy {}x{}", x.nrows(), w.ncols()),
            shape_of(dy),
        ));
    }
    Ok(AffineGrads {
        dx: dy.dot(&w.t()),
        dw: x.t().dot(dy),
        db: dy.sum_axis(Axis(0)).insert_axis(Axis(0)),
    })
}

fn stable_sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Matrix) -> Matrix {
    x.mapv(stable_sigmoid)
}

/// Backward through a sigmoid given its output `y`.
pub fn sigmoid_backward(y: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(y).for_each(|d, &s| *d *= s * (1.0 - s));
    dx
}

pub fn relu(x: &Matrix) -> Matrix {
    x.mapv(|v| v.max(0.0))
}

/// Backward through a ReLU given its input `x`. The subgradient at 0 is 0.
pub fn relu_backward(x: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = dy.clone();
    Zip::from(&mut dx)
        .and(x)
        .for_each(|d, &v| if v <= 0.0 { *d = 0.0 });
    dx
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean softmax cross-entropy over the rows of `logits` together with its
/// gradient `(softmax - onehot) / B`.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (b, k) = logits.dim();
    if k < 2 {
        return Err(Error::Input(format!("need at least 2 classes, got {k}")));
    }
    if labels.len() != b {
        return Err(Error::dim(
            "softmax_cross_entropy",
            format!("{b} labels"),
            labels.len(),
        ));
    }
    if b == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Input(format!("label {bad} out of range for {k} classes")));
    }

    let mut grad = Matrix::zeros((b, k));
    let mut loss = 0.0;
    for (i, (row, &y)) in logits.rows().into_iter().zip(labels).enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let log_sum = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        let log_p = (row[y] - max - log_sum).max(LOG_CLAMP);
        loss -= log_p;
        for j in 0..k {
            grad[[i, j]] = (row[j] - max - log_sum).exp();
        }
        grad[[i, y]] -= 1.0;
    }
    let scale = 1.0 / b as f64;
    grad.mapv_inplace(|g| g * scale);
    Ok((loss * scale, grad))
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn affine_identity_and_bias() {
        let x = array![[1.0, 2.0]];
        let w = Matrix::eye(2);
        let y = affine_forward(&x, &w, &array![[0.0, 0.0]]).unwrap();
        assert_eq!(y, array![[1.0, 2.0]]);

        let w = array![[0.3, -2.0], [4.0, 1.5]];
        let y = affine_forward(&array![[0.0, 0.0]], &w, &array![[3.0, -1.0]]).unwrap();
        assert_eq!(y, array![[3.0, -1.0]]);
    }

    #[test]
    fn affine_shape_errors() {
        let x = Matrix::zeros((2, 3));
        let w = Matrix::zeros((2, 2));
        let b = Matrix::zeros((1, 2));
        assert!(matches!(
            affine_forward(&x, &w, &b),
            Err(Error::Dimension { .. })
        ));
        let w = Matrix::zeros((3, 2));
        let bad_b = Matrix::zeros((1, 3));
        assert!(affine_forward(&x, &w, &bad_b).is_err());
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Matrix::zeros((3, 10));
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((loss - std::f64::consts::LN_10).abs() < 1e-6);
    }

    #[test]
    fn confident_correct_has_no_loss() {
        let logits = array![[1000.0, 0.0, 0.0]];
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn confident_wrong_loss_is_clamped() {
        let logits = array![[1e6, 0.0]];
        let (loss, grad) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert_eq!(loss, -LOG_CLAMP);
        assert!(all_finite(&grad));
    }

    #[test]
    fn label_out_of_range() {
        let logits = Matrix::zeros((1, 3));
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::Input(_))
        ));
        let one_class = Matrix::zeros((1, 1));
        assert!(softmax_cross_entropy(&one_class, &[0]).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = array![[1.0, 2.0, 3.0], [-800.0, 0.0, 800.0], [5.0, 5.0, 5.0]];
        let p = softmax(&logits);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        let m = array![[0.5, 0.5], [0.2, 0.8], [1.0, 1.0]];
        assert_eq!(argmax_rows(&m), vec![0, 1, 0]);
    }

    #[test]
    fn sigmoid_extremes_are_finite() {
        let y = sigmoid(&array![[-1000.0, 0.0, 1000.0]]);
        assert_eq!(y, array![[0.0, 0.5, 1.0]]);
    }
}
