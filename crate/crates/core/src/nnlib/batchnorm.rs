//! Batch normalization over the rows of a batch, one statistic per column.
//!
//! Training mode standardizes with the biased batch variance and folds the
//! batch statistics into an exponential moving average. Eval mode uses only
//! the moving average. The first training batch seeds the average directly.

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::ops::{shape_of, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Matrix,
    pub var: Matrix,
    /// Number of training batches folded in so far.
    pub batches: u64,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: Matrix::zeros((1, dim)),
            var: Matrix::ones((1, dim)),
            batches: 0,
        }
    }

    pub fn is_populated(&self) -> bool {
        self.batches > 0
    }
}

/// Values kept from the forward pass for [`batch_norm_backward`].
#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Matrix,
    inv_std: Matrix,
    gamma: Matrix,
}

fn check_params(op: &'static str, x: &Matrix, gamma: &Matrix, beta: &Matrix) -> Result<()> {
    let d = x.ncols();
    for p in [gamma, beta] {
        if p.nrows() != 1 || p.ncols() != d {
            return Err(Error::dim(op, format!("1x{d}"), shape_of(p)));
        }
    }
    Ok(())
}

pub fn batch_norm_train(
    x: &Matrix,
    gamma: &Matrix,
    beta: &Matrix,
    eps: f64,
    momentum: f64,
    stats: &mut RunningStats,
) -> Result<(Matrix, BnCache)> {
    check_params("batch_norm_train", x, gamma, beta)?;
    let b = x.nrows();
    if b < 2 {
        return Err(Error::Input(format!(
            "batch norm in training mode needs at least 2 rows, got {b}"
        )));
    }
    if stats.mean.ncols() != x.ncols() {
        return Err(Error::dim(
            "batch_norm_train",
            format!("running stats of width {}", x.ncols()),
            stats.mean.ncols(),
        ));
    }

    let mean = x.mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
    let centered = x - &mean;
    let var = centered
        .mapv(|v| v * v)
        .mean_axis(Axis(0))
        .unwrap()
        .insert_axis(Axis(0));
    let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
    let xhat = &centered * &inv_std;
    let y = &xhat * gamma + beta;

    if stats.is_populated() {
        stats.mean = &stats.mean * momentum + &mean * (1.0 - momentum);
        stats.var = &stats.var * momentum + &var * (1.0 - momentum);
    } else {
        stats.mean = mean;
        stats.var = var;
    }
    stats.batches += 1;

    Ok((
        y,
        BnCache {
            xhat,
            inv_std,
            gamma: gamma.clone(),
        },
    ))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward(cache: &BnCache, dy: &Matrix) -> (Matrix, Matrix, Matrix) {
    let b = dy.nrows() as f64;
    let dbeta = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dgamma = (dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * &cache.gamma;
    let sum_dxhat = dxhat.sum_axis(Axis(0)).insert_axis(Axis(0));
    let sum_dxhat_xhat = (&dxhat * &cache.xhat)
        .sum_axis(Axis(0))
        .insert_axis(Axis(0));
    let dx = (&dxhat * b - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat) * &cache.inv_std / b;
    (dx, dgamma, dbeta)
}

pub fn batch_norm_eval(
    x: &Matrix,
    gamma: &Matrix,
    beta: &Matrix,
    eps: f64,
    stats: &RunningStats,
) -> Result<Matrix> {
    check_params("batch_norm_eval", x, gamma, beta)?;
    if !stats.is_populated() {
        return Err(Error::State(
            "batch norm running statistics are empty; train on at least one batch first".into(),
        ));
    }
    if stats.mean.ncols() != x.ncols() {
        return Err(Error::dim(
            "batch_norm_eval",
            format!("running stats of width {}", x.ncols()),
            stats.mean.ncols(),
        ));
    }
    let inv_std = stats.var.mapv(|v| 1.0 / (v + eps).sqrt());
    Ok((x - &stats.mean) * &inv_std * gamma + beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const EPS: f64 = 1e-5;

    #[test]
    fn constant_column_maps_to_beta() {
        let x = array![[2.0, 1.0], [2.0, 3.0], [2.0, 5.0]];
        let gamma = Matrix::ones((1, 2));
        let beta = array![[5.0, 0.0]];
        let mut stats = RunningStats::new(2);
        let (y, _) = batch_norm_train(&x, &gamma, &beta, EPS, 0.9, &mut stats).unwrap();
        for i in 0..3 {
            assert_eq!(y[[i, 0]], 5.0);
        }
        assert!(super::super::ops::all_finite(&y));
    }

    #[test]
    fn standardizes_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(3.0, 2.5).unwrap();
        let x = Matrix::from_shape_fn((16, 4), |_| normal.sample(&mut rng));
        let mut stats = RunningStats::new(4);
        let (y, _) = batch_norm_train(
            &x,
            &Matrix::ones((1, 4)),
            &Matrix::zeros((1, 4)),
            EPS,
            0.9,
            &mut stats,
        )
        .unwrap();
        for (col, raw) in y.columns().into_iter().zip(x.columns()) {
            let mean = col.mean().unwrap();
            let var = col.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
            let raw_mean = raw.mean().unwrap();
            let raw_var = raw.mapv(|v| (v - raw_mean) * (v - raw_mean)).mean().unwrap();
            assert!(mean.abs() < 1e-8, "mean {mean}");
            // eps leaves exactly var / (var + eps) behind
            assert!((var - raw_var / (raw_var + EPS)).abs() < 1e-12);
            if raw_var > EPS * 1e6 {
                assert!((var - 1.0).abs() < 1e-6, "var {var}");
            }
        }
    }

    #[test]
    fn single_row_rejected_in_training() {
        let mut stats = RunningStats::new(2);
        let err = batch_norm_train(
            &Matrix::zeros((1, 2)),
            &Matrix::ones((1, 2)),
            &Matrix::zeros((1, 2)),
            EPS,
            0.9,
            &mut stats,
        );
        assert!(matches!(err, Err(Error::Input(_))));
    }

    #[test]
    fn eval_needs_populated_stats() {
        let stats = RunningStats::new(2);
        let err = batch_norm_eval(
            &Matrix::zeros((3, 2)),
            &Matrix::ones((1, 2)),
            &Matrix::zeros((1, 2)),
            EPS,
            &stats,
        );
        assert!(matches!(err, Err(Error::State(_))));
    }

    #[test]
    fn eval_at_running_mean_is_zero_and_gamma_zero_gives_beta() {
        let mut stats = RunningStats::new(2);
        let x = array![[1.0, 4.0], [3.0, 8.0]];
        batch_norm_train(
            &x,
            &Matrix::ones((1, 2)),
            &Matrix::zeros((1, 2)),
            EPS,
            0.9,
            &mut stats,
        )
        .unwrap();
        let at_mean = stats.mean.clone();
        let y = batch_norm_eval(
            &at_mean,
            &Matrix::ones((1, 2)),
            &Matrix::zeros((1, 2)),
            EPS,
            &stats,
        )
        .unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-15));

        let beta = array![[0.25, -7.0]];
        let y = batch_norm_eval(&x, &Matrix::zeros((1, 2)), &beta, EPS, &stats).unwrap();
        assert_eq!(y.row(0), beta.row(0));
        assert_eq!(y.row(1), beta.row(0));
    }

    #[test]
    fn eval_output_centered_after_many_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dists = [Normal::new(-4.0, 1.0).unwrap(), Normal::new(10.0, 3.0).unwrap()];
        let draw = |rng: &mut ChaCha8Rng, n: usize| {
            Matrix::from_shape_fn((n, 2), |(_, j)| dists[j].sample(rng))
        };
        let gamma = Matrix::ones((1, 2));
        let beta = Matrix::zeros((1, 2));
        let mut stats = RunningStats::new(2);
        for _ in 0..200 {
            let x = draw(&mut rng, 32);
            batch_norm_train(&x, &gamma, &beta, EPS, 0.9, &mut stats).unwrap();
        }
        let probe = draw(&mut rng, 2000);
        let y = batch_norm_eval(&probe, &gamma, &beta, EPS, &stats).unwrap();
        for col in y.columns() {
            assert!(col.mean().unwrap().abs() < 0.1);
        }
    }
}
