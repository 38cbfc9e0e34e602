//! Inverted dropout: survivors are scaled at train time so eval is the identity.

use rand::Rng;

use super::ops::Matrix;
use crate::error::{Error, Result};

/// Returns `(y, mask)` with `y = x * mask` and every mask entry either 0 or
/// `1 / (1 - rate)`.
pub fn dropout_train<R: Rng + ?Sized>(x: &Matrix, rate: f64, rng: &mut R) -> Result<(Matrix, Matrix)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if rate == 0.0 {
        return Ok((x.clone(), Matrix::ones(x.raw_dim())));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = Matrix::from_shape_simple_fn(x.raw_dim(), || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    });
    Ok((x * &mask, mask))
}
