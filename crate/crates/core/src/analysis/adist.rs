use ndarray::{concatenate, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnlib::{
    argmax_rows, softmax_cross_entropy, LayerSpec, Matrix, OptimizerKind, OptimizerState, Stack,
};

/// Settings of the logistic-regression domain classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdistConfig {
    pub repeats: usize,
    pub iters: usize,
    pub lr: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for AdistConfig {
    fn default() -> Self {
        Self {
            repeats: 5,
            iters: 300,
            lr: 0.5,
            l2: 1e-3,
            seed: 0,
        }
    }
}

/// `2(1 − 2ε)` clamped to `[0, 2]`, with `ε` the held-out error of a
/// linear source-vs-target classifier.
pub fn a_distance(feats_s: &Matrix, feats_t: &Matrix, heldout_fraction: f64) -> Result<f64> {
    a_distance_with(feats_s, feats_t, heldout_fraction, &AdistConfig::default())
}

pub fn a_distance_with(feats_s: &Matrix, feats_t: &Matrix, heldout_fraction: f64, cfg: &AdistConfig) -> Result<f64> {
    if !(heldout_fraction > 0.0 && heldout_fraction < 1.0) {
        return Err(Error::Config(format!(
            "heldout_fraction must be in (0, 1), got {heldout_fraction}"
        )));
    }
    if cfg.repeats == 0 || !(cfg.lr > 0.0) || !(cfg.l2 >= 0.0) {
        return Err(Error::Config("invalid 𝒜-distance classifier settings".into()));
    }
    if feats_s.ncols() != feats_t.ncols() {
        return Err(Error::dim("a_distance", feats_s.ncols(), feats_t.ncols()));
    }
    for (x, name) in [(feats_s, "source"), (feats_t, "target")] {
        let held = split_sizes(x.nrows(), heldout_fraction);
        if held < 2 || x.nrows() - held < 2 {
            return Err(Error::Input(format!(
                "{name} features: need at least 2 samples in each split, have {} rows",
                x.nrows()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut total = 0.0;
    for _ in 0..cfg.repeats {
        total += heldout_error(feats_s, feats_t, heldout_fraction, cfg, &mut rng)?;
    }
    let eps = total / cfg.repeats as f64;
    Ok(proxy_distance(eps))
}

fn proxy_distance(eps: f64) -> f64 {
    (2.0 * (1.0 - 2.0 * eps)).clamp(0.0, 2.0)
}

fn split_sizes(n: usize, frac: f64) -> usize {
    (n as f64 * frac).round() as usize
}

fn split(x: &Matrix, frac: f64, rng: &mut ChaCha8Rng) -> (Matrix, Matrix) {
    let mut idx: Vec<usize> = (0..x.nrows()).collect();
    idx.shuffle(rng);
    let held = split_sizes(x.nrows(), frac);
    (x.select(Axis(0), &idx[held..]), x.select(Axis(0), &idx[..held]))
}

fn stack_with_labels(s: &Matrix, t: &Matrix) -> Result<(Matrix, Vec<usize>)> {
    let x = concatenate(Axis(0), &[s.view(), t.view()]).map_err(|e| Error::Input(e.to_string()))?;
    let y = std::iter::repeat_n(0, s.nrows()).chain(std::iter::repeat_n(1, t.nrows())).collect();
    Ok((x, y))
}

fn heldout_error(s: &Matrix, t: &Matrix, frac: f64, cfg: &AdistConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (s_train, s_test) = split(s, frac, rng);
    let (t_train, t_test) = split(t, frac, rng);
    let (mut x_train, y_train) = stack_with_labels(&s_train, &t_train)?;
    let (mut x_test, y_test) = stack_with_labels(&s_test, &t_test)?;

    let mean = x_train.mean_axis(Axis(0)).expect("non-empty train split");
    let std = x_train.std_axis(Axis(0), 0.0).mapv(|v| if v > 1e-12 { v } else { 1.0 });
    x_train = (&x_train - &mean) / &std;
    x_test = (&x_test - &mean) / &std;

    let d = x_train.ncols();
    let mut clf = Stack::new(&[LayerSpec::affine(d, 2)], rng)?;
    let mut opt = OptimizerState::new(OptimizerKind::MomentumSgd { momentum: 0.9 }, cfg.lr, &clf.params())?;
    for _ in 0..cfg.iters {
        let (logits, cache) = clf.forward_train(&x_train, rng)?;
        let (_, dlogits) = softmax_cross_entropy(&logits, &y_train)?;
        let (_, mut grads) = clf.backward(&cache, &dlogits)?;
        grads[0].scaled_add(cfg.l2, clf.params()[0]);
        opt.step(&mut clf.params_mut(), &grads)?;
    }
    let pred = argmax_rows(&clf.forward_eval(&x_test)?);
    let wrong = pred.iter().zip(&y_test).filter(|(p, y)| p != y).count();
    Ok(wrong as f64 / y_test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, d: usize, center: f64, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_shape_simple_fn((n, d), || center + rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn formula_arithmetic() {
        assert!((proxy_distance(0.1) - 1.6).abs() < 1e-12);
        assert_eq!(proxy_distance(0.0), 2.0);
        assert_eq!(proxy_distance(0.5), 0.0);
        assert_eq!(proxy_distance(0.7), 0.0);
    }

    #[test]
    fn identical_domains_are_close() {
        let x = gaussian(400, 3, 0.0, 1);
        let d = a_distance(&x, &x, 0.5).unwrap();
        assert!(d < 0.2, "d = {d}");
    }

    #[test]
    fn separated_domains_are_far() {
        let s = gaussian(300, 2, -10.0, 2);
        let t = gaussian(300, 2, 10.0, 3);
        let d = a_distance(&s, &t, 0.5).unwrap();
        assert!(d > 1.9, "d = {d}");
    }

    #[test]
    fn tiny_or_bad_input_rejected() {
        let s = gaussian(3, 2, 0.0, 4);
        let t = gaussian(50, 2, 0.0, 5);
        assert!(matches!(a_distance(&s, &t, 0.5), Err(Error::Input(_))));
        assert!(matches!(a_distance(&t, &t, 1.0), Err(Error::Config(_))));
        assert!(a_distance(&t, &gaussian(50, 3, 0.0, 6), 0.5).is_err());
    }

    #[test]
    fn seeded_result_is_reproducible() {
        let s = gaussian(100, 2, 0.0, 7);
        let t = gaussian(100, 2, 0.7, 8);
        assert_eq!(a_distance(&s, &t, 0.5).unwrap(), a_distance(&s, &t, 0.5).unwrap());
    }
}
