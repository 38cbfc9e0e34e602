//! Momentum SGD and Adagrad over a flat list of parameter matrices.

use serde::{Deserialize, Serialize};

use super::ops::{shape_of, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    MomentumSgd { momentum: f64 },
    Adagrad { eps: f64 },
}

impl OptimizerKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OptimizerKind::MomentumSgd { momentum } if !(0.0..1.0).contains(&momentum) => Err(
                Error::Config(format!("momentum must be in [0, 1), got {momentum}")),
            ),
            OptimizerKind::Adagrad { eps } if !(eps >= 0.0) => {
                Err(Error::Config(format!("adagrad eps must be >= 0, got {eps}")))
            }
            _ => Ok(()),
        }
    }
}

/// Optimizer plus its per-parameter slot (velocity for momentum SGD,
/// squared-gradient accumulator for Adagrad).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub slots: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, params: &[&Matrix]) -> Result<Self> {
        kind.validate()?;
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Self {
            kind,
            lr,
            slots: params.iter().map(|p| Matrix::zeros(p.raw_dim())).collect(),
        })
    }

    fn check(&self, params: &[&mut Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != self.slots.len() || grads.len() != self.slots.len() {
            return Err(Error::dim(
                "optimizer step",
                format!("{} parameter tensors", self.slots.len()),
                format!("{} params / {} grads", params.len(), grads.len()),
            ));
        }
        for ((p, g), s) in params.iter().zip(grads).zip(&self.slots) {
            if p.dim() != g.dim() || p.dim() != s.dim() {
                return Err(Error::dim("optimizer step", shape_of(s), format!("{} / {}", shape_of(p), shape_of(g))));
            }
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        match self.kind {
            OptimizerKind::MomentumSgd { .. } => self.momentum_sgd_step(params, grads),
            OptimizerKind::Adagrad { .. } => self.adagrad_step(params, grads),
        }
    }

    /// `v <- mu v - lr g; p <- p + v`.
    pub fn momentum_sgd_step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        let OptimizerKind::MomentumSgd { momentum } = self.kind else {
            return Err(Error::Config("momentum_sgd_step on a non-momentum optimizer".into()));
        };
        self.check(params, grads)?;
        let lr = self.lr;
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.slots.iter_mut()) {
            v.zip_mut_with(g, |v, &g| *v = momentum * *v - lr * g);
            **p += &*v;
        }
        Ok(())
    }

    /// `a <- a + g^2; p <- p - lr g / (sqrt(a) + eps)`.
    pub fn adagrad_step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        let OptimizerKind::Adagrad { eps } = self.kind else {
            return Err(Error::Config("adagrad_step on a non-adagrad optimizer".into()));
        };
        self.check(params, grads)?;
        let lr = self.lr;
        for ((p, g), acc) in params.iter_mut().zip(grads).zip(self.slots.iter_mut()) {
            acc.zip_mut_with(g, |a, &g| *a += g * g);
            ndarray::Zip::from(&mut **p).and(g).and(&*acc).for_each(|p, &g, &a| {
                if g != 0.0 {
                    *p -= lr * g / (a.sqrt() + eps);
                }
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar(v: f64) -> Matrix {
        array![[v]]
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let mut p = array![[1.0, -2.0]];
        let mut opt = OptimizerState::new(OptimizerKind::MomentumSgd { momentum: 0.0 }, 0.5, &[&p]).unwrap();
        opt.step(&mut [&mut p], &[array![[2.0, 4.0]]]).unwrap();
        assert_eq!(p, array![[0.0, -4.0]]);
    }

    #[test]
    fn momentum_two_steps_by_hand() {
        let mut p = scalar(1.0);
        let mut opt = OptimizerState::new(OptimizerKind::MomentumSgd { momentum: 0.9 }, 0.1, &[&p]).unwrap();
        opt.step(&mut [&mut p], &[scalar(1.0)]).unwrap();
        assert!((opt.slots[0][[0, 0]] + 0.1).abs() < 1e-15);
        assert!((p[[0, 0]] - 0.9).abs() < 1e-15);
        opt.step(&mut [&mut p], &[scalar(1.0)]).unwrap();
        assert!((opt.slots[0][[0, 0]] + 0.19).abs() < 1e-15);
        assert!((p[[0, 0]] - 0.71).abs() < 1e-15);
    }

    #[test]
    fn momentum_coasts_geometrically() {
        let mu = 0.9;
        let mut p = scalar(0.0);
        let mut opt = OptimizerState::new(OptimizerKind::MomentumSgd { momentum: mu }, 0.1, &[&p]).unwrap();
        opt.step(&mut [&mut p], &[scalar(1.0)]).unwrap();
        let v1 = opt.slots[0][[0, 0]];
        let p1 = p[[0, 0]];
        for _ in 0..2000 {
            opt.step(&mut [&mut p], &[scalar(0.0)]).unwrap();
        }
        let drift = p[[0, 0]] - p1;
        assert!((drift - v1 * mu / (1.0 - mu)).abs() < 1e-12);
    }

    #[test]
    fn adagrad_zero_grad_is_noop() {
        let mut p = array![[0.3, 0.7]];
        let mut opt = OptimizerState::new(OptimizerKind::Adagrad { eps: 1e-8 }, 0.1, &[&p]).unwrap();
        opt.step(&mut [&mut p], &[Matrix::zeros((1, 2))]).unwrap();
        assert_eq!(p, array![[0.3, 0.7]]);
        assert_eq!(opt.slots[0], Matrix::zeros((1, 2)));
    }

    #[test]
    fn adagrad_first_step_is_lr_times_sign() {
        let mut p = scalar(1.0);
        let mut opt = OptimizerState::new(OptimizerKind::Adagrad { eps: 0.0 }, 0.1, &[&p]).unwrap();
        opt.step(&mut [&mut p], &[scalar(2.0)]).unwrap();
        assert!((p[[0, 0]] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn adagrad_two_steps_by_hand() {
        let eps = 1e-8;
        let mut p = scalar(0.0);
        let mut opt = OptimizerState::new(OptimizerKind::Adagrad { eps }, 1.0, &[&p]).unwrap();
        opt.step(&mut [&mut p], &[scalar(1.0)]).unwrap();
        opt.step(&mut [&mut p], &[scalar(3.0)]).unwrap();
        // recompute from scratch
        let mut expected = 0.0;
        let mut acc = 0.0;
        for g in [1.0f64, 3.0] {
            acc += g * g;
            expected -= g / (acc.sqrt() + eps);
        }
        assert_eq!(opt.slots[0][[0, 0]], 10.0);
        assert!((p[[0, 0]] - expected).abs() < 1e-15);
        assert!((expected - (-1.0 / (1.0 + eps) - 3.0 / (10f64.sqrt() + eps))).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Matrix::zeros((2, 2));
        let mut opt = OptimizerState::new(OptimizerKind::MomentumSgd { momentum: 0.9 }, 0.1, &[&p]).unwrap();
        assert!(matches!(
            opt.step(&mut [&mut p], &[Matrix::zeros((2, 3))]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn bad_hyperparameters_rejected() {
        let p = Matrix::zeros((1, 1));
        assert!(OptimizerState::new(OptimizerKind::MomentumSgd { momentum: 1.0 }, 0.1, &[&p]).is_err());
        assert!(OptimizerState::new(OptimizerKind::Adagrad { eps: 1e-8 }, 0.0, &[&p]).is_err());
    }
}
