//! Seeded finite-difference comparison of every analytic gradient in the
//! crate. Each check draws random shapes and reports its worst relative error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::nnlib::{
    affine_backward, affine_forward, batch_norm_backward, batch_norm_train, finite_difference_gradient,
    relative_error, relu, relu_backward, sigmoid, sigmoid_backward, softmax_cross_entropy, Activation,
    LayerSpec, Matrix, RunningStats, Stack,
};
use crate::trinet::{weight_divergence, GradientGates, NetConfig, TriNet};

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: &'static str,
    pub cases: usize,
    pub max_rel_err: f64,
}

type CheckFn = fn(&mut ChaCha8Rng) -> Result<f64>;

const CHECKS: [(&str, CheckFn); 10] = [
    ("affine", check_affine),
    ("sigmoid", check_sigmoid),
    ("relu", check_relu),
    ("softmax_cross_entropy", check_softmax_ce),
    ("batch_norm", check_batch_norm),
    ("stack_all_layers", check_stack),
    ("weight_divergence", check_divergence),
    ("joint_labeling_loss", check_joint_loss),
    ("joint_labeling_loss_gated", check_joint_loss_gated),
    ("target_loss", check_target_loss),
];

/// Runs `cases` random shapes per check. Seeds are derived per check, so a
/// single check can be reproduced in isolation.
pub fn gradient_suite(cases: usize, seed: u64) -> Result<Vec<GradCheck>> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, (name, f))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000 * i as u64));
            let mut worst: f64 = 0.0;
            for _ in 0..cases {
                worst = worst.max(f(&mut rng)?);
            }
            Ok(GradCheck {
                name,
                cases,
                max_rel_err: worst,
            })
        })
        .collect()
}

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_shape_simple_fn((r, c), || rng.sample(StandardNormal))
}

fn labels(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

/// Weighted sum, so every output entry gets a distinct upstream gradient.
fn project(y: &Matrix, r: &Matrix) -> f64 {
    (y * r).sum()
}

fn check_affine(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (b, i, o) = (rng.random_range(1..8), rng.random_range(1..7), rng.random_range(1..7));
    let (x, w, bias, r) = (randn(rng, b, i), randn(rng, i, o), randn(rng, 1, o), randn(rng, b, o));
    let g = affine_backward(&x, &w, &r)?;
    let fx = finite_difference_gradient(|x| project(&affine_forward(x, &w, &bias).unwrap(), &r), &x, FD_STEP);
    let fw = finite_difference_gradient(|w| project(&affine_forward(&x, w, &bias).unwrap(), &r), &w, FD_STEP);
    let fb = finite_difference_gradient(|bb| project(&affine_forward(&x, &w, bb).unwrap(), &r), &bias, FD_STEP);
    Ok(relative_error(&g.dx, &fx)
        .max(relative_error(&g.dw, &fw))
        .max(relative_error(&g.db, &fb)))
}

fn check_sigmoid(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (b, d) = (rng.random_range(1..8), rng.random_range(1..7));
    let (x, r) = (randn(rng, b, d), randn(rng, b, d));
    let analytic = sigmoid_backward(&sigmoid(&x), &r);
    let fd = finite_difference_gradient(|x| project(&sigmoid(x), &r), &x, FD_STEP);
    Ok(relative_error(&analytic, &fd))
}

fn check_relu(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (b, d) = (rng.random_range(1..8), rng.random_range(1..7));
    // keep inputs away from the kink
    let x = randn(rng, b, d).mapv(|v| if v.abs() < 0.01 { v.signum() * 0.01 + v } else { v });
    let r = randn(rng, b, d);
    let analytic = relu_backward(&x, &r);
    let fd = finite_difference_gradient(|x| project(&relu(x), &r), &x, FD_STEP);
    Ok(relative_error(&analytic, &fd))
}

fn check_softmax_ce(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (b, k) = (rng.random_range(1..8), rng.random_range(2..6));
    let logits = randn(rng, b, k) * 3.0;
    let y = labels(rng, b, k);
    let (_, analytic) = softmax_cross_entropy(&logits, &y)?;
    let fd = finite_difference_gradient(|l| softmax_cross_entropy(l, &y).unwrap().0, &logits, FD_STEP);
    Ok(relative_error(&analytic, &fd))
}

fn check_batch_norm(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (b, d) = (rng.random_range(2..9), rng.random_range(1..6));
    let x = randn(rng, b, d) * 2.0 + 0.5;
    let gamma = randn(rng, 1, d);
    let beta = randn(rng, 1, d);
    let r = randn(rng, b, d);
    let eps = 1e-5;
    let loss = |x: &Matrix, g: &Matrix, bt: &Matrix| {
        let mut stats = RunningStats::new(d);
        project(&batch_norm_train(x, g, bt, eps, 0.9, &mut stats).unwrap().0, &r)
    };
    let mut stats = RunningStats::new(d);
    let (_, cache) = batch_norm_train(&x, &gamma, &beta, eps, 0.9, &mut stats)?;
    let (dx, dg, db) = batch_norm_backward(&cache, &r);
    let fx = finite_difference_gradient(|x| loss(x, &gamma, &beta), &x, FD_STEP);
    let fg = finite_difference_gradient(|g| loss(&x, g, &beta), &gamma, FD_STEP);
    let fb = finite_difference_gradient(|bt| loss(&x, &gamma, bt), &beta, FD_STEP);
    Ok(relative_error(&dx, &fx)
        .max(relative_error(&dg, &fg))
        .max(relative_error(&db, &fb)))
}

fn check_stack(rng: &mut ChaCha8Rng) -> Result<f64> {
    let b = rng.random_range(2..8);
    let (i, h1, h2, o) = (
        rng.random_range(1..5),
        rng.random_range(2..6),
        rng.random_range(2..6),
        rng.random_range(1..4),
    );
    let specs = [
        LayerSpec::affine(i, h1),
        LayerSpec::sigmoid(h1),
        LayerSpec::dropout(h1, 0.3),
        LayerSpec::affine(h1, h2),
        LayerSpec::sigmoid(h2),
        LayerSpec::batch_norm(h2),
        LayerSpec::affine(h2, o),
    ];
    let stack = Stack::new(&specs, rng)?;
    let x = randn(rng, b, i);
    let r = randn(rng, b, o);
    let mask_rng = ChaCha8Rng::seed_from_u64(rng.random());

    let eval = |s: &Stack, x: &Matrix| {
        let mut s = s.clone();
        project(&s.forward_train(x, &mut mask_rng.clone()).unwrap().0, &r)
    };
    let mut s = stack.clone();
    let (_, cache) = s.forward_train(&x, &mut mask_rng.clone())?;
    let (dx, grads) = s.backward(&cache, &r)?;

    let mut worst = relative_error(&dx, &finite_difference_gradient(|x| eval(&stack, x), &x, FD_STEP));
    for (p, g) in grads.iter().enumerate() {
        let fd = finite_difference_gradient(
            |v| {
                let mut probe = stack.clone();
                *probe.params_mut()[p] = v.clone();
                eval(&probe, &x)
            },
            stack.params()[p],
            FD_STEP,
        );
        worst = worst.max(relative_error(g, &fd));
    }
    Ok(worst)
}

/// Smallest entry of `|W1^T W2|`; the penalty has a kink wherever it is 0.
fn kink_distance(w1: &Matrix, w2: &Matrix) -> f64 {
    w1.t().dot(w2).iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

const KINK_MARGIN: f64 = 1e-3;

fn check_divergence(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (d, h) = (rng.random_range(1..8), rng.random_range(1..6));
    let (w1, w2) = loop {
        let (w1, w2) = (randn(rng, d, h), randn(rng, d, h));
        if kink_distance(&w1, &w2) > KINK_MARGIN {
            break (w1, w2);
        }
    };
    let (_, g1, g2) = weight_divergence(&w1, &w2)?;
    let f1 = finite_difference_gradient(|w| weight_divergence(w, &w2).unwrap().0, &w1, FD_STEP);
    let f2 = finite_difference_gradient(|w| weight_divergence(&w1, w).unwrap().0, &w2, FD_STEP);
    Ok(relative_error(&g1, &f1).max(relative_error(&g2, &f2)))
}

fn random_net_config(rng: &mut ChaCha8Rng) -> NetConfig {
    let depth = rng.random_range(1..3);
    NetConfig {
        input_dim: rng.random_range(1..5),
        f_hidden: (0..depth).map(|_| rng.random_range(2..6)).collect(),
        branch_hidden: if rng.random_bool(0.5) { vec![rng.random_range(2..5)] } else { vec![] },
        activation: Activation::Sigmoid,
        use_bn: rng.random_bool(0.7),
        dropout_labeling: if rng.random_bool(0.5) { 0.25 } else { 0.0 },
        dropout_target: if rng.random_bool(0.5) { 0.25 } else { 0.0 },
        num_classes: rng.random_range(2..5),
        lambda: rng.random_range(0.0..0.5),
        ..NetConfig::default()
    }
}

/// Compares every gradient the loss reports against finite differences of
/// the loss value with respect to the matching stack's parameters.
fn compare_net_grads<L>(net: &TriNet, loss: L, grads: &crate::trinet::TriGrads) -> f64
where
    L: Fn(&mut TriNet) -> f64,
{
    let mut worst: f64 = 0.0;
    type Pick = fn(&mut TriNet) -> &mut Stack;
    let stacks: [(Pick, &Option<Vec<Matrix>>); 4] = [
        (|n| &mut n.f, &grads.f),
        (|n| &mut n.f1, &grads.f1),
        (|n| &mut n.f2, &grads.f2),
        (|n| &mut n.ft, &grads.ft),
    ];
    for (pick, g) in stacks {
        let Some(g) = g else { continue };
        let mut base = net.clone();
        let params: Vec<Matrix> = pick(&mut base).params().into_iter().cloned().collect();
        for (p, analytic) in g.iter().enumerate() {
            let fd = finite_difference_gradient(
                |v| {
                    let mut probe = net.clone();
                    *pick(&mut probe).params_mut()[p] = v.clone();
                    loss(&mut probe)
                },
                &params[p],
                FD_STEP,
            );
            worst = worst.max(relative_error(analytic, &fd));
        }
    }
    worst
}

fn joint_case(rng: &mut ChaCha8Rng, gates: GradientGates) -> Result<f64> {
    let cfg = NetConfig {
        gates,
        ..random_net_config(rng)
    };
    let net = loop {
        let net = TriNet::new(&cfg, rng.random())?;
        let (w1, w2) = (net.f1.first_affine_weight(), net.f2.first_affine_weight());
        if kink_distance(w1.expect("branch has an affine layer"), w2.expect("branch has an affine layer")) > KINK_MARGIN {
            break net;
        }
    };
    let b = rng.random_range(2..7);
    let x = randn(rng, b, cfg.input_dim);
    let y = labels(rng, b, cfg.num_classes);
    let drop_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let (_, grads) = net.clone().joint_labeling_loss(&x, &y, &mut drop_rng.clone())?;
    let loss = |n: &mut TriNet| n.joint_labeling_loss(&x, &y, &mut drop_rng.clone()).unwrap().0.e;
    Ok(compare_net_grads(&net, loss, &grads))
}

fn check_joint_loss(rng: &mut ChaCha8Rng) -> Result<f64> {
    joint_case(rng, GradientGates::default())
}

fn check_joint_loss_gated(rng: &mut ChaCha8Rng) -> Result<f64> {
    joint_case(
        rng,
        GradientGates {
            from_f1_f2: false,
            from_ft: true,
        },
    )
}

fn check_target_loss(rng: &mut ChaCha8Rng) -> Result<f64> {
    let cfg = random_net_config(rng);
    let net = TriNet::new(&cfg, rng.random())?;
    let b = rng.random_range(2..7);
    let x = randn(rng, b, cfg.input_dim);
    let y = labels(rng, b, cfg.num_classes);
    let drop_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let (_, grads) = net.clone().target_loss(&x, &y, &mut drop_rng.clone())?;
    let loss = |n: &mut TriNet| n.target_loss(&x, &y, &mut drop_rng.clone()).unwrap().0;
    Ok(compare_net_grads(&net, loss, &grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_runs_every_check() {
        let out = gradient_suite(2, 11).unwrap();
        assert_eq!(out.len(), CHECKS.len());
        for c in out {
            assert!(c.max_rel_err < 1e-4, "{} {}", c.name, c.max_rel_err);
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = randn(&mut rng, 3, 2);
        let fd = finite_difference_gradient(|m| m.mapv(|v| v * v).sum(), &x, FD_STEP);
        assert!(relative_error(&(&x * 3.0), &fd) > 0.1);
    }
}
