use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DomainDataset, HiddenLabels, LabeledSet, UnlabeledSet};
use crate::error::{Error, Result};
use crate::nnlib::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    TwoMoons,
    GaussianBlobs,
}

/// A synthetic source/target pair: the target is drawn from the same base
/// generator, then rotated about the generator's center and translated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    pub generator: Generator,
    pub n_source: usize,
    pub n_target: usize,
    #[serde(default = "two")]
    pub num_classes: usize,
    #[serde(default)]
    pub rotation_deg: f64,
    #[serde(default = "zero2")]
    pub translation: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

fn two() -> usize {
    2
}

fn zero2() -> Vec<f64> {
    vec![0.0, 0.0]
}

impl ShiftSpec {
    pub fn two_moons(n_source: usize, n_target: usize, rotation_deg: f64, seed: u64) -> Self {
        Self {
            generator: Generator::TwoMoons,
            n_source,
            n_target,
            num_classes: 2,
            rotation_deg,
            translation: zero2(),
            noise_sigma: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.generator == Generator::TwoMoons && self.num_classes != 2 {
            return Err(Error::Config("data.num_classes must be 2 for two_moons".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("data.num_classes must be at least 2".into()));
        }
        let min = 2 * self.num_classes;
        if self.n_source < min || self.n_target < min {
            return Err(Error::Config(format!(
                "data.n_source and data.n_target must be at least {min}"
            )));
        }
        if !(self.noise_sigma > 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config(format!(
                "data.noise_sigma must be positive, got {}",
                self.noise_sigma
            )));
        }
        if !self.rotation_deg.is_finite() {
            return Err(Error::Config("data.rotation_deg must be finite".into()));
        }
        if self.translation.len() != 2 || self.translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config(
                "data.translation must be two finite numbers".into(),
            ));
        }
        Ok(())
    }

    fn center(&self) -> [f64; 2] {
        match self.generator {
            Generator::TwoMoons => [0.5, 0.25],
            Generator::GaussianBlobs => [0.0, 0.0],
        }
    }
}

/// Class-balanced draw from the base generator, rows shuffled.
fn draw_base(spec: &ShiftSpec, n: usize, rng: &mut ChaCha8Rng) -> (Matrix, Vec<usize>) {
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    let k = spec.num_classes;
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(rng);
    let mut x = Matrix::zeros((n, 2));
    for (i, &c) in labels.iter().enumerate() {
        let (px, py) = match spec.generator {
            Generator::TwoMoons => {
                let t = rng.random_range(0.0..PI);
                if c == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                }
            }
            Generator::GaussianBlobs => {
                let a = 2.0 * PI * c as f64 / k as f64;
                (3.0 * a.cos(), 3.0 * a.sin())
            }
        };
        x[[i, 0]] = px + noise.sample(rng);
        x[[i, 1]] = py + noise.sample(rng);
    }
    (x, labels)
}

pub fn generate(spec: &ShiftSpec) -> Result<DomainDataset> {
    spec.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut src_rng = ChaCha8Rng::seed_from_u64(master.next_u64());
    let mut tgt_rng = ChaCha8Rng::seed_from_u64(master.next_u64());

    let (sx, sy) = draw_base(spec, spec.n_source, &mut src_rng);
    let (mut tx, ty) = draw_base(spec, spec.n_target, &mut tgt_rng);

    let [cx, cy] = spec.center();
    let (s, c) = spec.rotation_deg.to_radians().sin_cos();
    for mut row in tx.rows_mut() {
        let (dx, dy) = (row[0] - cx, row[1] - cy);
        row[0] = cx + c * dx - s * dy + spec.translation[0];
        row[1] = cy + s * dx + c * dy + spec.translation[1];
    }

    Ok(DomainDataset {
        source: LabeledSet { x: sx, y: sy },
        target: UnlabeledSet { x: tx },
        target_labels: Some(HiddenLabels(ty)),
        val: LabeledSet::empty(2),
        num_classes: spec.num_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let spec = ShiftSpec::two_moons(101, 57, 30.0, 5);
        let a = generate(&spec).unwrap();
        assert_eq!(a, generate(&spec).unwrap());
        let ones = a.source.y.iter().filter(|&&y| y == 1).count();
        assert!((ones as i64 - 50).abs() <= 1);
        let t = a.target_labels.as_ref().unwrap().for_evaluation();
        let ones = t.iter().filter(|&&y| y == 1).count();
        assert!((ones as i64 - 28).abs() <= 1);
    }

    #[test]
    fn blobs_rotated_half_turn_swap_classes() {
        let spec = ShiftSpec {
            generator: Generator::GaussianBlobs,
            rotation_deg: 180.0,
            noise_sigma: 0.3,
            ..ShiftSpec::two_moons(100, 100, 0.0, 1)
        };
        let d = generate(&spec).unwrap();
        let t = d.target_labels.as_ref().unwrap().for_evaluation();
        // class 0 sits at (+3, 0) in the source; after the turn its target rows sit near (-3, 0)
        for (row, &y) in d.target.x.rows().into_iter().zip(t) {
            if y == 0 {
                assert!(row[0] < 0.0);
            } else {
                assert!(row[0] > 0.0);
            }
        }
    }

    #[test]
    fn degenerate_specs_rejected() {
        let base = ShiftSpec::two_moons(100, 100, 0.0, 1);
        for bad in [
            ShiftSpec { n_source: 3, ..base.clone() },
            ShiftSpec { noise_sigma: 0.0, ..base.clone() },
            ShiftSpec { translation: vec![1.0], ..base.clone() },
            ShiftSpec { num_classes: 3, ..base.clone() },
            ShiftSpec { rotation_deg: f64::NAN, ..base.clone() },
        ] {
            assert!(matches!(generate(&bad), Err(Error::Config(_))), "{bad:?}");
        }
    }
}
