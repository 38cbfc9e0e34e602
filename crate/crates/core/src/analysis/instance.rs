use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hypothesis::HypothesisClass;
use crate::datagen::LabeledSet;
use crate::error::{Error, Result};
use crate::nnlib::Matrix;

pub const MAX_INSTANCE_SAMPLES: usize = 50;
pub const MAX_INSTANCE_HYPOTHESES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    /// Shifted inputs, independently noisy threshold labels.
    Random,
    /// Target labels are the exact complement of the source rule.
    LabelFlip,
    /// Target is a copy of a separable source.
    Identical,
}

impl InstanceKind {
    pub const ALL: [InstanceKind; 3] = [InstanceKind::Random, InstanceKind::LabelFlip, InstanceKind::Identical];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub kind: InstanceKind,
    pub n_source: usize,
    pub n_target: usize,
    pub dim: usize,
    pub n_thresholds: usize,
    pub seed: u64,
}

impl InstanceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_source == 0 || self.n_target == 0 || self.dim == 0 || self.n_thresholds == 0 {
            return Err(Error::Config("instance sizes must be positive".into()));
        }
        if self.n_source > MAX_INSTANCE_SAMPLES || self.n_target > MAX_INSTANCE_SAMPLES {
            return Err(Error::Config(format!(
                "instances are capped at {MAX_INSTANCE_SAMPLES} samples per domain"
            )));
        }
        if self.kind == InstanceKind::Identical && self.n_source != self.n_target {
            return Err(Error::Config("identical instances need n_source == n_target".into()));
        }
        let size = 2 * self.dim * self.n_thresholds;
        if size > MAX_INSTANCE_HYPOTHESES {
            return Err(Error::Config(format!(
                "hypothesis class of {size} stumps exceeds the cap of {MAX_INSTANCE_HYPOTHESES}"
            )));
        }
        Ok(())
    }

    /// `count` specs cycling through every kind, with sizes drawn up to
    /// `max_samples` per domain and `max_hypotheses` stumps.
    pub fn suite(count: usize, max_samples: usize, max_hypotheses: usize, seed: u64) -> Result<Vec<InstanceSpec>> {
        if !(2..=MAX_INSTANCE_SAMPLES).contains(&max_samples) {
            return Err(Error::Config(format!(
                "max_samples must be in 2..={MAX_INSTANCE_SAMPLES}, got {max_samples}"
            )));
        }
        if !(4..=MAX_INSTANCE_HYPOTHESES).contains(&max_hypotheses) {
            return Err(Error::Config(format!(
                "max_hypotheses must be in 4..={MAX_INSTANCE_HYPOTHESES}, got {max_hypotheses}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = (0..count)
            .map(|i| {
                let kind = InstanceKind::ALL[i % InstanceKind::ALL.len()];
                let dim = rng.random_range(1..=2);
                let n_source = rng.random_range(2..=max_samples);
                let n_target = if kind == InstanceKind::Identical {
                    n_source
                } else {
                    rng.random_range(2..=max_samples)
                };
                InstanceSpec {
                    kind,
                    n_source,
                    n_target,
                    dim,
                    n_thresholds: rng.random_range(1..=max_hypotheses / 4),
                    seed: rng.random(),
                }
            })
            .collect();
        Ok(specs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundInstance {
    pub class: HypothesisClass,
    pub source: LabeledSet,
    pub target: LabeledSet,
    /// Target points with a random fraction of labels flipped.
    pub pseudo: LabeledSet,
}

fn uniform_points(n: usize, dim: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_shape_simple_fn((n, dim), || rng.random_range(lo..hi))
}

fn threshold_labels(x: &Matrix, t: f64, noise: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    x.column(0)
        .iter()
        .map(|&v| usize::from(v > t) ^ usize::from(rng.random_bool(noise)))
        .collect()
}

impl BoundInstance {
    pub fn generate(spec: &InstanceSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let g = spec.n_thresholds;
        let grid: Vec<f64> = (0..g).map(|i| (i as f64 + 0.5) / g as f64).collect();
        let class = HypothesisClass::grid(spec.dim, &grid)?;

        let (source, target) = match spec.kind {
            InstanceKind::Random => {
                let shift = rng.random_range(-0.3..0.3);
                let xs = uniform_points(spec.n_source, spec.dim, 0.0, 1.0, &mut rng);
                let xt = uniform_points(spec.n_target, spec.dim, shift, 1.0 + shift, &mut rng);
                let ts = rng.random_range(0.2..0.8);
                let tt = rng.random_range(0.2..0.8);
                let ns = rng.random_range(0.0..0.3);
                let nt = rng.random_range(0.0..0.3);
                let ys = threshold_labels(&xs, ts, ns, &mut rng);
                let yt = threshold_labels(&xt, tt, nt, &mut rng);
                (LabeledSet::new(xs, ys)?, LabeledSet::new(xt, yt)?)
            }
            InstanceKind::LabelFlip => {
                let xs = uniform_points(spec.n_source, spec.dim, 0.0, 1.0, &mut rng);
                let xt = uniform_points(spec.n_target, spec.dim, 0.0, 1.0, &mut rng);
                let t = grid[rng.random_range(0..g)];
                let ys = threshold_labels(&xs, t, 0.0, &mut rng);
                let yt = threshold_labels(&xt, t, 0.0, &mut rng).iter().map(|y| 1 - y).collect();
                (LabeledSet::new(xs, ys)?, LabeledSet::new(xt, yt)?)
            }
            InstanceKind::Identical => {
                let xs = uniform_points(spec.n_source, spec.dim, 0.0, 1.0, &mut rng);
                let t = grid[rng.random_range(0..g)];
                let ys = threshold_labels(&xs, t, 0.0, &mut rng);
                let s = LabeledSet::new(xs, ys)?;
                (s.clone(), s)
            }
        };
        let flip_rate = rng.random_range(0.0..=1.0);
        let pseudo_y = target
            .y
            .iter()
            .map(|&y| if rng.random_bool(flip_rate) { 1 - y } else { y })
            .collect();
        let pseudo = LabeledSet::new(target.x.clone(), pseudo_y)?;
        Ok(Self {
            class,
            source,
            target,
            pseudo,
        })
    }
}
