use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnlib::Matrix;

pub const MAX_HYPOTHESES: usize = 10_000;

/// Axis-aligned threshold classifier over binary labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    /// Predict class 1 above the threshold when true, below it otherwise.
    pub positive_above: bool,
}

impl Stump {
    pub fn predict(&self, row: &[f64]) -> usize {
        usize::from((row[self.feature] > self.threshold) == self.positive_above)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisClass {
    stumps: Vec<Stump>,
    dim: usize,
}

impl HypothesisClass {
    pub fn new(stumps: Vec<Stump>, dim: usize) -> Result<Self> {
        if stumps.is_empty() {
            return Err(Error::Config("hypothesis class is empty".into()));
        }
        if stumps.len() > MAX_HYPOTHESES {
            return Err(Error::Config(format!(
                "hypothesis class has {} members, limit is {MAX_HYPOTHESES}",
                stumps.len()
            )));
        }
        if let Some(s) = stumps.iter().find(|s| s.feature >= dim || !s.threshold.is_finite()) {
            return Err(Error::Config(format!("invalid stump {s:?} for dimension {dim}")));
        }
        Ok(Self { stumps, dim })
    }

    /// Every feature crossed with every threshold, both polarities.
    pub fn grid(dim: usize, thresholds: &[f64]) -> Result<Self> {
        let mut stumps = Vec::with_capacity(dim * thresholds.len() * 2);
        for feature in 0..dim {
            for &threshold in thresholds {
                for positive_above in [true, false] {
                    stumps.push(Stump {
                        feature,
                        threshold,
                        positive_above,
                    });
                }
            }
        }
        Self::new(stumps, dim)
    }

    pub fn len(&self) -> usize {
        self.stumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stumps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn stumps(&self) -> &[Stump] {
        &self.stumps
    }

    /// Row `h` holds hypothesis `h`'s prediction for every sample.
    pub(crate) fn prediction_table(&self, x: &Matrix) -> Result<Vec<Vec<usize>>> {
        if x.ncols() != self.dim {
            return Err(Error::dim("hypothesis predictions", self.dim, x.ncols()));
        }
        let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        Ok(self
            .stumps
            .iter()
            .map(|s| rows.iter().map(|r| s.predict(r)).collect())
            .collect())
    }
}
