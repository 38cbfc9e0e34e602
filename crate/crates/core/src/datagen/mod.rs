//! Dataset construction: synthetic domain shifts, sparse bag-of-words
//! ingestion, CSV dumps and the seeded validation split.
//!
//! Ground-truth target labels live in [`HiddenLabels`]. Training code takes
//! only [`LabeledSet`] / [`UnlabeledSet`]; the labels are reachable solely
//! through [`HiddenLabels::for_evaluation`].

mod csvio;
mod shift;
mod sparse;

pub use csvio::{read_labeled_csv, write_labeled_csv};
pub use shift::{generate, Generator, ShiftSpec};
pub use sparse::{load_sparse_bow, parse_sparse_bow, write_sparse_bow};

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnlib::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub x: Matrix,
    pub y: Vec<usize>,
}

impl LabeledSet {
    pub fn new(x: Matrix, y: Vec<usize>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::dim("LabeledSet::new", format!("{} labels", x.nrows()), y.len()));
        }
        Ok(Self { x, y })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            x: Matrix::zeros((0, dim)),
            y: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledSet {
    pub x: Matrix,
}

impl UnlabeledSet {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}

/// Target labels withheld from training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLabels(Vec<usize>);

impl HiddenLabels {
    pub fn new(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    /// Only evaluation and analysis code should call this.
    pub fn for_evaluation(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDataset {
    pub source: LabeledSet,
    pub target: UnlabeledSet,
    pub target_labels: Option<HiddenLabels>,
    /// Small labeled target split for model selection; never trained on.
    pub val: LabeledSet,
    pub num_classes: usize,
}

impl DomainDataset {
    pub fn validate(&self) -> Result<()> {
        let d = self.source.dim();
        if self.target.dim() != d || self.val.dim() != d {
            return Err(Error::Input(format!(
                "feature dims differ: source {d}, target {}, val {}",
                self.target.dim(),
                self.val.dim()
            )));
        }
        if let Some(t) = &self.target_labels {
            if t.len() != self.target.len() {
                return Err(Error::Input("target label count differs from target rows".into()));
            }
        }
        let k = self.num_classes;
        let bad = self
            .source
            .y
            .iter()
            .chain(&self.val.y)
            .chain(self.target_labels.iter().flat_map(|t| t.0.iter()))
            .any(|&y| y >= k);
        if bad {
            return Err(Error::Input(format!("label outside [0, {k})")));
        }
        Ok(())
    }

    /// The target pool together with its withheld labels.
    pub fn target_eval_set(&self) -> Option<LabeledSet> {
        self.target_labels.as_ref().map(|t| LabeledSet {
            x: self.target.x.clone(),
            y: t.0.clone(),
        })
    }
}

/// Moves `val_count` labeled target rows, chosen by a seeded shuffle, into
/// the validation split.
pub fn split(dataset: &DomainDataset, val_count: usize, seed: u64) -> Result<DomainDataset> {
    if val_count == 0 {
        return Ok(dataset.clone());
    }
    let labels = dataset.target_labels.as_ref().ok_or_else(|| {
        Error::Config("validation split needs target labels".into())
    })?;
    let m = dataset.target.len();
    if val_count >= m {
        return Err(Error::Config(format!(
            "validation count {val_count} must be smaller than the {m} target rows"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (val_idx, train_idx) = order.split_at(val_count);
    let mut val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();

    let all = LabeledSet {
        x: dataset.target.x.clone(),
        y: labels.0.clone(),
    };
    let new_val = all.select(&val_idx);
    let rest = all.select(&train_idx);

    let mut val = dataset.val.clone();
    val.x.append(Axis(0), new_val.x.view()).expect("same width");
    val.y.extend(new_val.y);

    Ok(DomainDataset {
        source: dataset.source.clone(),
        target: UnlabeledSet { x: rest.x },
        target_labels: Some(HiddenLabels(rest.y)),
        val,
        num_classes: dataset.num_classes,
    })
}

/// Per-feature standardization fitted on source rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Matrix,
    pub std: Matrix,
}

impl Standardizer {
    pub fn fit(source: &Matrix) -> Result<Self> {
        if source.nrows() == 0 {
            return Err(Error::Input("cannot fit a standardizer on zero rows".into()));
        }
        let mean = source.mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
        let var = (source - &mean)
            .mapv(|v| v * v)
            .mean_axis(Axis(0))
            .unwrap()
            .insert_axis(Axis(0));
        // constant features pass through centered
        let std = var.mapv(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        (x - &self.mean) / &self.std
    }

    pub fn apply_dataset(&self, d: &DomainDataset) -> DomainDataset {
        DomainDataset {
            source: LabeledSet {
                x: self.apply(&d.source.x),
                y: d.source.y.clone(),
            },
            target: UnlabeledSet {
                x: self.apply(&d.target.x),
            },
            target_labels: d.target_labels.clone(),
            val: LabeledSet {
                x: self.apply(&d.val.x),
                y: d.val.y.clone(),
            },
            num_classes: d.num_classes,
        }
    }
}
