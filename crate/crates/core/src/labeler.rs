//! Pseudo-labeling: candidate schedule, per-step resampling, and the
//! agreement-plus-confidence filter over the two labeling branches.

use std::collections::HashSet;
use std::path::Path;

use ndarray::Axis;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::UnlabeledSet;
use crate::error::{Error, Result};
use crate::trinet::{Branch, BranchOutput, TriNet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelingConfig {
    /// A candidate is kept when the more confident of `F1`/`F2` exceeds this.
    pub threshold: f64,
    pub n_init: usize,
    pub cap: usize,
    pub steps_divisor: usize,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self {
            threshold: 0.9,
            n_init: 5000,
            cap: 40000,
            steps_divisor: 20,
        }
    }
}

impl LabelingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "labeling.threshold must be in (0, 1), got {}",
                self.threshold
            )));
        }
        if self.n_init > self.cap {
            return Err(Error::Config(format!(
                "labeling.n_init ({}) must not exceed labeling.cap ({})",
                self.n_init, self.cap
            )));
        }
        if self.steps_divisor == 0 {
            return Err(Error::Config("labeling.steps_divisor must be positive".into()));
        }
        Ok(())
    }
}

/// Candidates considered at step `k`: `n_init` at `k = 0`, afterwards
/// `min(floor(k n / steps_divisor), cap, n)`.
pub fn candidate_count(step_k: usize, n_targets: usize, cfg: &LabelingConfig) -> usize {
    if step_k == 0 {
        return cfg.n_init;
    }
    let scheduled = (step_k as u128 * n_targets as u128 / cfg.steps_divisor as u128) as usize;
    scheduled.min(cfg.cap).min(n_targets)
}

/// Uniform sample without replacement; `count` is clamped to `n_targets`.
pub fn sample_candidates<R: Rng + ?Sized>(n_targets: usize, count: usize, rng: &mut R) -> Vec<usize> {
    rand::seq::index::sample(rng, n_targets, count.min(n_targets)).into_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub target_index: usize,
    pub label: usize,
    pub confidence: f64,
}

/// The pseudo-labeled target set built at one step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub entries: Vec<PseudoLabel>,
    pub step: usize,
}

impl PseudoLabelSet {
    /// Maps row-relative entries (as returned by [`assign_pseudo_labels`])
    /// back to target indices through `candidates`.
    pub fn from_candidates(candidates: &[usize], rows: Vec<PseudoLabel>, step: usize) -> Result<Self> {
        let mut entries = Vec::with_capacity(rows.len());
        let mut seen = HashSet::with_capacity(rows.len());
        for r in rows {
            let &target_index = candidates
                .get(r.target_index)
                .ok_or_else(|| Error::Input(format!("row {} has no candidate", r.target_index)))?;
            if !seen.insert(target_index) {
                return Err(Error::Input(format!("target index {target_index} labeled twice")));
            }
            entries.push(PseudoLabel { target_index, ..r });
        }
        Ok(Self { entries, step })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.target_index).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    /// Audit dump: `target_index,label,confidence,step`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["target_index", "label", "confidence", "step"])?;
        for e in &self.entries {
            w.write_record([
                e.target_index.to_string(),
                e.label.to_string(),
                e.confidence.to_string(),
                self.step.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Keeps row `i` iff both branches predict the same class `C` and
/// `max(max_prob1, max_prob2) > threshold`; the kept row is labeled `C`.
/// Returned `target_index` values are row positions in `p1`/`p2`.
pub fn assign_pseudo_labels(p1: &BranchOutput, p2: &BranchOutput, threshold: f64) -> Result<Vec<PseudoLabel>> {
    if p1.len() != p2.len() {
        return Err(Error::Input(format!(
            "prediction row counts differ: {} vs {}",
            p1.len(),
            p2.len()
        )));
    }
    let mut out = Vec::new();
    for i in 0..p1.len() {
        let c = p1.predicted_class[i];
        if c != p2.predicted_class[i] {
            continue;
        }
        let confidence = p1.max_prob[i].max(p2.max_prob[i]);
        if confidence > threshold {
            out.push(PseudoLabel {
                target_index: i,
                label: c,
                confidence,
            });
        }
    }
    Ok(out)
}

/// Fraction of pseudo-labels that match the truth; `None` for an empty set.
pub fn labeling_accuracy(set: &PseudoLabelSet, true_labels: &[usize]) -> Option<f64> {
    if set.is_empty() {
        return None;
    }
    let correct = set
        .entries
        .iter()
        .filter(|e| true_labels.get(e.target_index) == Some(&e.label))
        .count();
    Some(correct as f64 / set.len() as f64)
}

/// Produces a fresh pseudo-label set from sampled candidates.
pub trait Labeler {
    fn label(
        &mut self,
        net: &TriNet,
        target: &UnlabeledSet,
        candidates: &[usize],
        step: usize,
    ) -> Result<PseudoLabelSet>;
}

/// The `F1`/`F2` agreement labeler.
#[derive(Debug, Clone, Copy)]
pub struct AgreementLabeler {
    pub threshold: f64,
}

impl Labeler for AgreementLabeler {
    fn label(
        &mut self,
        net: &TriNet,
        target: &UnlabeledSet,
        candidates: &[usize],
        step: usize,
    ) -> Result<PseudoLabelSet> {
        if candidates.is_empty() {
            return Ok(PseudoLabelSet {
                entries: Vec::new(),
                step,
            });
        }
        let x = target.x.select(Axis(0), candidates);
        let p1 = net.predict(&x, Branch::F1)?;
        let p2 = net.predict(&x, Branch::F2)?;
        let rows = assign_pseudo_labels(&p1, &p2, self.threshold)?;
        PseudoLabelSet::from_candidates(candidates, rows, step)
    }
}
