//! The adaptation loop: source pretraining, initial labeling, then `k`
//! steps of (F, F1, F2 on S ∪ T_l) / (F, Ft on T_l) followed by relabeling.

use std::fs;
use std::path::Path;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{HiddenLabels, LabeledSet, UnlabeledSet};
use crate::error::{Error, Result};
use crate::labeler::{
    candidate_count, labeling_accuracy, sample_candidates, AgreementLabeler, Labeler,
    LabelingConfig, PseudoLabelSet,
};
use crate::nnlib::{Matrix, OptimizerKind, OptimizerState};
use crate::trinet::{Branch, NetConfig, TriGrads, TriNet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDecay {
    /// The new rate applies from the first step after this one.
    pub after_step: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Iterations per adaptation step; `None` means one pass over `S ∪ T_l`.
    pub iter_per_phase: Option<usize>,
    /// Pretraining iterations; `None` falls back to `iter_per_phase`, then
    /// to one pass over the source set.
    pub pretrain_iters: Option<usize>,
    pub steps_k: usize,
    pub batch_labeling: usize,
    pub batch_target: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub lr_decay: Option<LrDecay>,
    pub labeling: LabelingConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iter_per_phase: None,
            pretrain_iters: None,
            steps_k: 20,
            batch_labeling: 64,
            batch_target: 128,
            lr: 0.01,
            optimizer: OptimizerKind::MomentumSgd { momentum: 0.9 },
            lr_decay: None,
            labeling: LabelingConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, net: &NetConfig) -> Result<()> {
        self.labeling.validate()?;
        self.optimizer.validate()?;
        net.validate()?;
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("train.lr must be positive, got {}", self.lr)));
        }
        if let Some(d) = self.lr_decay {
            if !(d.lr > 0.0) {
                return Err(Error::Config("train.lr_decay.lr must be positive".into()));
            }
        }
        let min_batch = if net.use_bn { 2 } else { 1 };
        if self.batch_labeling < min_batch || self.batch_target < min_batch {
            return Err(Error::Config(format!(
                "train.batch_labeling and train.batch_target must be at least {min_batch}"
            )));
        }
        Ok(())
    }
}

/// One row of the metrics history. Step 0 is the state after pretraining
/// and initial labeling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub acc_f1: f64,
    pub acc_f2: f64,
    pub acc_ft: f64,
    /// `None` when no pseudo-labels were produced or truth is unavailable.
    pub labeling_acc: Option<f64>,
    pub n_pseudo: usize,
    pub n_candidates: usize,
    pub mean_e: f64,
    pub mean_penalty: f64,
    pub mean_target_loss: Option<f64>,
}

/// Fraction of argmax-correct predictions of one branch (eval mode).
pub fn evaluate(net: &TriNet, set: &LabeledSet, branch: Branch) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty set".into()));
    }
    let out = net.predict(&set.x, branch)?;
    let correct = out
        .predicted_class
        .iter()
        .zip(&set.y)
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / set.len() as f64)
}

/// Holds everything with ground truth: the held-out test set and the
/// withheld labels of the target pool.
#[derive(Debug, Clone)]
pub struct Evaluator {
    test: LabeledSet,
    target_truth: Option<HiddenLabels>,
}

impl Evaluator {
    pub fn new(test: LabeledSet, target_truth: Option<HiddenLabels>) -> Result<Self> {
        if test.is_empty() {
            return Err(Error::Input("evaluation set is empty".into()));
        }
        Ok(Self { test, target_truth })
    }

    pub fn accuracy(&self, net: &TriNet, branch: Branch) -> Result<f64> {
        evaluate(net, &self.test, branch)
    }

    pub fn labeling_accuracy(&self, set: &PseudoLabelSet) -> Option<f64> {
        self.target_truth
            .as_ref()
            .and_then(|t| labeling_accuracy(set, t.for_evaluation()))
    }
}

/// Draws fixed-size batches from a reshuffled permutation of `0..n`.
#[derive(Debug)]
struct BatchCursor {
    order: Vec<usize>,
    pos: usize,
}

impl BatchCursor {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self, size: usize, rng: &mut ChaCha8Rng) -> &[usize] {
        let size = size.min(self.order.len());
        if self.pos + size > self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let batch = &self.order[self.pos..self.pos + size];
        self.pos += size;
        batch
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct PhaseStats {
    sum_e: f64,
    sum_penalty: f64,
    joint_iters: usize,
    sum_target: f64,
    target_iters: usize,
}

impl PhaseStats {
    fn mean_e(&self) -> f64 {
        if self.joint_iters == 0 {
            f64::NAN
        } else {
            self.sum_e / self.joint_iters as f64
        }
    }

    fn mean_penalty(&self) -> f64 {
        if self.joint_iters == 0 {
            f64::NAN
        } else {
            self.sum_penalty / self.joint_iters as f64
        }
    }

    fn mean_target(&self) -> Option<f64> {
        (self.target_iters > 0).then(|| self.sum_target / self.target_iters as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Optimizers {
    f: OptimizerState,
    f1: OptimizerState,
    f2: OptimizerState,
    ft: OptimizerState,
}

/// Complete training state; serializing it gives a bit-exact resume point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    pub net: TriNet,
    opt: Optimizers,
    /// Mini-batch order and dropout masks.
    rng: ChaCha8Rng,
    /// Candidate resampling.
    label_rng: ChaCha8Rng,
    pub pseudo: PseudoLabelSet,
    /// Last completed step (0 once pretraining is done).
    pub step: usize,
    pub pretrained: bool,
    pub cfg: TrainConfig,
}

impl Trainer {
    pub fn new(net_cfg: &NetConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate(net_cfg)?;
        let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = TriNet::new(net_cfg, master.next_u64())?;
        let rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        let label_rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        let mk = |s: &crate::nnlib::Stack| OptimizerState::new(cfg.optimizer, cfg.lr, &s.params());
        let opt = Optimizers {
            f: mk(&net.f)?,
            f1: mk(&net.f1)?,
            f2: mk(&net.f2)?,
            ft: mk(&net.ft)?,
        };
        Ok(Self {
            net,
            opt,
            rng,
            label_rng,
            pseudo: PseudoLabelSet::default(),
            step: 0,
            pretrained: false,
            cfg: cfg.clone(),
        })
    }

    fn apply(&mut self, grads: TriGrads) -> Result<()> {
        let pairs = [
            (grads.f, &mut self.net.f, &mut self.opt.f),
            (grads.f1, &mut self.net.f1, &mut self.opt.f1),
            (grads.f2, &mut self.net.f2, &mut self.opt.f2),
            (grads.ft, &mut self.net.ft, &mut self.opt.ft),
        ];
        for (g, stack, opt) in pairs {
            if let Some(g) = g {
                opt.step(&mut stack.params_mut(), &g)?;
            }
        }
        Ok(())
    }

    fn set_lr(&mut self, lr: f64) {
        for o in [&mut self.opt.f, &mut self.opt.f1, &mut self.opt.f2, &mut self.opt.ft] {
            o.lr = lr;
        }
    }

    fn min_batch(&self) -> usize {
        let has_bn = self
            .net
            .f
            .layers()
            .iter()
            .any(|l| l.spec.kind == crate::nnlib::LayerKind::BatchNorm);
        if has_bn {
            2
        } else {
            1
        }
    }

    fn joint_update(&mut self, x: &Matrix, y: &[usize], stats: &mut PhaseStats) -> Result<()> {
        let (loss, grads) = self.net.joint_labeling_loss(x, y, &mut self.rng)?;
        self.apply(grads)?;
        stats.sum_e += loss.e;
        stats.sum_penalty += loss.penalty;
        stats.joint_iters += 1;
        Ok(())
    }

    fn target_update(&mut self, x: &Matrix, y: &[usize], stats: &mut PhaseStats) -> Result<()> {
        let (loss, grads) = self.net.target_loss(x, y, &mut self.rng)?;
        self.apply(grads)?;
        stats.sum_target += loss;
        stats.target_iters += 1;
        Ok(())
    }

    fn pretrain_iters(&self, m_s: usize) -> usize {
        self.cfg
            .pretrain_iters
            .or(self.cfg.iter_per_phase)
            .unwrap_or_else(|| m_s.div_ceil(self.cfg.batch_labeling))
    }

    /// Trains all four stacks on source mini-batches: `F1`/`F2`/`F` through
    /// the joint objective, `Ft`/`F` through the plain category loss.
    pub fn pretrain(&mut self, source: &LabeledSet) -> Result<()> {
        self.pretrain_with_stats(source).map(|_| ())
    }

    fn pretrain_with_stats(&mut self, source: &LabeledSet) -> Result<PhaseStats> {
        if source.is_empty() {
            return Err(Error::Input("pretraining needs a non-empty source set".into()));
        }
        if source.len() < self.min_batch() {
            return Err(Error::Input("source set smaller than the minimum batch".into()));
        }
        let iters = self.pretrain_iters(source.len());
        let mut stats = PhaseStats::default();
        let mut joint = BatchCursor::new(source.len());
        let mut target = BatchCursor::new(source.len());
        for _ in 0..iters {
            let idx = joint.next(self.cfg.batch_labeling, &mut self.rng).to_vec();
            let b = source.select(&idx);
            self.joint_update(&b.x, &b.y, &mut stats)?;
            let idx = target.next(self.cfg.batch_target, &mut self.rng).to_vec();
            let b = source.select(&idx);
            self.target_update(&b.x, &b.y, &mut stats)?;
        }
        self.pretrained = true;
        self.step = 0;
        Ok(stats)
    }

    /// Clears `T_l` and rebuilds it from freshly sampled candidates.
    /// Returns the number of candidates considered.
    pub fn relabel(&mut self, target: &UnlabeledSet, labeler: &mut dyn Labeler, step: usize) -> Result<usize> {
        let count = candidate_count(step, target.len(), &self.cfg.labeling).min(target.len());
        let candidates = sample_candidates(target.len(), count, &mut self.label_rng);
        self.pseudo = labeler.label(&self.net, target, &candidates, step)?;
        Ok(count)
    }

    fn pseudo_set(&self, target: &UnlabeledSet) -> LabeledSet {
        LabeledSet {
            x: target.x.select(Axis(0), &self.pseudo.indices()),
            y: self.pseudo.labels(),
        }
    }

    /// One adaptation step. Trains on `S ∪ T_l` and on `T_l`, then relabels
    /// with the candidate count of the new step.
    fn adapt_train(&mut self, source: &LabeledSet, target: &UnlabeledSet) -> Result<PhaseStats> {
        let tl = self.pseudo_set(target);
        let pool = LabeledSet {
            x: ndarray::concatenate(Axis(0), &[source.x.view(), tl.x.view()])
                .map_err(|e| Error::Input(e.to_string()))?,
            y: source.y.iter().chain(&tl.y).copied().collect(),
        };
        let iters = self
            .cfg
            .iter_per_phase
            .unwrap_or_else(|| pool.len().div_ceil(self.cfg.batch_labeling));
        let train_ft = tl.len() >= self.min_batch();
        if !train_ft {
            log::warn!(
                "step {}: only {} pseudo-labels, skipping the Ft phase",
                self.step + 1,
                tl.len()
            );
        }
        let mut stats = PhaseStats::default();
        let mut pool_cursor = BatchCursor::new(pool.len());
        let mut tl_cursor = BatchCursor::new(tl.len());
        for _ in 0..iters {
            let idx = pool_cursor.next(self.cfg.batch_labeling, &mut self.rng).to_vec();
            let b = pool.select(&idx);
            self.joint_update(&b.x, &b.y, &mut stats)?;
            if train_ft {
                let idx = tl_cursor.next(self.cfg.batch_target, &mut self.rng).to_vec();
                let b = tl.select(&idx);
                self.target_update(&b.x, &b.y, &mut stats)?;
            }
        }
        Ok(stats)
    }

    pub fn adapt_step(
        &mut self,
        source: &LabeledSet,
        target: &UnlabeledSet,
        eval: &Evaluator,
        labeler: &mut dyn Labeler,
    ) -> Result<StepMetrics> {
        if !self.pretrained {
            return Err(Error::State("adapt_step called before pretraining".into()));
        }
        let k = self.step + 1;
        let stats = self.adapt_train(source, target)?;
        let n_candidates = self.relabel(target, labeler, k)?;
        self.step = k;
        if let Some(d) = self.cfg.lr_decay {
            if k == d.after_step {
                self.set_lr(d.lr);
            }
        }
        self.metrics(stats, n_candidates, eval)
    }

    fn metrics(&self, stats: PhaseStats, n_candidates: usize, eval: &Evaluator) -> Result<StepMetrics> {
        Ok(StepMetrics {
            step: self.step,
            acc_f1: eval.accuracy(&self.net, Branch::F1)?,
            acc_f2: eval.accuracy(&self.net, Branch::F2)?,
            acc_ft: eval.accuracy(&self.net, Branch::Ft)?,
            labeling_acc: eval.labeling_accuracy(&self.pseudo),
            n_pseudo: self.pseudo.len(),
            n_candidates,
            mean_e: stats.mean_e(),
            mean_penalty: stats.mean_penalty(),
            mean_target_loss: stats.mean_target(),
        })
    }

    /// Pretraining plus initial labeling; returns the step-0 metrics row.
    pub fn start(
        &mut self,
        source: &LabeledSet,
        target: &UnlabeledSet,
        eval: &Evaluator,
        labeler: &mut dyn Labeler,
    ) -> Result<StepMetrics> {
        let stats = self.pretrain_with_stats(source)?;
        let n_candidates = self.relabel(target, labeler, 0)?;
        self.metrics(stats, n_candidates, eval)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let ck = CheckpointRef {
            format: CHECKPOINT_FORMAT,
            version: CHECKPOINT_VERSION,
            trainer: self,
        };
        fs::write(path, serde_json::to_vec(&ck)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Checkpoint(format!("unreadable checkpoint: {e}")))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format '{}'", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        ck.trainer
            .net
            .validate()
            .map_err(|e| Error::Checkpoint(format!("inconsistent network: {e}")))?;
        Ok(ck.trainer)
    }
}

pub const CHECKPOINT_FORMAT: &str = "tritrain-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize)]
struct CheckpointRef<'a> {
    format: &'a str,
    version: u32,
    trainer: &'a Trainer,
}

#[derive(Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    trainer: Trainer,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub history: Vec<StepMetrics>,
    pub pseudo_history: Vec<PseudoLabelSet>,
    pub trainer: Trainer,
}

impl RunOutcome {
    pub fn net(&self) -> &TriNet {
        &self.trainer.net
    }
}

/// Full pipeline with the `F1`/`F2` agreement labeler.
pub fn run(
    source: &LabeledSet,
    target: &UnlabeledSet,
    eval: &Evaluator,
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
) -> Result<RunOutcome> {
    let mut labeler = AgreementLabeler {
        threshold: cfg.labeling.threshold,
    };
    run_with_labeler(source, target, eval, net_cfg, cfg, &mut labeler)
}

pub fn run_with_labeler(
    source: &LabeledSet,
    target: &UnlabeledSet,
    eval: &Evaluator,
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
    labeler: &mut dyn Labeler,
) -> Result<RunOutcome> {
    if source.dim() != target.dim() {
        return Err(Error::Input(format!(
            "source has {} features, target {}",
            source.dim(),
            target.dim()
        )));
    }
    if target.is_empty() {
        return Err(Error::Input("target set is empty".into()));
    }
    let mut trainer = Trainer::new(net_cfg, cfg)?;
    let mut history = vec![trainer.start(source, target, eval, labeler)?];
    let mut pseudo_history = vec![trainer.pseudo.clone()];
    for _ in 0..cfg.steps_k {
        history.push(trainer.adapt_step(source, target, eval, labeler)?);
        pseudo_history.push(trainer.pseudo.clone());
    }
    Ok(RunOutcome {
        history,
        pseudo_history,
        trainer,
    })
}
