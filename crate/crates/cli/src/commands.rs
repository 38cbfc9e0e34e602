use std::fs;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};
use tritrain::analysis::{
    a_distance_with, emit_report, verify_rho_bound_with, verify_theorem1_with, ADistances, BoundInstance,
    BoundReport, InstanceSpec, VerifyOptions,
};
use tritrain::datagen::write_labeled_csv;
use tritrain::labeler::AgreementLabeler;
use tritrain::trainer::{StepMetrics, Trainer};
use tritrain::trinet::{Branch, TriNet};

use crate::config::{Config, DataKind};
use crate::data::{self, Loaded};
use crate::error::{CliError, Result};

pub const BOUND_SCHEMA: &str = "tritrain-bound-report";
pub const BOUND_SCHEMA_VERSION: u32 = 1;

fn prepare_output(cfg: &Config) -> Result<()> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join("manifest.toml");
    fs::write(&path, cfg.to_manifest()?).map_err(|e| CliError::io(path, e))
}

fn log_step(m: &StepMetrics) {
    info!(
        "step {:>3}: acc f1 {:.4} f2 {:.4} ft {:.4} | pseudo {} of {} candidates",
        m.step, m.acc_f1, m.acc_f2, m.acc_ft, m.n_pseudo, m.n_candidates
    );
}

fn distances(cfg: &Config, net: &TriNet, loaded: &Loaded) -> Result<ADistances> {
    let (s, t) = (&loaded.dataset.source.x, &loaded.dataset.target.x);
    let frac = cfg.analysis.heldout_fraction;
    let ac = cfg.adist_config();
    Ok(ADistances {
        raw: a_distance_with(s, t, frac, &ac)?,
        features: a_distance_with(&net.features(s)?, &net.features(t)?, frac, &ac)?,
    })
}

pub fn gen_data(cfg: &Config) -> Result<()> {
    if cfg.data.kind != DataKind::Synthetic {
        return Err(CliError::Config("gen-data needs data.kind = \"synthetic\"".into()));
    }
    prepare_output(cfg)?;
    let spec = data::shift_spec(cfg);
    let d = tritrain::datagen::generate(&spec)?;
    let dir = &cfg.output_dir;
    write_labeled_csv(dir.join("source.csv"), &d.source.x, &d.source.y)?;
    let hidden = d.target_labels.as_ref().expect("generator keeps labels");
    write_labeled_csv(dir.join("target.csv"), &d.target.x, hidden.for_evaluation())?;
    let sidecar = toml::to_string(&spec).map_err(|e| CliError::Config(e.to_string()))?;
    let path = dir.join("data_spec.toml");
    fs::write(&path, sidecar).map_err(|e| CliError::io(path, e))?;
    println!(
        "wrote {} source and {} target rows to {}",
        d.source.len(),
        d.target.len(),
        dir.display()
    );
    Ok(())
}

pub fn train(cfg: &Config) -> Result<()> {
    prepare_output(cfg)?;
    let loaded = data::load(cfg)?;
    let eval = loaded.evaluator()?;
    let (source, target) = (&loaded.dataset.source, &loaded.dataset.target);
    let mut labeler = AgreementLabeler {
        threshold: cfg.labeling.threshold,
    };
    let mut trainer = Trainer::new(&cfg.model, &cfg.train_config())?;
    let mut history = vec![trainer.start(source, target, &eval, &mut labeler)?];
    log_step(&history[0]);
    for _ in 0..cfg.train.steps_k {
        let m = trainer.adapt_step(source, target, &eval, &mut labeler)?;
        log_step(&m);
        history.push(m);
    }
    trainer.save(cfg.output_dir.join("checkpoint.json"))?;
    let dists = if cfg.analysis.a_distance {
        Some(distances(cfg, &trainer.net, &loaded)?)
    } else {
        None
    };
    emit_report(&history, None, dists, &cfg.output_dir)?;

    let last = history.last().expect("step 0 is always present");
    println!(
        "final step {}: f1 {:.4}  f2 {:.4}  ft {:.4}  (source-only ft {:.4})",
        last.step, last.acc_f1, last.acc_f2, last.acc_ft, history[0].acc_ft
    );
    if let Some(d) = dists {
        println!("a-distance: raw {:.4}  features {:.4}", d.raw, d.features);
    }
    println!("outputs in {}", cfg.output_dir.display());
    Ok(())
}

fn load_checkpoint(path: &Path, loaded: &Loaded) -> Result<Trainer> {
    let trainer = Trainer::load(path)?;
    if trainer.net.input_dim() != loaded.dataset.source.dim() {
        return Err(CliError::Config(format!(
            "checkpoint expects {} features, data has {}",
            trainer.net.input_dim(),
            loaded.dataset.source.dim()
        )));
    }
    Ok(trainer)
}

pub fn eval(cfg: &Config, checkpoint: &Path, branch: Option<Branch>) -> Result<()> {
    let loaded = data::load(cfg)?;
    let trainer = load_checkpoint(checkpoint, &loaded)?;
    let eval = loaded.evaluator()?;
    let branches = branch.map_or(Branch::ALL.to_vec(), |b| vec![b]);
    for b in branches {
        println!("{b}\t{:.4}", eval.accuracy(&trainer.net, b)?);
    }
    Ok(())
}

pub fn adist(cfg: &Config, checkpoint: &Path) -> Result<()> {
    let loaded = data::load(cfg)?;
    let trainer = load_checkpoint(checkpoint, &loaded)?;
    let d = distances(cfg, &trainer.net, &loaded)?;
    println!("raw\t{:.4}", d.raw);
    println!("features\t{:.4}", d.features);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub spec: InstanceSpec,
    pub hypotheses: usize,
    pub theorem1: BoundReport,
    pub rho: BoundReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckReport {
    pub schema: String,
    pub schema_version: u32,
    pub fault_injected: bool,
    pub total_violations: usize,
    pub instances: Vec<InstanceResult>,
}

pub fn bound_check(cfg: &Config, inject_fault: bool) -> Result<()> {
    let b = &cfg.bound;
    let specs = InstanceSpec::suite(b.instances, b.max_samples, b.max_hypotheses, cfg.seed)?;
    prepare_output(cfg)?;
    let opts = VerifyOptions {
        c_offset: if inject_fault { -0.1 } else { 0.0 },
    };
    let mut instances = Vec::with_capacity(specs.len());
    for spec in specs {
        let inst = BoundInstance::generate(&spec)?;
        let theorem1 = verify_theorem1_with(&inst.class, &inst.source, &inst.target, opts)?;
        let rho = verify_rho_bound_with(&inst.class, &inst.source, &inst.target, &inst.pseudo, opts)?;
        instances.push(InstanceResult {
            hypotheses: inst.class.len(),
            spec,
            theorem1,
            rho,
        });
    }
    let total_violations = instances
        .iter()
        .map(|r| r.theorem1.violations.len() + r.rho.violations.len())
        .sum();
    let report = BoundCheckReport {
        schema: BOUND_SCHEMA.into(),
        schema_version: BOUND_SCHEMA_VERSION,
        fault_injected: inject_fault,
        total_violations,
        instances,
    };
    write_bound_csv(&report, &cfg.output_dir.join("bounds.csv"))?;
    let path = cfg.output_dir.join("report.json");
    let json = serde_json::to_vec_pretty(&report).map_err(tritrain::Error::from)?;
    fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;

    println!(
        "{} instances checked, {} violations",
        report.instances.len(),
        report.total_violations
    );
    if total_violations > 0 {
        return Err(CliError::Verification(format!(
            "{total_violations} bound violations, see {}",
            path.display()
        )));
    }
    Ok(())
}

fn write_bound_csv(report: &BoundCheckReport, path: &Path) -> Result<()> {
    let mut out = String::from("instance,kind,n_source,n_target,hypotheses,d_hdh,C,C_prime,rho,violations\n");
    for (i, r) in report.instances.iter().enumerate() {
        let kind = serde_json::to_value(r.spec.kind).map_err(tritrain::Error::from)?;
        out.push_str(&format!(
            "{i},{},{},{},{},{},{},{},{},{}\n",
            kind.as_str().unwrap_or_default(),
            r.spec.n_source,
            r.spec.n_target,
            r.hypotheses,
            r.theorem1.d_hdh,
            r.theorem1.c,
            r.rho.c_prime.unwrap_or(f64::NAN),
            r.rho.rho.unwrap_or(f64::NAN),
            r.theorem1.violations.len() + r.rho.violations.len()
        ));
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}
