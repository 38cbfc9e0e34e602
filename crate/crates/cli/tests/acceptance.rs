//! One line per acceptance criterion. Exits nonzero if any criterion fails.
//! Set `TRITRAIN_AMAZON_DIR` to a directory holding `books_train.svmlight`,
//! `dvd_train.svmlight` and `dvd_test.svmlight` to enable the Amazon check.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tritrain::analysis::{
    a_distance, emit_report, read_metrics_csv, verify_rho_bound, verify_rho_bound_with, verify_theorem1,
    verify_theorem1_with, BoundInstance, InstanceKind, InstanceSpec, VerifyOptions,
};
use tritrain::datagen::{generate, ShiftSpec};
use tritrain::gradsuite::gradient_suite;
use tritrain::labeler::{assign_pseudo_labels, candidate_count, LabelingConfig};
use tritrain::trainer::{run, Evaluator, StepMetrics, TrainConfig};
use tritrain::trinet::{BranchOutput, NetConfig};

const GRAD_TOL: f64 = 1e-4;
const GRAD_CASES: usize = 20;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const BOUND_INSTANCES: usize = 100;
const BOUND_BUDGET: Duration = Duration::from_secs(60);
const LABELER_PAIRS: usize = 1000;
const SCHEDULE_SIZES: [usize; 3] = [1000, 59001, 73257];
const BENCH_SEEDS: u64 = 10;
const BENCH_BUDGET: Duration = Duration::from_secs(300);
const MIN_GAIN: f64 = 0.05;
const MAX_BRANCH_SPREAD: f64 = 0.05;
const MIN_GOOD_SEEDS: usize = 8;
const ADIST_SAME_MAX: f64 = 0.2;
const ADIST_FAR_MIN: f64 = 1.8;
const AMAZON_TARGET: f64 = 0.807;
const AMAZON_TOL: f64 = 0.03;
const AMAZON_REPEATS: u64 = 10;
const AMAZON_BUDGET: Duration = Duration::from_secs(600);

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

impl Outcome {
    fn judged(pass: bool, detail: String) -> Self {
        Self { pass: Some(pass), detail }
    }

    fn skipped(detail: String) -> Self {
        Self { pass: None, detail }
    }
}

fn report(name: &str, o: &Outcome) {
    let tag = match o.pass {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "SKIP",
    };
    println!("[{tag}] {name}: {}", o.detail);
}

fn gradient_criterion() -> Outcome {
    let start = Instant::now();
    let results = gradient_suite(GRAD_CASES, 7).expect("gradient suite runs");
    let elapsed = start.elapsed();
    let worst = results.iter().fold(0.0f64, |m, r| m.max(r.max_rel_err));
    let bad: Vec<_> = results.iter().filter(|r| !(r.max_rel_err < GRAD_TOL)).map(|r| r.name).collect();
    Outcome::judged(
        bad.is_empty() && elapsed < GRAD_BUDGET,
        format!(
            "{} gradients x {GRAD_CASES} shapes, worst relative error {worst:.2e} (tol {GRAD_TOL:.0e}), failing {bad:?}, {:.1}s",
            results.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn bound_criterion() -> Outcome {
    let start = Instant::now();
    let specs = InstanceSpec::suite(BOUND_INSTANCES, 50, 200, 2024).expect("suite caps are valid");
    let mut violations = 0;
    let mut fault_hits = 0;
    let mut flips = 0;
    let mut max_h = 0;
    let mut max_n = 0;
    for spec in &specs {
        let inst = BoundInstance::generate(spec).expect("instance");
        flips += usize::from(spec.kind == InstanceKind::LabelFlip);
        max_h = max_h.max(inst.class.len());
        max_n = max_n.max(spec.n_source.max(spec.n_target));
        let (s, t, p) = (&inst.source, &inst.target, &inst.pseudo);
        violations += verify_theorem1(&inst.class, s, t).unwrap().violations.len();
        violations += verify_rho_bound(&inst.class, s, t, p).unwrap().violations.len();
        let fault = VerifyOptions { c_offset: -0.1 };
        fault_hits += verify_theorem1_with(&inst.class, s, t, fault).unwrap().violations.len();
        fault_hits += verify_rho_bound_with(&inst.class, s, t, p, fault).unwrap().violations.len();
    }
    let elapsed = start.elapsed();
    Outcome::judged(
        violations == 0 && fault_hits > 0 && flips > 0 && elapsed < BOUND_BUDGET,
        format!(
            "{} instances ({flips} label-flip, <= {max_n} samples, <= {max_h} hypotheses): {violations} violations; \
             fault-injected control: {fault_hits} violations; {:.1}s",
            specs.len(),
            elapsed.as_secs_f64()
        ),
    )
}

/// Agreement rule recomputed from probability rows only.
fn brute_labels(p1: &Array2<f64>, p2: &Array2<f64>, threshold: f64) -> Vec<(usize, usize)> {
    let top = |row: ndarray::ArrayView1<f64>| {
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        (best, row[best])
    };
    (0..p1.nrows())
        .filter_map(|i| {
            let (c1, m1) = top(p1.row(i));
            let (c2, m2) = top(p2.row(i));
            (c1 == c2 && (m1 > threshold || m2 > threshold)).then_some((i, c1))
        })
        .collect()
}

fn expected_candidates(k: usize, n: usize) -> usize {
    if k == 0 {
        5000
    } else {
        (k * n / 20).min(40000).min(n)
    }
}

fn labeler_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut mismatches = 0;
    let mut monotone_breaks = 0;
    for _ in 0..LABELER_PAIRS {
        let n = rng.random_range(1..40);
        let k = rng.random_range(2..8);
        let scale = rng.random_range(0.1..8.0);
        let mut logits = || Array2::from_shape_simple_fn((n, k), || scale * rng.random_range(-1.0..1.0));
        let (l1, l2) = (logits(), logits());
        let p1 = BranchOutput::from_logits(&l1);
        let p2 = BranchOutput::from_logits(&l2);
        let t = rng.random_range(0.0..1.0);
        let got: Vec<_> = assign_pseudo_labels(&p1, &p2, t)
            .unwrap()
            .iter()
            .map(|p| (p.target_index, p.label))
            .collect();
        if got != brute_labels(&p1.probs, &p2.probs, t) {
            mismatches += 1;
        }
        let t_hi = rng.random_range(t..=1.0);
        let strict = assign_pseudo_labels(&p1, &p2, t_hi).unwrap();
        let loose = assign_pseudo_labels(&p1, &p2, t).unwrap();
        if !strict.iter().all(|s| loose.contains(s)) {
            monotone_breaks += 1;
        }
    }
    let cfg = LabelingConfig::default();
    let mut schedule_errors = 0;
    for n in SCHEDULE_SIZES {
        for k in 0..=40 {
            if candidate_count(k, n, &cfg) != expected_candidates(k, n) {
                schedule_errors += 1;
            }
        }
    }
    Outcome::judged(
        mismatches == 0 && monotone_breaks == 0 && schedule_errors == 0,
        format!(
            "{LABELER_PAIRS} pairs: {mismatches} mismatches, {monotone_breaks} threshold-monotonicity breaks; \
             schedule k in [0, 40] x n in {SCHEDULE_SIZES:?}: {schedule_errors} wrong counts"
        ),
    )
}

struct SeedRun {
    history: Vec<StepMetrics>,
    csv_history: Vec<StepMetrics>,
    adist_raw: f64,
    adist_features: f64,
}

fn benchmark(seed: u64, scratch: &Path) -> SeedRun {
    let d = generate(&ShiftSpec::two_moons(500, 500, 30.0, seed)).unwrap();
    let eval = Evaluator::new(d.target_eval_set().unwrap(), d.target_labels.clone()).unwrap();
    let net = NetConfig {
        input_dim: 2,
        f_hidden: vec![16],
        use_bn: true,
        num_classes: 2,
        lambda: 0.01,
        ..NetConfig::default()
    };
    let cfg = TrainConfig {
        steps_k: 20,
        pretrain_iters: Some(500),
        labeling: LabelingConfig {
            threshold: 0.9,
            n_init: 25,
            ..LabelingConfig::default()
        },
        seed,
        ..TrainConfig::default()
    };
    let out = run(&d.source, &d.target, &eval, &net, &cfg).unwrap();
    let dir = scratch.join(format!("seed{seed}"));
    std::fs::create_dir_all(&dir).unwrap();
    let paths = emit_report(&out.history, None, None, &dir).unwrap();
    let fs = out.net().features(&d.source.x).unwrap();
    let ft = out.net().features(&d.target.x).unwrap();
    SeedRun {
        csv_history: read_metrics_csv(&paths.metrics).unwrap(),
        history: out.history,
        adist_raw: a_distance(&d.source.x, &d.target.x, 0.5).unwrap(),
        adist_features: a_distance(&fs, &ft, 0.5).unwrap(),
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn gain_criterion(runs: &[SeedRun], elapsed: Duration) -> Outcome {
    let last = |r: &SeedRun| r.history.last().unwrap().clone();
    let base = mean(runs.iter().map(|r| r.history[0].acc_ft));
    let ft = mean(runs.iter().map(|r| last(r).acc_ft));
    let f1 = mean(runs.iter().map(|r| last(r).acc_f1));
    let f2 = mean(runs.iter().map(|r| last(r).acc_f2));
    let spread = f1.max(f2).max(ft) - f1.min(f2).min(ft);
    Outcome::judged(
        ft - base >= MIN_GAIN && spread <= MAX_BRANCH_SPREAD && elapsed < BENCH_BUDGET,
        format!(
            "mean over {} seeds: source-only ft {base:.4} -> final ft {ft:.4} (gain {:+.4}, need >= {MIN_GAIN}); \
             final f1 {f1:.4} f2 {f2:.4} ft {ft:.4} (spread {spread:.4}, need <= {MAX_BRANCH_SPREAD}); {:.0}s",
            runs.len(),
            ft - base,
            elapsed.as_secs_f64()
        ),
    )
}

fn signature_criterion(runs: &[SeedRun]) -> Outcome {
    let cap = LabelingConfig::default().cap;
    let mut good = 0;
    let mut notes = vec![];
    for (seed, r) in runs.iter().enumerate() {
        let h = &r.csv_history;
        let grows = h.windows(2).all(|w| w[1].n_pseudo >= w[0].n_pseudo || w[0].n_pseudo >= cap);
        let holds = h.last().unwrap().acc_ft >= h[1].acc_ft;
        if grows && holds {
            good += 1;
        } else {
            notes.push(format!("seed {seed}: non-decreasing={grows} final>=step1={holds}"));
        }
    }
    Outcome::judged(
        good >= MIN_GOOD_SEEDS,
        format!("{good}/{} seeds show growing |T_l| and final ft >= step-1 ft (need {MIN_GOOD_SEEDS}) {notes:?}", runs.len()),
    )
}

fn adist_criterion(runs: &[SeedRun]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut gauss = |n: usize, c: f64| {
        Array2::from_shape_simple_fn((n, 2), || c + rng.sample::<f64, _>(StandardNormal))
    };
    let same = gauss(400, 0.0);
    let d_same = a_distance(&same, &same, 0.5).unwrap();
    let (far_s, far_t) = (gauss(400, -10.0), gauss(400, 10.0));
    let d_far = a_distance(&far_s, &far_t, 0.5).unwrap();
    let reduced = runs.iter().filter(|r| r.adist_features <= r.adist_raw).count();
    let pairs: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.2}/{:.2}", r.adist_raw, r.adist_features))
        .collect();
    Outcome::judged(
        d_same < ADIST_SAME_MAX && d_far > ADIST_FAR_MIN && reduced >= MIN_GOOD_SEEDS,
        format!(
            "identical {d_same:.3} (< {ADIST_SAME_MAX}), separated {d_far:.3} (> {ADIST_FAR_MIN}), \
             features <= raw in {reduced}/{} seeds (need {MIN_GOOD_SEEDS}); raw/features per seed {pairs:?}",
            runs.len()
        ),
    )
}

fn cli() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tritrain"));
    cmd.stdout(std::process::Stdio::null());
    cmd
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn determinism_criterion(scratch: &Path) -> Outcome {
    let first = scratch.join("det_a");
    let second = scratch.join("det_b");
    let status = cli()
        .args(["train", "--config"])
        .arg(configs_dir().join("moons.toml"))
        .arg("--output-dir")
        .arg(&first)
        .status()
        .unwrap();
    if !status.success() {
        return Outcome::judged(false, format!("first run exited with {status}"));
    }
    let status = cli()
        .args(["train", "--config"])
        .arg(first.join("manifest.toml"))
        .arg("--output-dir")
        .arg(&second)
        .status()
        .unwrap();
    if !status.success() {
        return Outcome::judged(false, format!("manifest re-run exited with {status}"));
    }
    let a = std::fs::read(first.join("metrics.csv")).unwrap();
    let b = std::fs::read(second.join("metrics.csv")).unwrap();
    Outcome::judged(
        a == b && !a.is_empty(),
        format!("manifest re-run metrics.csv byte-identical: {} ({} bytes)", a == b, a.len()),
    )
}

fn amazon_criterion(scratch: &Path) -> Outcome {
    let Some(dir) = std::env::var_os("TRITRAIN_AMAZON_DIR").map(PathBuf::from) else {
        return Outcome::skipped("TRITRAIN_AMAZON_DIR not set".into());
    };
    let files = ["books_train.svmlight", "dvd_train.svmlight", "dvd_test.svmlight"];
    if let Some(missing) = files.iter().find(|f| !dir.join(f).exists()) {
        return Outcome::skipped(format!("{missing} not found in {}", dir.display()));
    }
    let start = Instant::now();
    let mut accs = vec![];
    for seed in 0..AMAZON_REPEATS {
        let out = scratch.join(format!("amazon{seed}"));
        let status = cli()
            .args(["train", "--config"])
            .arg(configs_dir().join("amazon_books_dvd.toml"))
            .arg("--seed")
            .arg(seed.to_string())
            .arg("--output-dir")
            .arg(&out)
            .arg("--set")
            .arg(format!("data.source_path={:?}", dir.join(files[0])))
            .arg("--set")
            .arg(format!("data.target_path={:?}", dir.join(files[1])))
            .arg("--set")
            .arg(format!("data.test_path={:?}", dir.join(files[2])))
            .status()
            .unwrap();
        if !status.success() {
            return Outcome::judged(false, format!("seed {seed} exited with {status}"));
        }
        let history = read_metrics_csv(out.join("metrics.csv")).unwrap();
        accs.push(history.last().unwrap().acc_ft);
    }
    let m = mean(accs.iter().copied());
    let elapsed = start.elapsed();
    Outcome::judged(
        (m - AMAZON_TARGET).abs() <= AMAZON_TOL && elapsed < AMAZON_BUDGET,
        format!(
            "books->dvd mean ft accuracy {m:.4} over {AMAZON_REPEATS} repeats (target {AMAZON_TARGET} +/- {AMAZON_TOL}); {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn main() {
    // libtest-style flags from `cargo test` are ignored; this target always runs everything.
    let scratch = tempfile::tempdir().unwrap();
    let mut outcomes = vec![];
    let mut record = |name: &str, o: Outcome| {
        report(name, &o);
        outcomes.push(o.pass);
    };

    record("gradient suite", gradient_criterion());
    record("bound suite", bound_criterion());
    record("labeler oracle", labeler_criterion());

    let start = Instant::now();
    let runs: Vec<SeedRun> = (0..BENCH_SEEDS).map(|s| benchmark(s, scratch.path())).collect();
    let bench_time = start.elapsed();
    record("adaptation gain", gain_criterion(&runs, bench_time));
    record("labeling signature", signature_criterion(&runs));
    record("a-distance", adist_criterion(&runs));
    record("determinism", determinism_criterion(scratch.path()));
    record("amazon books->dvd (optional)", amazon_criterion(scratch.path()));

    let failed = outcomes.iter().filter(|p| **p == Some(false)).count();
    let passed = outcomes.iter().filter(|p| **p == Some(true)).count();
    let skipped = outcomes.iter().filter(|p| p.is_none()).count();
    println!("acceptance: {passed} passed, {failed} failed, {skipped} skipped");
    if failed > 0 {
        std::process::exit(1);
    }
}
