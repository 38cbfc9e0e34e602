//! All comparisons are done on integer numerators over the common
//! denominator `|S|·|T|`, so the checks carry no rounding slack.

use serde::{Deserialize, Serialize};

use super::hypothesis::HypothesisClass;
use crate::datagen::LabeledSet;
use crate::error::{Error, Result};
use crate::nnlib::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRisks {
    pub r_s: f64,
    pub r_t: f64,
    pub r_tl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// `None` for class-level checks.
    pub hypothesis: Option<usize>,
    pub check: String,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub risks: Vec<HypothesisRisks>,
    pub d_hdh: f64,
    pub h_star: usize,
    pub c: f64,
    pub c_prime: Option<f64>,
    pub rho: Option<f64>,
    pub violations: Vec<Violation>,
}

/// Test hook for negative controls.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VerifyOptions {
    /// Added to the ideal joint error before checking.
    pub c_offset: f64,
}

fn check_nonempty(x: &Matrix, what: &str) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Input(format!("{what} sample set is empty")));
    }
    Ok(())
}

fn check_binary(set: &LabeledSet, what: &'static str) -> Result<()> {
    check_nonempty(&set.x, what)?;
    if set.y.len() != set.len() {
        return Err(Error::dim(what, set.len(), set.y.len()));
    }
    if let Some(&y) = set.y.iter().find(|&&y| y > 1) {
        return Err(Error::Input(format!("{what} has label {y}; stump classes are binary")));
    }
    Ok(())
}

fn error_counts(table: &[Vec<usize>], y: &[usize]) -> Vec<i128> {
    table
        .iter()
        .map(|p| p.iter().zip(y).filter(|(a, b)| a != b).count() as i128)
        .collect()
}

/// `max |dis_S·|T| − dis_T·|S||` over all ordered pairs.
fn hdh_numerator(ps: &[Vec<usize>], pt: &[Vec<usize>], ms: i128, mt: i128) -> i128 {
    let dis = |a: &[usize], b: &[usize]| a.iter().zip(b).filter(|(x, y)| x != y).count() as i128;
    let mut best = 0;
    for i in 0..ps.len() {
        for j in (i + 1)..ps.len() {
            let gap = (dis(&ps[i], &ps[j]) * mt - dis(&pt[i], &pt[j]) * ms).abs();
            best = best.max(gap);
        }
    }
    best
}

fn argmin_first(v: &[i128]) -> (usize, i128) {
    let mut best = (0, v[0]);
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < best.1 {
            best = (i, x);
        }
    }
    best
}

/// `2·sup_{h,h'} |P_S(h ≠ h') − P_T(h ≠ h')|` over the empirical samples.
pub fn empirical_hdh_distance(h: &HypothesisClass, s_x: &Matrix, t_x: &Matrix) -> Result<f64> {
    check_nonempty(s_x, "source")?;
    check_nonempty(t_x, "target")?;
    let (ms, mt) = (s_x.nrows() as i128, t_x.nrows() as i128);
    let num = hdh_numerator(&h.prediction_table(s_x)?, &h.prediction_table(t_x)?, ms, mt);
    Ok(2.0 * num as f64 / (ms * mt) as f64)
}

/// Index of `h* = argmin R_S(h) + R_T(h)` and its joint error `C`.
pub fn ideal_joint_error(h: &HypothesisClass, s: &LabeledSet, t: &LabeledSet) -> Result<(usize, f64)> {
    check_binary(s, "source")?;
    check_binary(t, "target")?;
    let (ms, mt) = (s.len() as i128, t.len() as i128);
    let es = error_counts(&h.prediction_table(&s.x)?, &s.y);
    let et = error_counts(&h.prediction_table(&t.x)?, &t.y);
    let joint: Vec<i128> = es.iter().zip(&et).map(|(a, b)| a * mt + b * ms).collect();
    let (i, c) = argmin_first(&joint);
    Ok((i, c as f64 / (ms * mt) as f64))
}

struct Core {
    ms: i128,
    mt: i128,
    es: Vec<i128>,
    et: Vec<i128>,
    d_num: i128,
    h_star: usize,
    c_num: i128,
}

impl Core {
    fn new(h: &HypothesisClass, s: &LabeledSet, t: &LabeledSet, opts: VerifyOptions) -> Result<Self> {
        check_binary(s, "source")?;
        check_binary(t, "target")?;
        let (ms, mt) = (s.len() as i128, t.len() as i128);
        let ps = h.prediction_table(&s.x)?;
        let pt = h.prediction_table(&t.x)?;
        let es = error_counts(&ps, &s.y);
        let et = error_counts(&pt, &t.y);
        let joint: Vec<i128> = es.iter().zip(&et).map(|(a, b)| a * mt + b * ms).collect();
        let (h_star, c_num) = argmin_first(&joint);
        // rounded away from zero so a nonzero offset never vanishes
        let raw = opts.c_offset * (ms * mt) as f64;
        let offset = if raw < 0.0 { raw.floor() } else { raw.ceil() } as i128;
        Ok(Self {
            ms,
            mt,
            es,
            et,
            d_num: hdh_numerator(&ps, &pt, ms, mt),
            h_star,
            c_num: c_num + offset,
        })
    }

    fn den(&self) -> f64 {
        (self.ms * self.mt) as f64
    }

    fn report(&self, r_tl: Option<&[i128]>) -> BoundReport {
        let risks = (0..self.es.len())
            .map(|i| HypothesisRisks {
                r_s: self.es[i] as f64 / self.ms as f64,
                r_t: self.et[i] as f64 / self.mt as f64,
                r_tl: r_tl.map(|e| e[i] as f64 / self.mt as f64),
            })
            .collect();
        BoundReport {
            risks,
            d_hdh: 2.0 * self.d_num as f64 / self.den(),
            h_star: self.h_star,
            c: self.c_num as f64 / self.den(),
            c_prime: None,
            rho: None,
            violations: Vec::new(),
        }
    }
}

/// Checks `R_T(h) ≤ R_S(h) + ½·d_ℋΔℋ + C` for every `h`.
pub fn verify_theorem1(h: &HypothesisClass, s: &LabeledSet, t: &LabeledSet) -> Result<BoundReport> {
    verify_theorem1_with(h, s, t, VerifyOptions::default())
}

pub fn verify_theorem1_with(
    h: &HypothesisClass,
    s: &LabeledSet,
    t: &LabeledSet,
    opts: VerifyOptions,
) -> Result<BoundReport> {
    let core = Core::new(h, s, t, opts)?;
    let mut report = core.report(None);
    let den = core.den();
    for i in 0..core.es.len() {
        // everything scaled by |S|·|T|
        let lhs = core.et[i] * core.ms;
        let rhs = core.es[i] * core.mt + core.d_num + core.c_num;
        if lhs > rhs {
            report.violations.push(Violation {
                hypothesis: Some(i),
                check: "R_T(h) <= R_S(h) + d_hdh/2 + C".into(),
                lhs: lhs as f64 / den,
                rhs: rhs as f64 / den,
            });
        }
    }
    Ok(report)
}

/// Checks `|R_Tl(h) − R_T(h)| ≤ ρ`, `R_S(h)+R_T(h) ≤ R_S(h)+R_Tl(h)+ρ` for
/// every `h`, and `C ≤ C' + ρ`, where `ρ` is the false-label fraction of
/// `t_pseudo` against `t`.
pub fn verify_rho_bound(
    h: &HypothesisClass,
    s: &LabeledSet,
    t: &LabeledSet,
    t_pseudo: &LabeledSet,
) -> Result<BoundReport> {
    verify_rho_bound_with(h, s, t, t_pseudo, VerifyOptions::default())
}

pub fn verify_rho_bound_with(
    h: &HypothesisClass,
    s: &LabeledSet,
    t: &LabeledSet,
    t_pseudo: &LabeledSet,
    opts: VerifyOptions,
) -> Result<BoundReport> {
    check_binary(t_pseudo, "pseudo-labeled target")?;
    if t_pseudo.x != t.x {
        return Err(Error::Input(
            "pseudo-labeled set must contain exactly the target sample points".into(),
        ));
    }
    let core = Core::new(h, s, t, opts)?;
    let (ms, mt, den) = (core.ms, core.mt, core.den());
    let etl = error_counts(&h.prediction_table(&t_pseudo.x)?, &t_pseudo.y);
    let flips = t.y.iter().zip(&t_pseudo.y).filter(|(a, b)| a != b).count() as i128;
    let joint_l: Vec<i128> = core.es.iter().zip(&etl).map(|(a, b)| a * mt + b * ms).collect();
    let (_, c_prime_num) = argmin_first(&joint_l);

    let mut report = core.report(Some(&etl));
    report.c_prime = Some(c_prime_num as f64 / den);
    report.rho = Some(flips as f64 / mt as f64);
    for (i, ((&es, &et), &el)) in core.es.iter().zip(&core.et).zip(&etl).enumerate() {
        let gap = (el - et).abs();
        if gap > flips {
            report.violations.push(Violation {
                hypothesis: Some(i),
                check: "|R_Tl(h) - R_T(h)| <= rho".into(),
                lhs: gap as f64 / mt as f64,
                rhs: flips as f64 / mt as f64,
            });
        }
        let lhs = es * mt + et * ms;
        let rhs = es * mt + el * ms + flips * ms;
        if lhs > rhs {
            report.violations.push(Violation {
                hypothesis: Some(i),
                check: "R_S(h) + R_T(h) <= R_S(h) + R_Tl(h) + rho".into(),
                lhs: lhs as f64 / den,
                rhs: rhs as f64 / den,
            });
        }
    }
    let rhs = c_prime_num + flips * ms;
    if core.c_num > rhs {
        report.violations.push(Violation {
            hypothesis: None,
            check: "C <= C' + rho".into(),
            lhs: core.c_num as f64 / den,
            rhs: rhs as f64 / den,
        });
    }
    Ok(report)
}
