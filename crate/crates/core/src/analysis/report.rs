//! `metrics.csv`: one row per step, columns in [`METRIC_COLUMNS`] order,
//! empty cells for absent optional values.
//! `report.json`: `{schema, schema_version, steps, final, d_a?, d_a_raw?,
//! d_hdh?, C?, C_prime?, rho?, violations?, bound?}`. `d_a` is measured on
//! the shared features, `d_a_raw` on the inputs.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::bounds::BoundReport;
use crate::error::{Error, Result};
use crate::trainer::StepMetrics;

pub const REPORT_SCHEMA: &str = "tritrain-report";
pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const METRIC_COLUMNS: [&str; 10] = [
    "step",
    "acc_f1",
    "acc_f2",
    "acc_ft",
    "labeling_acc",
    "n_pseudo",
    "n_candidates",
    "mean_e",
    "mean_penalty",
    "mean_target_loss",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ADistances {
    pub raw: f64,
    pub features: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub metrics: PathBuf,
    pub summary: PathBuf,
}

pub fn write_metrics_csv(history: &[StepMetrics], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(METRIC_COLUMNS)?;
    for row in history {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<StepMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != METRIC_COLUMNS {
        return Err(Error::Input(format!("unexpected metrics header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Writes `metrics.csv` and `report.json` into `dir`.
pub fn emit_report(
    history: &[StepMetrics],
    bound: Option<&BoundReport>,
    d_a: Option<ADistances>,
    dir: impl AsRef<Path>,
) -> Result<ReportPaths> {
    let dir = dir.as_ref();
    let paths = ReportPaths {
        metrics: dir.join("metrics.csv"),
        summary: dir.join("report.json"),
    };
    write_metrics_csv(history, &paths.metrics)?;

    let mut doc = Map::new();
    doc.insert("schema".into(), json!(REPORT_SCHEMA));
    doc.insert("schema_version".into(), json!(REPORT_SCHEMA_VERSION));
    doc.insert("steps".into(), json!(history.len()));
    doc.insert("final".into(), serde_json::to_value(history.last())?);
    if let Some(d) = d_a {
        doc.insert("d_a".into(), json!(d.features));
        doc.insert("d_a_raw".into(), json!(d.raw));
    }
    if let Some(b) = bound {
        doc.insert("d_hdh".into(), json!(b.d_hdh));
        doc.insert("C".into(), json!(b.c));
        doc.insert("C_prime".into(), json!(b.c_prime));
        doc.insert("rho".into(), json!(b.rho));
        doc.insert("violations".into(), json!(b.violations.len()));
        doc.insert("bound".into(), serde_json::to_value(b)?);
    }
    let mut f = File::create(&paths.summary)?;
    serde_json::to_writer_pretty(&mut f, &Value::Object(doc))?;
    f.write_all(b"\n")?;
    Ok(paths)
}
