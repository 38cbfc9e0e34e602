use std::path::Path;

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::nnlib::Matrix;

/// CSV with header `x0,...,x{d-1},label`.
pub fn write_labeled_csv(path: impl AsRef<Path>, x: &Matrix, labels: &[usize]) -> Result<()> {
    if x.nrows() != labels.len() {
        return Err(Error::dim("write_labeled_csv", x.nrows(), labels.len()));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..x.ncols()).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (row, y) in x.rows().into_iter().zip(labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labeled_csv(path: impl AsRef<Path>) -> Result<LabeledSet> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().next_back() != Some("label") {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "last column must be 'label'".into(),
        });
    }
    let d = header.len() - 1;
    let mut data = Vec::new();
    let mut y = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if rec.len() != d + 1 {
            return Err(bad(format!("expected {} fields, got {}", d + 1, rec.len())));
        }
        for f in rec.iter().take(d) {
            let v: f64 = f.parse().map_err(|_| bad(format!("bad number '{f}'")))?;
            if !v.is_finite() {
                return Err(bad(format!("non-finite value '{f}'")));
            }
            data.push(v);
        }
        let label = &rec[d];
        y.push(label.parse().map_err(|_| bad(format!("bad label '{label}'")))?);
    }
    let x = Matrix::from_shape_vec((y.len(), d), data).expect("row lengths checked");
    Ok(LabeledSet { x, y })
}
